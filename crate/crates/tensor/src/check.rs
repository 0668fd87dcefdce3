//! Central-difference gradient verification.

use crate::error::Result;
use crate::params::{GradStore, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}

/// Compare reverse-mode gradients of a scalar function of `inputs` against
/// central differences. Returns the largest
/// `|analytic - numeric| / max(1e-8, |numeric|)` over every input element.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| tape.leaf(x.clone(), true))
        .collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out, None)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; x.len()])
        })
        .collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &g) in grads.iter().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(g, numeric));
        }
    }
    Ok(worst)
}

/// Same check for a loss built on a parameter store, probing only the
/// listed `(parameter, flat index)` entries.
pub fn finite_diff_check_params<F>(
    store: &ParamStore,
    f: F,
    probes: &[(ParamId, usize)],
    eps: f64,
) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>) -> Result<Var>,
{
    let mut grads = GradStore::zeros_like(store);
    {
        let mut tape = Tape::with_params(store);
        let out = f(&mut tape)?;
        tape.backward(out, Some(&mut grads))?;
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::with_params(s);
        let out = f(&mut tape)?;
        Ok(tape.value(out).item())
    };
    let mut work = store.clone();
    let mut worst = 0.0f64;
    for &(id, j) in probes {
        let orig = store.get(id).data()[j];
        work.get_mut(id).data_mut()[j] = orig + eps;
        let plus = eval(&work)?;
        work.get_mut(id).data_mut()[j] = orig - eps;
        let minus = eval(&work)?;
        work.get_mut(id).data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(rel_err(grads.get(id)[j], numeric));
    }
    Ok(worst)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, lo, hi, &mut rng)
}

/// Contract every output against fixed random weights so that no gradient
/// entry collapses to a trivial constant.
fn weighted_sum(t: &mut Tape<'_>, y: Var, seed: u64) -> Result<Var> {
    let w = t.constant(uniform(t.shape(y), -1.0, 1.0, seed ^ 0xABCD));
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

/// Finite-difference check of every differentiable primitive on toy shapes.
/// Returns `(name, max relative error)` per case. Dropout is left out: its
/// mask is not a smooth function of the input.
pub fn primitive_suite(eps: f64) -> Result<Vec<(&'static str, f64)>> {
    fn case<F>(out: &mut Vec<(&'static str, f64)>, name: &'static str, inputs: &[Tensor], eps: f64, f: F) -> Result<()>
    where
        F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
    {
        out.push((name, finite_diff_check(f, inputs, eps)?));
        Ok(())
    }
    let r = |shape: &[usize], seed| uniform(shape, -1.0, 1.0, seed);
    let pos = |shape: &[usize], seed| uniform(shape, 0.5, 2.0, seed);
    let mut out = Vec::new();
    let o = &mut out;

    let (a, b, c) = (r(&[3, 4], 2), pos(&[4], 3), pos(&[3, 1], 4));
    case(o, "add", &[a.clone(), b.clone()], eps, |t, x| {
        let y = t.add(x[0], x[1])?;
        weighted_sum(t, y, 5)
    })?;
    case(o, "sub", &[a.clone(), c.clone()], eps, |t, x| {
        let y = t.sub(x[0], x[1])?;
        weighted_sum(t, y, 6)
    })?;
    case(o, "mul", &[a.clone(), b], eps, |t, x| {
        let y = t.mul(x[0], x[1])?;
        weighted_sum(t, y, 7)
    })?;
    case(o, "div", &[a, c], eps, |t, x| {
        let y = t.div(x[0], x[1])?;
        weighted_sum(t, y, 8)
    })?;
    // inputs separated by a margin so the kink is never straddled
    let p = Tensor::new(vec![4], vec![0.9, -0.3, 0.2, -0.8])?;
    let q = Tensor::new(vec![4], vec![0.1, 0.4, -0.5, -0.2])?;
    case(o, "maximum", &[p.clone(), q.clone()], eps, |t, x| {
        let y = t.maximum(x[0], x[1])?;
        weighted_sum(t, y, 9)
    })?;
    case(o, "minimum", &[p, q], eps, |t, x| {
        let y = t.minimum(x[0], x[1])?;
        weighted_sum(t, y, 10)
    })?;

    let x = r(&[2, 5], 11);
    case(o, "exp", std::slice::from_ref(&x), eps, |t, v| {
        let y = t.exp(v[0]);
        weighted_sum(t, y, 12)
    })?;
    case(o, "log", &[pos(&[2, 5], 13)], eps, |t, v| {
        let y = t.log(v[0])?;
        weighted_sum(t, y, 14)
    })?;
    case(o, "tanh", std::slice::from_ref(&x), eps, |t, v| {
        let y = t.tanh(v[0]);
        weighted_sum(t, y, 15)
    })?;
    case(o, "sigmoid", std::slice::from_ref(&x), eps, |t, v| {
        let y = t.sigmoid(v[0]);
        weighted_sum(t, y, 18)
    })?;
    let away_from_zero = Tensor::new(vec![4], vec![0.5, -0.7, 1.2, -0.05])?;
    case(o, "relu", &[away_from_zero], eps, |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y, 16)
    })?;
    case(o, "scale", &[x], eps, |t, v| {
        let y = t.scale(v[0], -2.5);
        let y = t.add_scalar(y, 0.25);
        weighted_sum(t, y, 17)
    })?;

    case(o, "matmul", &[r(&[3, 4], 20), r(&[4, 2], 21)], eps, |t, x| {
        let y = t.matmul(x[0], x[1])?;
        weighted_sum(t, y, 22)
    })?;
    case(o, "transpose", &[r(&[3, 4], 23)], eps, |t, x| {
        let y = t.transpose(x[0])?;
        weighted_sum(t, y, 24)
    })?;
    case(o, "softmax", &[r(&[3, 5], 30)], eps, |t, x| {
        let y = t.softmax(x[0]);
        weighted_sum(t, y, 31)
    })?;
    case(o, "layer_norm", &[r(&[3, 6], 32)], eps, |t, x| {
        let y = t.layer_norm(x[0], 1e-5);
        weighted_sum(t, y, 33)
    })?;

    case(o, "embedding_gather", &[r(&[5, 3], 40)], eps, |t, x| {
        let y = t.embedding_gather(x[0], &[4, 0, 4, 2])?;
        weighted_sum(t, y, 41)
    })?;
    case(o, "concat", &[r(&[2, 3], 42), r(&[2, 2], 43)], eps, |t, x| {
        let y = t.concat(&[x[0], x[1]], 1)?;
        weighted_sum(t, y, 44)
    })?;
    case(o, "concat rows", &[r(&[2, 3], 45), r(&[1, 3], 46)], eps, |t, x| {
        let y = t.concat(&[x[0], x[1]], 0)?;
        weighted_sum(t, y, 47)
    })?;
    case(o, "slice", &[r(&[3, 5], 48)], eps, |t, x| {
        let a = t.slice(x[0], 1, 1, 4)?;
        let b = t.slice(a, 0, 0, 2)?;
        weighted_sum(t, b, 49)
    })?;
    case(o, "reshape", &[r(&[2, 6], 50)], eps, |t, x| {
        let y = t.reshape(x[0], &[3, 4])?;
        weighted_sum(t, y, 51)
    })?;

    case(o, "sum", &[r(&[4], 60)], eps, |t, x| {
        let y = t.mul(x[0], x[0])?;
        Ok(t.sum(y))
    })?;
    case(o, "mean", &[r(&[2, 3], 61)], eps, |t, x| {
        let y = t.exp(x[0]);
        Ok(t.mean(y))
    })?;
    case(o, "sum_last", &[r(&[3, 4], 62)], eps, |t, x| {
        let y = t.sum_last(x[0]);
        weighted_sum(t, y, 63)
    })?;
    Ok(out)
}
