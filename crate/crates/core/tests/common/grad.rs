//! Central finite differences through the whole encoder for every loss.

use layoutkit::doc::{BBox, OneDMode, TwoDMode};
use layoutkit::masking::{apply_box_masks, select_mpm_words, split_segments};
use layoutkit::model::{
    doc_classification_loss, giou_loss, mlm_loss, mpm_predict, token_classification_loss, total_loss, Model,
    ModelInput, RunMode,
};
use layoutkit::tokens::{encode_document, TokenSequence, MASK};
use layoutkit_tensor::{finite_diff_check, GradStore, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Denominator floor. A central difference of a loss near 1 carries about
/// 1e-11 of rounding noise, so gradients that are exactly zero (the key
/// bias under softmax shift invariance) need an absolute floor above that.
const FLOOR: f64 = 1e-6;

fn lift<T>(r: layoutkit::Result<T>) -> layoutkit_tensor::Result<T> {
    r.map_err(|e| TensorError::Invalid {
        op: "loss",
        msg: e.to_string(),
    })
}

pub struct Fixture {
    model: Model,
    /// MLM input with two masked words.
    mlm_input: ModelInput,
    mlm_labels: Vec<Option<u32>>,
    /// Box-split input with two pseudo boxes.
    mpm_input: ModelInput,
    mpm_positions: Vec<usize>,
    mpm_targets: Vec<BBox>,
    plain: ModelInput,
    word_labels: Vec<Option<usize>>,
}

pub fn fixture() -> Fixture {
    let doc = super::receipt();
    let vocab = super::vocab_of([&doc]);
    let seq = encode_document(&super::layout(&doc), &vocab, OneDMode::Local, TwoDMode::Segment, 64).unwrap();

    let mut masked = seq.clone();
    let mut mlm_labels = vec![None; seq.len()];
    for w in [0, 4] {
        for t in seq.words[w].tokens.clone() {
            mlm_labels[t] = Some(seq.tokens[t]);
            masked.tokens[t] = MASK;
        }
    }

    let sel = select_mpm_words(&seq, &[1, 3], 9).unwrap();
    let split: TokenSequence = split_segments(&seq, &sel).unwrap();
    let (boxed, box_labels) = apply_box_masks(&split, &sel).unwrap();
    let (mpm_positions, mpm_targets): (Vec<usize>, Vec<BBox>) = box_labels
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|b| (i, b)))
        .unzip();
    assert_eq!(mpm_positions.len(), 2);

    let word_labels = (0..seq.len())
        .map(|t| seq.word_index[t].filter(|&w| seq.words[w].tokens.start == t).map(|w| w % 3))
        .collect();

    let mut model = Model::new(super::tiny_config(vocab.len()), 4).unwrap();
    model.ensure_token_head(3, 5).unwrap();
    model.ensure_doc_head(4, 6).unwrap();
    Fixture {
        model,
        mlm_input: ModelInput::from_sequence(&masked),
        mlm_labels,
        mpm_input: ModelInput::from_sequence(&boxed),
        mpm_positions,
        mpm_targets,
        plain: ModelInput::from_sequence(&seq),
        word_labels,
    }
}

/// Probes every entry of the small parameters. Large embedding tables are
/// probed where the analytic gradient is non-zero plus every 61st entry, so
/// rows the input never touches are still sampled.
fn probes(m: &Model, grads: &GradStore) -> Vec<(ParamId, usize)> {
    m.params()
        .iter()
        .flat_map(|(id, _, t)| {
            let g = grads.get(id);
            (0..t.len())
                .filter(move |&j| t.len() <= 512 || g[j] != 0.0 || j % 61 == 0)
                .map(move |j| (id, j))
        })
        .collect()
}

pub fn mlm(f: &Fixture, tape: &mut Tape<'_>) -> layoutkit::Result<Var> {
    let h = f.model.encode(tape, &f.mlm_input, RunMode::Eval)?;
    mlm_loss(tape, &f.model, h, &f.mlm_labels)
}

pub fn mpm(f: &Fixture, tape: &mut Tape<'_>) -> layoutkit::Result<Var> {
    let h = f.model.encode(tape, &f.mpm_input, RunMode::Eval)?;
    let pred = mpm_predict(tape, &f.model, h, &f.mpm_positions)?;
    giou_loss(tape, pred, &f.mpm_targets)
}

fn value(store: &ParamStore, loss: &impl for<'t> Fn(&mut Tape<'t>) -> layoutkit::Result<Var>) -> f64 {
    let mut tape = Tape::with_params(store);
    let out = loss(&mut tape).unwrap();
    tape.value(out).item()
}

pub struct GradReport {
    pub probes: usize,
    pub max_rel_err: f64,
    /// Parameter entry with the largest error.
    pub worst_at: String,
}

/// Compare analytic parameter gradients of `loss` against central
/// differences. Errors when a softmax-invariant key bias picks up gradient.
pub fn check(name: &str, f: &Fixture, loss: impl for<'t> Fn(&mut Tape<'t>) -> layoutkit::Result<Var>) -> Result<GradReport, String> {
    let store = f.model.params();
    let mut grads = GradStore::zeros_like(store);
    {
        let mut tape = Tape::with_params(store);
        let out = loss(&mut tape).map_err(|e| format!("{name}: {e}"))?;
        tape.backward(out, Some(&mut grads)).map_err(|e| format!("{name}: {e}"))?;
    }
    let probes = probes(&f.model, &grads);
    let mut work = store.clone();
    let mut worst = (0.0f64, String::new());
    for &(id, j) in &probes {
        let orig = store.get(id).data()[j];
        work.get_mut(id).data_mut()[j] = orig + EPS;
        let plus = value(&work, &loss);
        work.get_mut(id).data_mut()[j] = orig - EPS;
        let minus = value(&work, &loss);
        work.get_mut(id).data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * EPS);
        let analytic = grads.get(id)[j];
        let err = (analytic - numeric).abs() / numeric.abs().max(FLOOR);
        if err > worst.0 {
            worst = (err, format!("{}[{j}] analytic {analytic:.6e} numeric {numeric:.6e}", store.name(id)));
        }
    }
    // softmax ignores a shift shared by every key
    for (id, pname, _) in store.iter() {
        if pname.ends_with("attn.k.b")
            && grads.get(id).iter().any(|g| g.abs() >= 1e-14) {
                return Err(format!("{name}: {pname} has gradient"));
            }
    }
    Ok(GradReport {
        probes: probes.len(),
        max_rel_err: worst.0,
        worst_at: worst.1,
    })
}

pub fn total(f: &Fixture, t: &mut Tape<'_>) -> layoutkit::Result<Var> {
    let a = mlm(f, t)?;
    let b = mpm(f, t)?;
    total_loss(t, a, b, 0.7)
}

pub fn token_classification(f: &Fixture, t: &mut Tape<'_>) -> layoutkit::Result<Var> {
    let h = f.model.encode(t, &f.plain, RunMode::Eval)?;
    token_classification_loss(t, &f.model, h, &f.word_labels)
}

pub fn doc_classification(f: &Fixture, t: &mut Tape<'_>) -> layoutkit::Result<Var> {
    let h = f.model.encode(t, &f.plain, RunMode::Eval)?;
    doc_classification_loss(t, &f.model, h, 2)
}

/// Every loss through the encoder, in a fixed order.
pub fn loss_suite() -> Vec<(&'static str, Result<GradReport, String>)> {
    let f = fixture();
    vec![
        ("mlm", check("mlm", &f, |t| mlm(&f, t))),
        ("mpm", check("mpm", &f, |t| mpm(&f, t))),
        ("total", check("total", &f, |t| total(&f, t))),
        ("token classification", check("token classification", &f, |t| token_classification(&f, t))),
        ("doc classification", check("doc classification", &f, |t| doc_classification(&f, t))),
    ]
}

/// GIoU loss against its box inputs on overlapping, nested and disjoint
/// pairs away from min/max ties.
pub fn giou_box_gradient() -> f64 {
    let pred = Tensor::new(
        vec![3, 4],
        vec![0.10, 0.12, 0.52, 0.47, 0.31, 0.33, 0.44, 0.41, 0.05, 0.62, 0.21, 0.83],
    )
    .unwrap();
    let truth: Vec<BBox> = vec![
        [0.20, 0.18, 0.61, 0.55].into(),
        [0.25, 0.29, 0.58, 0.63].into(),
        [0.55, 0.07, 0.92, 0.36].into(),
    ];
    finite_diff_check(|tape, x| lift(giou_loss(tape, x[0], &truth)), &[pred], EPS).unwrap()
}
