//! Output heads and training objectives.

use layoutkit_tensor::{Tape, Tensor, Var};

use super::{affine, Model};
use crate::doc::BBox;
use crate::error::{Error, Result};

/// Area guard for GIoU denominators.
const GIOU_EPS: f64 = 1e-9;

/// Row-wise log-softmax built from primitives. The row maximum is
/// subtracted as a constant for stability; it cancels in the gradient.
pub fn log_softmax(tape: &mut Tape<'_>, logits: Var) -> Result<Var> {
    let v = tape.value(logits);
    let (rows, cols) = (v.rows(), v.cols());
    let maxes: Vec<f64> = v
        .data()
        .chunks(cols)
        .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let m = tape.constant(Tensor::new(vec![rows, 1], maxes)?);
    let shifted = tape.sub(logits, m)?;
    let e = tape.exp(shifted);
    let s = tape.sum_last(e);
    let ls = tape.log(s)?;
    Ok(tape.sub(shifted, ls)?)
}

/// Mean cross entropy of `[N, K]` logits against class indices.
pub fn cross_entropy(tape: &mut Tape<'_>, logits: Var, targets: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::invalid(format!(
            "cross entropy over logits {shape:?} with {} targets",
            targets.len()
        )));
    }
    let (n, k) = (shape[0], shape[1]);
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::invalid(format!("target {t} out of range for {k} classes")));
    }
    let lp = log_softmax(tape, logits)?;
    let mut w = vec![0.0; n * k];
    for (r, &t) in targets.iter().enumerate() {
        w[r * k + t] = -1.0 / n as f64;
    }
    let w = tape.constant(Tensor::new(vec![n, k], w)?);
    let picked = tape.mul(lp, w)?;
    Ok(tape.sum(picked))
}

fn rows(tape: &mut Tape<'_>, states: Var, positions: &[usize]) -> Result<Var> {
    Ok(tape.embedding_gather(states, positions)?)
}

/// Vocabulary logits `[N, V]` at the given token positions.
pub fn mlm_logits(tape: &mut Tape<'_>, model: &Model, states: Var, positions: &[usize]) -> Result<Var> {
    let r = rows(tape, states, positions)?;
    affine(tape, r, &model.ids.mlm)
}

/// Mean cross entropy over positions carrying a label.
pub fn mlm_loss(tape: &mut Tape<'_>, model: &Model, states: Var, labels: &[Option<u32>]) -> Result<Var> {
    let (pos, tgt): (Vec<usize>, Vec<usize>) = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|t| (i, t as usize)))
        .unzip();
    if pos.is_empty() {
        return Err(Error::invalid("no masked positions; resample the masking plan"));
    }
    let logits = mlm_logits(tape, model, states, &pos)?;
    cross_entropy(tape, logits, &tgt)
}

/// Predicted boxes `[N, 4]` as `(x1, y1, x2, y2)` in `[0, 1]`, from a
/// sigmoid `(cx, cy, w, h)` parameterisation at the given positions.
pub fn mpm_predict(tape: &mut Tape<'_>, model: &Model, states: Var, positions: &[usize]) -> Result<Var> {
    let r = rows(tape, states, positions)?;
    let raw = affine(tape, r, &model.ids.mpm)?;
    let s = tape.sigmoid(raw);
    let col = |tape: &mut Tape<'_>, c: usize| tape.slice(s, 1, c, c + 1);
    let (cx, cy, w, h) = (col(tape, 0)?, col(tape, 1)?, col(tape, 2)?, col(tape, 3)?);
    let hw = tape.scale(w, 0.5);
    let hh = tape.scale(h, 0.5);
    let zero = tape.constant(Tensor::scalar(0.0));
    let one = tape.constant(Tensor::scalar(1.0));
    let clamp = |tape: &mut Tape<'_>, v: Var| -> Result<Var> {
        let v = tape.maximum(v, zero)?;
        Ok(tape.minimum(v, one)?)
    };
    let x1 = tape.sub(cx, hw)?;
    let x1 = clamp(tape, x1)?;
    let y1 = tape.sub(cy, hh)?;
    let y1 = clamp(tape, y1)?;
    let x2 = tape.add(cx, hw)?;
    let x2 = clamp(tape, x2)?;
    let y2 = tape.add(cy, hh)?;
    let y2 = clamp(tape, y2)?;
    Ok(tape.concat(&[x1, y1, x2, y2], 1)?)
}

/// Generalised IoU of two boxes.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    let c = (a.x2.max(b.x2) - a.x1.min(b.x1)) * (a.y2.max(b.y2) - a.y1.min(b.y1));
    inter / union.max(GIOU_EPS) - (c - union) / c.max(GIOU_EPS)
}

/// Negative mean GIoU between predicted `[N, 4]` boxes and `truth`.
pub fn giou_loss(tape: &mut Tape<'_>, pred: Var, truth: &[BBox]) -> Result<Var> {
    let n = truth.len();
    if n == 0 {
        return Err(Error::invalid("GIoU loss needs at least one box"));
    }
    if tape.shape(pred) != [n, 4] {
        return Err(Error::invalid(format!(
            "predicted boxes {:?} do not match {n} targets",
            tape.shape(pred)
        )));
    }
    let flat: Vec<f64> = truth.iter().flat_map(|b| [b.x1, b.y1, b.x2, b.y2]).collect();
    let t = tape.constant(Tensor::new(vec![n, 4], flat)?);
    let mut p = [pred; 4];
    let mut q = [t; 4];
    for c in 0..4 {
        p[c] = tape.slice(pred, 1, c, c + 1)?;
        q[c] = tape.slice(t, 1, c, c + 1)?;
    }
    let [px1, py1, px2, py2] = p;
    let [tx1, ty1, tx2, ty2] = q;

    let ix2 = tape.minimum(px2, tx2)?;
    let ix1 = tape.maximum(px1, tx1)?;
    let iw = tape.sub(ix2, ix1)?;
    let iw = tape.relu(iw);
    let iy2 = tape.minimum(py2, ty2)?;
    let iy1 = tape.maximum(py1, ty1)?;
    let ih = tape.sub(iy2, iy1)?;
    let ih = tape.relu(ih);
    let inter = tape.mul(iw, ih)?;

    let pw = tape.sub(px2, px1)?;
    let ph = tape.sub(py2, py1)?;
    let ap = tape.mul(pw, ph)?;
    let tw = tape.sub(tx2, tx1)?;
    let th = tape.sub(ty2, ty1)?;
    let at = tape.mul(tw, th)?;
    let sum = tape.add(ap, at)?;
    let union = tape.sub(sum, inter)?;

    let cx2 = tape.maximum(px2, tx2)?;
    let cx1 = tape.minimum(px1, tx1)?;
    let cw = tape.sub(cx2, cx1)?;
    let cy2 = tape.maximum(py2, ty2)?;
    let cy1 = tape.minimum(py1, ty1)?;
    let ch = tape.sub(cy2, cy1)?;
    let c = tape.mul(cw, ch)?;

    let eps = tape.constant(Tensor::scalar(GIOU_EPS));
    let union_g = tape.maximum(union, eps)?;
    let c_g = tape.maximum(c, eps)?;
    let iou = tape.div(inter, union_g)?;
    let empty = tape.sub(c, union)?;
    let penalty = tape.div(empty, c_g)?;
    let g = tape.sub(iou, penalty)?;
    let m = tape.mean(g);
    Ok(tape.scale(m, -1.0))
}

/// Masked position loss; identical to [`giou_loss`].
pub fn mpm_loss(tape: &mut Tape<'_>, pred: Var, truth: &[BBox]) -> Result<Var> {
    giou_loss(tape, pred, truth)
}

/// `l_mlm + lambda * l_mpm`.
pub fn total_loss(tape: &mut Tape<'_>, l_mlm: Var, l_mpm: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be a non-negative number, got {lambda}")));
    }
    let w = tape.scale(l_mpm, lambda);
    Ok(tape.add(l_mlm, w)?)
}

/// Label logits `[N, K]` at the given token positions.
pub fn token_logits(tape: &mut Tape<'_>, model: &Model, states: Var, positions: &[usize]) -> Result<Var> {
    let head = model
        .ids
        .token_head
        .as_ref()
        .ok_or_else(|| Error::invalid("model has no token-classification head"))?;
    let r = rows(tape, states, positions)?;
    affine(tape, r, head)
}

/// Mean cross entropy over labelled positions (typically each word's first
/// token); `None` marks ignored positions.
pub fn token_classification_loss(
    tape: &mut Tape<'_>,
    model: &Model,
    states: Var,
    labels: &[Option<usize>],
) -> Result<Var> {
    let (pos, tgt): (Vec<usize>, Vec<usize>) = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|t| (i, t)))
        .unzip();
    if pos.is_empty() {
        return Err(Error::invalid("every position is ignored"));
    }
    let logits = token_logits(tape, model, states, &pos)?;
    cross_entropy(tape, logits, &tgt)
}

/// Class logits `[1, C]` from the first (CLS) state.
pub fn doc_logits(tape: &mut Tape<'_>, model: &Model, states: Var) -> Result<Var> {
    let head = model
        .ids
        .doc_head
        .as_ref()
        .ok_or_else(|| Error::invalid("model has no classification head"))?;
    let r = rows(tape, states, &[0])?;
    affine(tape, r, head)
}

pub fn doc_classification_loss(tape: &mut Tape<'_>, model: &Model, states: Var, class: usize) -> Result<Var> {
    let logits = doc_logits(tape, model, states)?;
    cross_entropy(tape, logits, &[class])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn giou_hand_values() {
        let a = BBox::new(0.0, 0.0, 0.5, 0.5);
        assert!(close(giou(&a, &a), 1.0, 1e-12));
        assert!(close(giou(&a, &BBox::new(0.5, 0.5, 1.0, 1.0)), -0.5, 1e-12));
        let b = BBox::new(0.0, 0.0, 0.4, 0.4);
        let c = BBox::new(0.2, 0.2, 0.6, 0.6);
        assert!(close(giou(&b, &c), 1.0 / 7.0 - 0.08 / 0.36, 1e-12));
    }

    #[test]
    fn giou_loss_on_tape_matches_scalar() {
        let pred = [BBox::new(0.5, 0.5, 1.0, 1.0), BBox::new(0.2, 0.2, 0.6, 0.6)];
        let truth = [BBox::new(0.0, 0.0, 0.5, 0.5), BBox::new(0.0, 0.0, 0.4, 0.4)];
        let mut tape = Tape::new();
        let flat: Vec<f64> = pred.iter().flat_map(|b| [b.x1, b.y1, b.x2, b.y2]).collect();
        let p = tape.leaf(Tensor::new(vec![2, 4], flat).unwrap(), true);
        let l = giou_loss(&mut tape, p, &truth).unwrap();
        let want = -(giou(&truth[0], &pred[0]) + giou(&truth[1], &pred[1])) / 2.0;
        assert!(close(tape.value(l).item(), want, 1e-15));
        assert!(giou_loss(&mut tape, p, &[]).is_err());
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(&[3, 7]), true);
        let l = cross_entropy(&mut tape, z, &[0, 3, 6]).unwrap();
        assert!(close(tape.value(l).item(), 7f64.ln(), 1e-12));
    }

    #[test]
    fn confident_logits_give_near_zero() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_rows(&[&[800.0, 0.0], &[0.0, 800.0]]).unwrap(), true);
        let l = cross_entropy(&mut tape, z, &[0, 1]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn hand_computed_mean_cross_entropy() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_rows(&[&[1.0, 2.0, 0.0], &[0.5, 0.5, 3.0]]).unwrap(), true);
        let l = cross_entropy(&mut tape, z, &[1, 0]).unwrap();
        let ce = |row: [f64; 3], t: usize| -> f64 {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            s.ln() - row[t]
        };
        let want = (ce([1.0, 2.0, 0.0], 1) + ce([0.5, 0.5, 3.0], 0)) / 2.0;
        assert!(close(tape.value(l).item(), want, 1e-12));
    }

    #[test]
    fn total_is_exact_linear_combination() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(0.7), true);
        let b = tape.leaf(Tensor::scalar(-0.2), true);
        let t = total_loss(&mut tape, a, b, 1.0).unwrap();
        assert_eq!(tape.value(t).item(), 0.7 + -0.2);
        let t0 = total_loss(&mut tape, a, b, 0.0).unwrap();
        assert_eq!(tape.value(t0).item(), 0.7);
        assert!(total_loss(&mut tape, a, b, -1.0).is_err());
    }
}
