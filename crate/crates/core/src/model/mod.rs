//! Transformer encoder over text and layout, with pre-training and
//! fine-tuning heads.
//!
//! Inputs are embedded as the sum of token, 1D position and six coordinate
//! embeddings (x1, y1, x2, y2, width, height of the quantised box). Every
//! attention layer adds a bias learned from bucketed relative offsets of 1D
//! position and box centres, so the network sees layout both absolutely and
//! pairwise.

mod bias;
mod loss;

use layoutkit_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doc::{QBox, COORD_BINS};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::tokens::{TokenSequence, PAD};

pub use bias::{bucket, bucket_table, BIAS_MAX_DISTANCE_1D, BIAS_MAX_DISTANCE_2D};
pub use loss::{
    cross_entropy, doc_classification_loss, doc_logits, giou, giou_loss, log_softmax, mlm_logits, mlm_loss,
    mpm_loss, mpm_predict, token_classification_loss, token_logits, total_loss,
};

const LN_EPS: f64 = 1e-5;
const MASK_NEG: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_size: usize,
    pub max_len: usize,
    pub max_1d_position: usize,
    pub coordinate_bins: usize,
    pub relative_bias_buckets: usize,
    pub dropout: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            hidden_size: 128,
            layers: 2,
            heads: 4,
            ffn_size: 256,
            max_len: 512,
            max_1d_position: 512,
            coordinate_bins: COORD_BINS as usize,
            relative_bias_buckets: 32,
            dropout: 0.1,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden_size == 0 || self.heads == 0 || !self.hidden_size.is_multiple_of(self.heads) {
            return bad(format!(
                "model.hidden_size ({}) must be a positive multiple of model.heads ({})",
                self.hidden_size, self.heads
            ));
        }
        if self.coordinate_bins != COORD_BINS as usize {
            return bad(format!(
                "model.coordinate_bins must equal the quantisation grid ({COORD_BINS})"
            ));
        }
        if self.relative_bias_buckets < 4 || !self.relative_bias_buckets.is_multiple_of(2) {
            return bad("model.relative_bias_buckets must be even and at least 4".into());
        }
        if self.layers == 0 || self.ffn_size == 0 || self.vocab_size == 0 {
            return bad("model.layers, model.ffn_size and model.vocab_size must be positive".into());
        }
        if self.max_len < 3 || self.max_1d_position < self.max_len {
            return bad("model.max_1d_position must be at least model.max_len, which must be at least 3".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("model.dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad("model.init_std must be a non-negative number".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.heads
    }
}

#[derive(Debug, Clone)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Layer {
    ln1: Norm,
    q: Affine,
    k: Affine,
    v: Affine,
    o: Affine,
    ln2: Norm,
    ff1: Affine,
    ff2: Affine,
}

#[derive(Debug, Clone)]
struct Ids {
    token: ParamId,
    pos_1d: ParamId,
    coords: [ParamId; 6],
    emb_ln: Norm,
    bias_1d: ParamId,
    bias_x: ParamId,
    bias_y: ParamId,
    layers: Vec<Layer>,
    final_ln: Norm,
    mlm: Affine,
    mpm: Affine,
    token_head: Option<Affine>,
    doc_head: Option<Affine>,
}

/// Encoder parameters plus handles into them.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

const COORD_NAMES: [&str; 6] = ["x1", "y1", "x2", "y2", "width", "height"];

impl Model {
    /// Fresh parameters drawn from `seed`. Weights are normal with
    /// `init_std`, biases zero and layer-norm gains one.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let d = cfg.hidden_size;
        let std = cfg.init_std;
        let bins = cfg.coordinate_bins + 1;
        let mut normal = |p: &mut ParamStore, name: String, shape: &[usize]| -> Result<ParamId> {
            Ok(p.insert(name, Tensor::randn(shape, std, &mut rng))?)
        };
        let token = normal(&mut p, "emb.token".into(), &[cfg.vocab_size, d])?;
        let pos_1d = normal(&mut p, "emb.pos_1d".into(), &[cfg.max_1d_position, d])?;
        let mut coords = Vec::new();
        for name in COORD_NAMES {
            coords.push(normal(&mut p, format!("emb.{name}"), &[bins, d])?);
        }
        let coords: [ParamId; 6] = coords.try_into().expect("six coordinate tables");
        let nb = cfg.relative_bias_buckets;
        let bias_1d = normal(&mut p, "bias.rel_1d".into(), &[nb, cfg.heads])?;
        let bias_x = normal(&mut p, "bias.rel_x".into(), &[nb, cfg.heads])?;
        let bias_y = normal(&mut p, "bias.rel_y".into(), &[nb, cfg.heads])?;
        let mut layers = Vec::new();
        for l in 0..cfg.layers {
            let mut aff = |p: &mut ParamStore, n: &str, i: usize, o: usize| -> Result<Affine> {
                Ok(Affine {
                    w: normal(p, format!("layer{l}.{n}.w"), &[i, o])?,
                    b: p.insert(format!("layer{l}.{n}.b"), Tensor::zeros(&[1, o]))?,
                })
            };
            let q = aff(&mut p, "attn.q", d, d)?;
            let k = aff(&mut p, "attn.k", d, d)?;
            let v = aff(&mut p, "attn.v", d, d)?;
            let o = aff(&mut p, "attn.o", d, d)?;
            let ff1 = aff(&mut p, "ffn.in", d, cfg.ffn_size)?;
            let ff2 = aff(&mut p, "ffn.out", cfg.ffn_size, d)?;
            layers.push(Layer {
                ln1: norm(&mut p, &format!("layer{l}.ln_attn"), d)?,
                q,
                k,
                v,
                o,
                ln2: norm(&mut p, &format!("layer{l}.ln_ffn"), d)?,
                ff1,
                ff2,
            });
        }
        let emb_ln = norm(&mut p, "emb.ln", d)?;
        let final_ln = norm(&mut p, "final_ln", d)?;
        let mlm = Affine {
            w: normal(&mut p, "head.mlm.w".into(), &[d, cfg.vocab_size])?,
            b: p.insert("head.mlm.b", Tensor::zeros(&[1, cfg.vocab_size]))?,
        };
        let mpm = Affine {
            w: normal(&mut p, "head.mpm.w".into(), &[d, 4])?,
            b: p.insert("head.mpm.b", Tensor::zeros(&[1, 4]))?,
        };
        Ok(Self {
            cfg,
            params: p,
            ids: Ids {
                token,
                pos_1d,
                coords,
                emb_ln,
                bias_1d,
                bias_x,
                bias_y,
                layers,
                final_ln,
                mlm,
                mpm,
                token_head: None,
                doc_head: None,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Rebuild a model around a stored parameter set (for example from a
    /// checkpoint). Heads present in the store are picked up.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut fresh = Model::new(cfg, 0)?;
        for (_, name, t) in params.iter() {
            if fresh.params.id(name).is_none() {
                let (head, k) = match name {
                    "head.token.w" => ("token", t.cols()),
                    "head.doc.w" => ("doc", t.cols()),
                    _ => continue,
                };
                fresh.add_head(head, k, 0)?;
            }
        }
        let loaded = fresh.params.load_matching(&params)?;
        if loaded != params.len() || loaded != fresh.params.len() {
            return Err(Error::invalid(format!(
                "parameter set does not match the model config ({loaded} of {} tensors matched, model has {})",
                params.len(),
                fresh.params.len()
            )));
        }
        Ok(fresh)
    }

    fn add_head(&mut self, which: &str, k: usize, seed: u64) -> Result<Affine> {
        if k == 0 {
            return Err(Error::invalid(format!("{which} head needs at least one output")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.cfg.hidden_size;
        let w = self
            .params
            .insert(format!("head.{which}.w"), Tensor::randn(&[d, k], self.cfg.init_std, &mut rng))?;
        let b = self.params.insert(format!("head.{which}.b"), Tensor::zeros(&[1, k]))?;
        let aff = Affine { w, b };
        match which {
            "token" => self.ids.token_head = Some(aff.clone()),
            _ => self.ids.doc_head = Some(aff.clone()),
        }
        Ok(aff)
    }

    /// Add (or re-initialise the shape check of) a token-classification
    /// head with `k` labels.
    pub fn ensure_token_head(&mut self, k: usize, seed: u64) -> Result<()> {
        match &self.ids.token_head {
            Some(a) if self.params.get(a.w).cols() == k => Ok(()),
            Some(_) => Err(Error::invalid("token head exists with a different label count")),
            None => self.add_head("token", k, seed).map(|_| ()),
        }
    }

    pub fn ensure_doc_head(&mut self, k: usize, seed: u64) -> Result<()> {
        match &self.ids.doc_head {
            Some(a) if self.params.get(a.w).cols() == k => Ok(()),
            Some(_) => Err(Error::invalid("classification head exists with a different class count")),
            None => self.add_head("doc", k, seed).map(|_| ()),
        }
    }

    pub fn token_labels(&self) -> Option<usize> {
        self.ids.token_head.as_ref().map(|a| self.params.get(a.w).cols())
    }

    pub fn doc_classes(&self) -> Option<usize> {
        self.ids.doc_head.as_ref().map(|a| self.params.get(a.w).cols())
    }

    /// Parameters belonging to the shared encoder (everything except heads).
    pub fn encoder_param_mask(&self) -> Vec<bool> {
        self.params
            .iter()
            .map(|(_, name, _)| !name.starts_with("head."))
            .collect()
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.id(name)
    }
}

fn norm(p: &mut ParamStore, prefix: &str, d: usize) -> Result<Norm> {
    Ok(Norm {
        g: p.insert(format!("{prefix}.g"), Tensor::ones(&[1, d]))?,
        b: p.insert(format!("{prefix}.b"), Tensor::zeros(&[1, d]))?,
    })
}

/// Per-token features consumed by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub tokens: Vec<u32>,
    pub pos_1d: Vec<u32>,
    pub boxes: Vec<QBox>,
    /// Keys that may be attended to; `None` means all.
    pub key_mask: Option<Vec<bool>>,
}

impl ModelInput {
    pub fn from_sequence(seq: &TokenSequence) -> Self {
        Self {
            tokens: seq.tokens.clone(),
            pos_1d: seq.pos_1d.clone(),
            boxes: seq.box_2d.clone(),
            key_mask: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Right-pad to `len` with PAD tokens hidden from attention.
    pub fn padded(&self, len: usize) -> Self {
        let n = self.len();
        let mut out = self.clone();
        let extra = len.saturating_sub(n);
        out.tokens.extend(std::iter::repeat_n(PAD, extra));
        out.pos_1d.extend(std::iter::repeat_n(0, extra));
        out.boxes.extend(std::iter::repeat_n(QBox::ZERO, extra));
        let mut mask = self.key_mask.clone().unwrap_or_else(|| vec![true; n]);
        mask.extend(std::iter::repeat_n(false, extra));
        out.key_mask = Some(mask);
        out
    }
}

/// Training mode turns dropout on with a per-call derived seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Eval,
    Train { seed: u64 },
}

struct DropoutStream {
    p: f64,
    seed: Option<u64>,
    calls: u64,
}

impl DropoutStream {
    fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        match self.seed {
            Some(seed) if self.p > 0.0 => {
                self.calls += 1;
                Ok(tape.dropout(x, self.p, derive_seed(seed, "dropout", "", self.calls))?)
            }
            _ => Ok(x),
        }
    }
}

fn affine(tape: &mut Tape<'_>, x: Var, a: &Affine) -> Result<Var> {
    let w = tape.param(a.w);
    let b = tape.param(a.b);
    let y = tape.matmul(x, w)?;
    Ok(tape.add(y, b)?)
}

fn layer_norm(tape: &mut Tape<'_>, x: Var, n: &Norm) -> Result<Var> {
    let y = tape.layer_norm(x, LN_EPS);
    let g = tape.param(n.g);
    let b = tape.param(n.b);
    let y = tape.mul(y, g)?;
    Ok(tape.add(y, b)?)
}

/// Validate `input` against the model's tables.
fn check_input(cfg: &ModelConfig, input: &ModelInput) -> Result<()> {
    let n = input.len();
    if n == 0 {
        return Err(Error::invalid("empty input sequence"));
    }
    if input.pos_1d.len() != n || input.boxes.len() != n || input.key_mask.as_ref().is_some_and(|m| m.len() != n) {
        return Err(Error::invalid("input feature lists have different lengths"));
    }
    if let Some(&t) = input.tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::invalid(format!(
            "token id {t} out of range for vocabulary of {}",
            cfg.vocab_size
        )));
    }
    if let Some(&p) = input.pos_1d.iter().find(|&&p| p as usize >= cfg.max_1d_position) {
        return Err(Error::invalid(format!(
            "1D position {p} out of range (max {})",
            cfg.max_1d_position - 1
        )));
    }
    if let Some(b) = input
        .boxes
        .iter()
        .find(|b| b.0.iter().any(|&c| c as usize > cfg.coordinate_bins))
    {
        return Err(Error::invalid(format!("box {:?} exceeds {} bins", b.0, cfg.coordinate_bins)));
    }
    if input.key_mask.as_ref().is_some_and(|m| !m.iter().any(|&k| k)) {
        return Err(Error::invalid("key mask hides every position"));
    }
    Ok(())
}

/// Coordinate-table indices `[x1, y1, x2, y2, width, height]` of a box.
pub fn coordinate_indices(b: &QBox) -> [usize; 6] {
    [
        b.x1() as usize,
        b.y1() as usize,
        b.x2() as usize,
        b.y2() as usize,
        b.width() as usize,
        b.height() as usize,
    ]
}

impl Model {
    /// Summed embeddings before normalisation and dropout: `[L, hidden]`.
    pub fn embedding_sum(&self, tape: &mut Tape<'_>, input: &ModelInput) -> Result<Var> {
        check_input(&self.cfg, input)?;
        let tok: Vec<usize> = input.tokens.iter().map(|&t| t as usize).collect();
        let pos: Vec<usize> = input.pos_1d.iter().map(|&p| p as usize).collect();
        let table = tape.param(self.ids.token);
        let mut h = tape.embedding_gather(table, &tok)?;
        let table = tape.param(self.ids.pos_1d);
        let e = tape.embedding_gather(table, &pos)?;
        h = tape.add(h, e)?;
        let idx: Vec<[usize; 6]> = input.boxes.iter().map(coordinate_indices).collect();
        for (c, &id) in self.ids.coords.iter().enumerate() {
            let ids: Vec<usize> = idx.iter().map(|i| i[c]).collect();
            let table = tape.param(id);
            let e = tape.embedding_gather(table, &ids)?;
            h = tape.add(h, e)?;
        }
        Ok(h)
    }

    /// Input embeddings, normalised, with dropout in training mode.
    pub fn embed_inputs(&self, tape: &mut Tape<'_>, input: &ModelInput, mode: RunMode) -> Result<Var> {
        let mut drop = self.dropout_stream(mode, 0);
        self.embed_with(tape, input, &mut drop)
    }

    fn embed_with(&self, tape: &mut Tape<'_>, input: &ModelInput, drop: &mut DropoutStream) -> Result<Var> {
        let h = self.embedding_sum(tape, input)?;
        let h = layer_norm(tape, h, &self.ids.emb_ln)?;
        drop.apply(tape, h)
    }

    fn dropout_stream(&self, mode: RunMode, salt: u64) -> DropoutStream {
        DropoutStream {
            p: self.cfg.dropout,
            seed: match mode {
                RunMode::Eval => None,
                RunMode::Train { seed } => Some(seed ^ salt),
            },
            calls: 0,
        }
    }

    /// Additive attention bias per head, each `[L, L]`, including the
    /// key mask.
    pub fn attention_bias(&self, tape: &mut Tape<'_>, input: &ModelInput) -> Result<Vec<Var>> {
        check_input(&self.cfg, input)?;
        bias::attention_bias(tape, self, input)
    }

    /// Contextual states `[L, hidden]` after the final layer norm.
    pub fn encode(&self, tape: &mut Tape<'_>, input: &ModelInput, mode: RunMode) -> Result<Var> {
        let mut drop = self.dropout_stream(mode, 0);
        let mut x = self.embed_with(tape, input, &mut drop)?;
        let biases = bias::attention_bias(tape, self, input)?;
        let (hd, heads) = (self.cfg.head_dim(), self.cfg.heads);
        let scale = 1.0 / (hd as f64).sqrt();
        for layer in &self.ids.layers {
            let h = layer_norm(tape, x, &layer.ln1)?;
            let q = affine(tape, h, &layer.q)?;
            let k = affine(tape, h, &layer.k)?;
            let v = affine(tape, h, &layer.v)?;
            let mut outs = Vec::with_capacity(heads);
            for (hi, &b) in biases.iter().enumerate() {
                let qh = tape.slice(q, 1, hi * hd, (hi + 1) * hd)?;
                let kh = tape.slice(k, 1, hi * hd, (hi + 1) * hd)?;
                let vh = tape.slice(v, 1, hi * hd, (hi + 1) * hd)?;
                let kt = tape.transpose(kh)?;
                let s = tape.matmul(qh, kt)?;
                let s = tape.scale(s, scale);
                let s = tape.add(s, b)?;
                let a = tape.softmax(s);
                outs.push(tape.matmul(a, vh)?);
            }
            let o = tape.concat(&outs, 1)?;
            let o = affine(tape, o, &layer.o)?;
            let o = drop.apply(tape, o)?;
            x = tape.add(x, o)?;

            let h = layer_norm(tape, x, &layer.ln2)?;
            let f = affine(tape, h, &layer.ff1)?;
            let f = tape.relu(f);
            let f = affine(tape, f, &layer.ff2)?;
            let f = drop.apply(tape, f)?;
            x = tape.add(x, f)?;
        }
        layer_norm(tape, x, &self.ids.final_ln)
    }

    /// Plain-value forward pass for inference.
    pub fn encode_values(&self, input: &ModelInput) -> Result<Tensor> {
        let mut tape = Tape::with_params(&self.params);
        let s = self.encode(&mut tape, input, RunMode::Eval)?;
        Ok(tape.value(s).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            hidden_size: 8,
            layers: 1,
            heads: 2,
            ffn_size: 12,
            max_len: 16,
            max_1d_position: 16,
            dropout: 0.0,
            init_std: 0.5,
            ..ModelConfig::default()
        }
    }

    fn input(tokens: &[u32], pos: &[u32], boxes: &[[u16; 4]]) -> ModelInput {
        ModelInput {
            tokens: tokens.to_vec(),
            pos_1d: pos.to_vec(),
            boxes: boxes.iter().map(|b| QBox(*b)).collect(),
            key_mask: None,
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(bad.validate().unwrap_err().is_config());
        let bins = ModelConfig {
            coordinate_bins: 100,
            ..ModelConfig::default()
        };
        assert!(bins.validate().is_err());
    }

    #[test]
    fn token_out_of_range_is_an_error() {
        let m = Model::new(tiny_config(), 1).unwrap();
        let mut tape = Tape::with_params(m.params());
        let x = input(&[2, 12], &[0, 1], &[[0; 4], [0; 4]]);
        assert!(m.embed_inputs(&mut tape, &x, RunMode::Eval).is_err());
    }

    #[test]
    fn pseudo_box_indices() {
        assert_eq!(coordinate_indices(&QBox::pseudo(37)), [0, 0, 0, 37, 0, 37]);
    }

    #[test]
    fn shared_segment_box_gives_identical_layout_component() {
        let m = Model::new(tiny_config(), 2).unwrap();
        let b = [100, 200, 300, 240];
        // same 1D position and box, different tokens: difference is purely textual
        let x = input(&[5, 6], &[1, 1], &[b, b]);
        let mut tape = Tape::with_params(m.params());
        let h = m.embedding_sum(&mut tape, &x).unwrap();
        let hv = tape.value(h).clone();
        let tok = m.params().get(m.ids.token);
        for c in 0..8 {
            let layout0 = hv.row(0)[c] - tok.row(5)[c];
            let layout1 = hv.row(1)[c] - tok.row(6)[c];
            assert!((layout0 - layout1).abs() < 1e-15);
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        let m = Model::new(tiny_config(), 3).unwrap();
        let x = input(&[2], &[0], &[[0; 4]]);
        let out = m.encode_values(&x).unwrap();
        assert_eq!(out.shape(), &[1, 8]);
        assert!(out.is_finite());
    }

    #[test]
    fn padding_does_not_change_valid_rows() {
        let m = Model::new(tiny_config(), 4).unwrap();
        let x = input(&[2, 5, 7, 3], &[0, 1, 2, 0], &[[0; 4], [10, 10, 50, 30], [10, 10, 50, 30], [0; 4]]);
        let a = m.encode_values(&x).unwrap();
        let b = m.encode_values(&x.padded(7)).unwrap();
        assert_eq!(b.shape(), &[7, 8]);
        for i in 0..4 {
            for (u, v) in a.row(i).iter().zip(b.row(i)) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_give_flat_logits() {
        let mut m = Model::new(tiny_config(), 5).unwrap();
        let ids: Vec<ParamId> = m.params().ids().collect();
        for id in ids {
            let name = m.params().name(id).to_owned();
            if !name.ends_with(".g") {
                m.params_mut().get_mut(id).data_mut().fill(0.0);
            }
        }
        let x = input(&[2, 5, 7, 3], &[0, 1, 2, 0], &[[0; 4], [1, 1, 5, 3], [6, 1, 9, 3], [0; 4]]);
        let mut tape = Tape::with_params(m.params());
        let s = m.encode(&mut tape, &x, RunMode::Eval).unwrap();
        let logits = loss::mlm_logits(&mut tape, &m, s, &[1, 2]).unwrap();
        let v = tape.value(logits);
        assert!(v.data().iter().all(|&l| l == v.data()[0]));
    }

    #[test]
    fn dropout_only_in_training() {
        let cfg = ModelConfig {
            dropout: 0.5,
            ..tiny_config()
        };
        let m = Model::new(cfg, 6).unwrap();
        let x = input(&[2, 5, 3], &[0, 1, 0], &[[0; 4], [1, 1, 5, 3], [0; 4]]);
        let run = |mode| {
            let mut tape = Tape::with_params(m.params());
            let s = m.encode(&mut tape, &x, mode).unwrap();
            tape.value(s).clone()
        };
        assert_eq!(run(RunMode::Eval), run(RunMode::Eval));
        assert_eq!(run(RunMode::Train { seed: 1 }), run(RunMode::Train { seed: 1 }));
        assert_ne!(run(RunMode::Train { seed: 1 }), run(RunMode::Eval));
    }

    #[test]
    fn params_round_trip_with_heads() {
        let mut m = Model::new(tiny_config(), 7).unwrap();
        m.ensure_token_head(5, 1).unwrap();
        let back = Model::from_params(tiny_config(), m.params().clone()).unwrap();
        assert_eq!(back.token_labels(), Some(5));
        assert_eq!(back.doc_classes(), None);
        let x = input(&[2, 5, 3], &[0, 1, 0], &[[0; 4], [1, 1, 5, 3], [0; 4]]);
        assert_eq!(m.encode_values(&x).unwrap(), back.encode_values(&x).unwrap());
    }
}
