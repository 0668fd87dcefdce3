//! Pre-training with MLM and MPM, and supervised fine-tuning.

use std::collections::HashMap;

use layoutkit_tensor::{Adam, AdamConfig, Checkpoint, GradStore, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::doc::LayoutDoc;
use crate::error::{Error, Result};
use crate::eval::{bio_labels, canonical_words, evaluate_classes, evaluate_entities, Featurizer, LabelSet};
use crate::masking::{
    apply_box_masks, apply_mlm, plan_mlm, select_mpm, split_segments, MlmPlan, MlmStrategy, ReplacementPolicy,
};
use crate::model::{
    doc_classification_loss, mlm_loss, mpm_loss, mpm_predict, token_classification_loss, Model, ModelConfig,
    ModelInput, RunMode,
};
use crate::seed::derive_seed;
use crate::tokens::{TokenSequence, WordRef};

/// Attempts at drawing a non-empty MLM plan before a document is skipped
/// for the step.
const PLAN_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Linear warm-up length; afterwards the rate decays linearly to
    /// `final_lr_fraction * lr` at the last step.
    pub warmup_steps: usize,
    pub final_lr_fraction: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 16,
            warmup_steps: 30,
            final_lr_fraction: 0.1,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{prefix}.batch_size must be positive")));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config(format!("{prefix}.final_lr_fraction must lie in [0, 1]")));
        }
        Ok(())
    }

    /// Learning rate for 0-based `step`.
    pub fn lr_at(&self, base: f64, step: usize) -> f64 {
        if step < self.warmup_steps {
            return base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1);
        let t = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        base * (1.0 - t * (1.0 - self.final_lr_fraction))
    }
}

fn validate_adam(c: &AdamConfig, prefix: &str) -> Result<()> {
    let ok = c.lr > 0.0
        && c.lr.is_finite()
        && (0.0..1.0).contains(&c.beta1)
        && (0.0..1.0).contains(&c.beta2)
        && c.eps > 0.0
        && c.weight_decay >= 0.0
        && c.clip_norm.is_none_or(|n| n > 0.0);
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{prefix}.optimizer has an out-of-range value: {c:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub strategy: MlmStrategy,
    pub mpm: bool,
    pub p_mlm: f64,
    pub p_mpm: f64,
    pub lambda: f64,
    pub replacement: ReplacementPolicy,
    pub schedule: ScheduleConfig,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            strategy: MlmStrategy::WwmLam,
            mpm: true,
            p_mlm: 0.25,
            p_mpm: 0.15,
            lambda: 1.0,
            replacement: ReplacementPolicy::default(),
            schedule: ScheduleConfig::default(),
            optimizer: AdamConfig::default(),
            seed: 1,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |p: f64| p > 0.0 && p < 1.0;
        if !open(self.p_mlm) {
            return Err(Error::Config(format!("pretrain.p_mlm must lie in (0, 1), got {}", self.p_mlm)));
        }
        if self.mpm && !open(self.p_mpm) {
            return Err(Error::Config(format!("pretrain.p_mpm must lie in (0, 1), got {}", self.p_mpm)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("pretrain.lambda must be non-negative, got {}", self.lambda)));
        }
        self.replacement
            .validate()
            .map_err(|e| Error::Config(format!("pretrain.replacement: {e}")))?;
        self.schedule.validate("pretrain.schedule")?;
        validate_adam(&self.optimizer, "pretrain")
    }
}

/// One optimisation step of a loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub mlm: f64,
    pub mpm: f64,
    pub grad_norm: f64,
    /// Documents contributing to the step.
    pub docs: usize,
    pub mpm_words: usize,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub model: Model,
    pub trace: Vec<TraceRow>,
}

/// Cycle through `n` items in freshly shuffled epochs.
struct Batches {
    n: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    at: usize,
}

impl Batches {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            epoch: 0,
            order: Vec::new(),
            at: 0,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.n) {
            if self.at == self.order.len() {
                self.order = (0..self.n).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "shuffle", "", self.epoch));
                self.order.shuffle(&mut rng);
                self.epoch += 1;
                self.at = 0;
            }
            out.push(self.order[self.at]);
            self.at += 1;
        }
        out
    }
}

fn check_vocab(model: &Model, feat: &Featurizer) -> Result<()> {
    let cfg = model.config();
    if cfg.vocab_size < feat.vocab.len() {
        return Err(Error::Config(format!(
            "model.vocab_size is {} but the vocabulary has {} entries",
            cfg.vocab_size,
            feat.vocab.len()
        )));
    }
    if cfg.max_len < feat.max_len {
        return Err(Error::Config(format!(
            "model.max_len {} is below the featurizer length {}",
            cfg.max_len, feat.max_len
        )));
    }
    Ok(())
}

/// MLM plan for `seq` at `step`, redrawn with fresh seeds while empty.
pub fn draw_plan(seq: &TokenSequence, cfg: &PretrainConfig, doc_id: &str, step: usize) -> Result<Option<MlmPlan>> {
    for attempt in 0..PLAN_ATTEMPTS {
        let seed = derive_seed(cfg.seed, "mlm-plan", &format!("{doc_id}#{attempt}"), step as u64);
        let plan = plan_mlm(seq, cfg.strategy, cfg.p_mlm, seed)?;
        if !plan.is_empty() {
            return Ok(Some(plan));
        }
    }
    Ok(None)
}

/// Corrupted input plus MLM labels and MPM targets for one document.
pub struct PretrainExample {
    pub input: ModelInput,
    pub mlm_labels: Vec<Option<u32>>,
    /// First-token positions of the box-masked words.
    pub mpm_positions: Vec<usize>,
    pub mpm_targets: Vec<crate::doc::BBox>,
}

/// Build the corrupted example for `seq` at `step`, or `None` when no MLM
/// plan could be drawn.
pub fn pretrain_example(
    seq: &TokenSequence,
    cfg: &PretrainConfig,
    vocab_size: usize,
    doc_id: &str,
    step: usize,
) -> Result<Option<PretrainExample>> {
    let Some(plan) = draw_plan(seq, cfg, doc_id, step)? else {
        return Ok(None);
    };
    let masked = apply_mlm(
        seq,
        &plan,
        cfg.replacement,
        vocab_size,
        derive_seed(cfg.seed, "mlm-apply", doc_id, step as u64),
    )?;
    let mut out = masked.seq;
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    if cfg.mpm {
        let sel = select_mpm(seq, cfg.p_mpm, derive_seed(cfg.seed, "mpm", doc_id, step as u64), Some(&plan))?;
        if !sel.is_empty() {
            let split = split_segments(&out, &sel)?;
            let (boxed, _) = apply_box_masks(&split, &sel)?;
            positions = sel.words.iter().map(|&w| boxed.words[w].tokens.start).collect();
            targets = sel.targets.clone();
            out = boxed;
        }
    }
    Ok(Some(PretrainExample {
        input: ModelInput::from_sequence(&out),
        mlm_labels: masked.labels,
        mpm_positions: positions,
        mpm_targets: targets,
    }))
}

/// Pre-train `model` on `docs` (labels are ignored). Sequences are encoded
/// once in reading order; masks are redrawn every step.
pub fn pretrain(mut model: Model, feat: &Featurizer, cfg: &PretrainConfig, docs: &[LayoutDoc]) -> Result<Pretrained> {
    cfg.validate()?;
    check_vocab(&model, feat)?;
    if docs.is_empty() {
        return Err(Error::invalid("no documents to pre-train on"));
    }
    let seqs = docs.iter().map(|d| feat.encode(d)).collect::<Result<Vec<_>>>()?;
    let vocab_size = feat.vocab.len();
    let trainable = vec![true; model.params().len()];
    let mut adam = Adam::new(cfg.optimizer, model.params());
    let mut grads = GradStore::zeros_like(model.params());
    let mut batches = Batches::new(docs.len(), cfg.seed);
    let mut trace = Vec::with_capacity(cfg.schedule.steps);

    for step in 0..cfg.schedule.steps {
        grads.zero();
        let batch = batches.next_batch(cfg.schedule.batch_size);
        let examples = batch
            .iter()
            .filter_map(|&i| pretrain_example(&seqs[i], cfg, vocab_size, &docs[i].doc_id, step).transpose())
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / examples.len().max(1) as f64;
        let (mut loss_sum, mut mlm_sum, mut mpm_sum, mut mpm_words) = (0.0, 0.0, 0.0, 0);
        for (k, ex) in examples.iter().enumerate() {
            let mut tape = Tape::with_params(model.params());
            let run = RunMode::Train {
                seed: derive_seed(cfg.seed, "pretrain-dropout", "", (step * cfg.schedule.batch_size + k) as u64),
            };
            let states = model.encode(&mut tape, &ex.input, run)?;
            let l_mlm = mlm_loss(&mut tape, &model, states, &ex.mlm_labels)?;
            let mut total = l_mlm;
            mlm_sum += tape.value(l_mlm).item();
            if !ex.mpm_positions.is_empty() {
                let pred = mpm_predict(&mut tape, &model, states, &ex.mpm_positions)?;
                let l_mpm = mpm_loss(&mut tape, pred, &ex.mpm_targets)?;
                mpm_sum += tape.value(l_mpm).item();
                mpm_words += ex.mpm_positions.len();
                total = crate::model::total_loss(&mut tape, l_mlm, l_mpm, cfg.lambda)?;
            }
            let v = tape.value(total).item();
            if !v.is_finite() {
                return Err(Error::Diverged {
                    step,
                    msg: format!("non-finite loss {v}"),
                });
            }
            loss_sum += v;
            tape.backward_scaled(total, Some(&mut grads), scale)?;
        }
        let grad_norm = grads.global_norm();
        if !grad_norm.is_finite() {
            return Err(Error::Diverged {
                step,
                msg: "non-finite gradient".into(),
            });
        }
        let lr = cfg.schedule.lr_at(cfg.optimizer.lr, step);
        if !examples.is_empty() {
            adam.step(model.params_mut(), &grads, lr, &trainable);
        }
        trace.push(TraceRow {
            step,
            lr,
            loss: loss_sum * scale,
            mlm: mlm_sum * scale,
            mpm: mpm_sum * scale,
            grad_norm,
            docs: examples.len(),
            mpm_words,
        });
    }
    if !model.params().all_finite() {
        return Err(Error::Diverged {
            step: cfg.schedule.steps,
            msg: "non-finite parameters".into(),
        });
    }
    Ok(Pretrained { model, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Entities,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub task: Task,
    pub schedule: ScheduleConfig,
    pub optimizer: AdamConfig,
    /// Use only the first `n` training documents.
    pub train_docs: Option<usize>,
    /// Train the task head only.
    pub freeze_encoder: bool,
    /// Dev evaluation interval in steps; the best dev checkpoint is kept.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            task: Task::Entities,
            schedule: ScheduleConfig {
                steps: 300,
                batch_size: 8,
                warmup_steps: 30,
                final_lr_fraction: 0.1,
            },
            optimizer: AdamConfig::default(),
            train_docs: None,
            freeze_encoder: false,
            eval_every: 50,
            seed: 1,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(Error::Config("finetune.eval_every must be positive".into()));
        }
        if self.train_docs == Some(0) {
            return Err(Error::Config("finetune.train_docs must be positive when set".into()));
        }
        self.schedule.validate("finetune.schedule")?;
        validate_adam(&self.optimizer, "finetune")
    }
}

/// Label inventory of a fine-tuning task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Entities(LabelSet),
    Classes(Vec<String>),
}

impl Targets {
    /// Derive the label inventory for `task` from labelled documents.
    pub fn from_docs<'a>(task: Task, docs: impl IntoIterator<Item = &'a LayoutDoc> + Clone) -> Result<Self> {
        match task {
            Task::Entities => {
                let l = LabelSet::from_docs(docs);
                if l.is_empty() {
                    return Err(Error::Config("entity task but no word carries a label".into()));
                }
                Ok(Targets::Entities(l))
            }
            Task::Classification => {
                let mut classes = Vec::new();
                for d in docs {
                    let c = d.class.clone().ok_or_else(|| {
                        Error::Config(format!("classification task but document {} has no class", d.doc_id))
                    })?;
                    classes.push(c);
                }
                classes.sort();
                classes.dedup();
                if classes.len() < 2 {
                    return Err(Error::Config("classification needs at least two classes".into()));
                }
                Ok(Targets::Classes(classes))
            }
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Entities(_) => Task::Entities,
            Targets::Classes(_) => Task::Classification,
        }
    }
}

/// Dev score after a given number of fine-tuning steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevPoint {
    pub step: usize,
    pub train_loss: f64,
    /// Entity-level F1 or accuracy.
    pub dev_score: f64,
}

#[derive(Debug, Clone)]
pub struct Finetuned {
    pub model: Model,
    pub best_step: usize,
    pub best_score: f64,
    pub curve: Vec<DevPoint>,
    pub trace: Vec<TraceRow>,
}

enum Target {
    Tokens(Vec<Option<usize>>),
    Class(usize),
}

fn example_target(doc: &LayoutDoc, seq: &TokenSequence, targets: &Targets) -> Result<Target> {
    match targets {
        Targets::Entities(labels) => {
            let gold = bio_labels(doc, labels)?;
            let index: HashMap<WordRef, usize> =
                canonical_words(doc).into_iter().enumerate().map(|(i, r)| (r, i)).collect();
            let mut t = vec![None; seq.len()];
            for w in &seq.words {
                t[w.tokens.start] = Some(gold[index[&w.source]]);
            }
            Ok(Target::Tokens(t))
        }
        Targets::Classes(classes) => {
            let c = doc
                .class
                .as_ref()
                .and_then(|c| classes.iter().position(|x| x == c))
                .ok_or_else(|| Error::validation(&doc.doc_id, "class missing or not in the class list"))?;
            Ok(Target::Class(c))
        }
    }
}

/// Dev score of `model`: entity-level micro F1 or accuracy.
pub fn dev_score(model: &Model, feat: &Featurizer, targets: &Targets, dev: &[LayoutDoc]) -> Result<f64> {
    Ok(match targets {
        Targets::Entities(l) => evaluate_entities(model, feat, l, dev)?.entity.overall.f1,
        Targets::Classes(c) => evaluate_classes(model, feat, c, dev)?.accuracy,
    })
}

/// Fine-tune `model` and return the parameters with the best dev score.
/// Ties keep the earlier checkpoint.
pub fn finetune(
    mut model: Model,
    feat: &Featurizer,
    cfg: &FinetuneConfig,
    targets: &Targets,
    train: &[LayoutDoc],
    dev: &[LayoutDoc],
) -> Result<Finetuned> {
    cfg.validate()?;
    check_vocab(&model, feat)?;
    if targets.task() != cfg.task {
        return Err(Error::Config(format!(
            "finetune.task is {:?} but the targets describe {:?}",
            cfg.task,
            targets.task()
        )));
    }
    let head_seed = derive_seed(cfg.seed, "head-init", "", 0);
    match targets {
        Targets::Entities(l) => model.ensure_token_head(l.num_labels(), head_seed)?,
        Targets::Classes(c) => model.ensure_doc_head(c.len(), head_seed)?,
    }
    let train = &train[..cfg.train_docs.unwrap_or(train.len()).min(train.len())];
    if train.is_empty() {
        return Err(Error::invalid("no training documents"));
    }
    if dev.is_empty() {
        return Err(Error::invalid("no dev documents"));
    }
    let data = train
        .iter()
        .map(|d| {
            let seq = feat.encode(d)?;
            let t = example_target(d, &seq, targets)?;
            Ok((ModelInput::from_sequence(&seq), t))
        })
        .collect::<Result<Vec<_>>>()?;

    let trainable: Vec<bool> = if cfg.freeze_encoder {
        model.encoder_param_mask().into_iter().map(|e| !e).collect()
    } else {
        vec![true; model.params().len()]
    };
    let frozen: Vec<_> = model
        .params()
        .ids()
        .zip(&trainable)
        .filter(|(_, &t)| !t)
        .map(|(id, _)| id)
        .collect();
    let mut adam = Adam::new(cfg.optimizer, model.params());
    let mut grads = GradStore::zeros_like(model.params());
    let mut batches = Batches::new(data.len(), derive_seed(cfg.seed, "finetune", "", 0));

    let mut best_score = dev_score(&model, feat, targets, dev)?;
    let mut best_params = model.params().clone();
    let mut best_step = 0;
    let mut curve = vec![DevPoint {
        step: 0,
        train_loss: f64::NAN,
        dev_score: best_score,
    }];
    let mut trace = Vec::with_capacity(cfg.schedule.steps);
    let mut window = (0.0, 0usize);

    for step in 0..cfg.schedule.steps {
        grads.zero();
        let batch = batches.next_batch(cfg.schedule.batch_size);
        let scale = 1.0 / batch.len() as f64;
        let mut loss_sum = 0.0;
        for (k, &i) in batch.iter().enumerate() {
            let (input, target) = &data[i];
            let mut tape = Tape::with_params(model.params());
            for &id in &frozen {
                tape.freeze(id);
            }
            let run = RunMode::Train {
                seed: derive_seed(cfg.seed, "finetune-dropout", "", (step * cfg.schedule.batch_size + k) as u64),
            };
            let states = model.encode(&mut tape, input, run)?;
            let loss = match target {
                Target::Tokens(t) => token_classification_loss(&mut tape, &model, states, t)?,
                Target::Class(c) => doc_classification_loss(&mut tape, &model, states, *c)?,
            };
            let v = tape.value(loss).item();
            if !v.is_finite() {
                return Err(Error::Diverged {
                    step,
                    msg: format!("non-finite loss {v}"),
                });
            }
            loss_sum += v;
            tape.backward_scaled(loss, Some(&mut grads), scale)?;
        }
        let grad_norm = grads.global_norm();
        if !grad_norm.is_finite() {
            return Err(Error::Diverged {
                step,
                msg: "non-finite gradient".into(),
            });
        }
        let lr = cfg.schedule.lr_at(cfg.optimizer.lr, step);
        adam.step(model.params_mut(), &grads, lr, &trainable);
        let loss = loss_sum * scale;
        window = (window.0 + loss, window.1 + 1);
        trace.push(TraceRow {
            step,
            lr,
            loss,
            mlm: 0.0,
            mpm: 0.0,
            grad_norm,
            docs: batch.len(),
            mpm_words: 0,
        });
        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.schedule.steps {
            let score = dev_score(&model, feat, targets, dev)?;
            curve.push(DevPoint {
                step: done,
                train_loss: window.0 / window.1 as f64,
                dev_score: score,
            });
            window = (0.0, 0);
            if score > best_score {
                best_score = score;
                best_step = done;
                best_params = model.params().clone();
            }
        }
    }
    let cfg_model = model.config().clone();
    let model = Model::from_params(cfg_model, best_params)?;
    Ok(Finetuned {
        model,
        best_step,
        best_score,
        curve,
        trace,
    })
}

/// Everything needed to reuse a trained model.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub model: Model,
    pub featurizer: Featurizer,
    pub targets: Option<Targets>,
    /// Free-form provenance: seeds, hashes, configs.
    pub meta: serde_json::Value,
}

impl SavedModel {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let manifest = json!({
            "model": self.model.config(),
            "featurizer": self.featurizer,
            "targets": self.targets,
            "meta": self.meta,
        });
        Checkpoint::new(manifest, self.model.params().clone()).save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let field = |k: &str| {
            ck.manifest
                .get(k)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("checkpoint manifest lacks {k:?}")))
        };
        let cfg: ModelConfig = serde_json::from_value(field("model")?)?;
        let featurizer: Featurizer = serde_json::from_value(field("featurizer")?)?;
        let targets: Option<Targets> = serde_json::from_value(field("targets")?)?;
        let meta = ck.manifest.get("meta").cloned().unwrap_or(serde_json::Value::Null);
        let model = Model::from_params(cfg, ck.params)?;
        Ok(Self {
            model,
            featurizer,
            targets,
            meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = ScheduleConfig {
            steps: 10,
            batch_size: 1,
            warmup_steps: 2,
            final_lr_fraction: 0.0,
        };
        assert_eq!(s.lr_at(1.0, 0), 0.5);
        assert_eq!(s.lr_at(1.0, 1), 1.0);
        assert_eq!(s.lr_at(1.0, 2), 1.0);
        assert!((s.lr_at(1.0, 6) - 0.5).abs() < 1e-12);
        assert_eq!(s.lr_at(1.0, 10), 0.0);
        let flat = ScheduleConfig {
            warmup_steps: 0,
            final_lr_fraction: 1.0,
            ..s
        };
        assert_eq!(flat.lr_at(2.0, 0), 2.0);
        assert_eq!(flat.lr_at(2.0, 9), 2.0);
    }

    #[test]
    fn batches_cover_each_epoch() {
        let mut b = Batches::new(5, 3);
        let mut seen: Vec<usize> = (0..5).flat_map(|_| b.next_batch(1)).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(b.next_batch(9).len(), 5);
    }

    #[test]
    fn config_validation() {
        assert!(PretrainConfig::default().validate().is_ok());
        let bad = PretrainConfig {
            p_mlm: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().unwrap_err().is_config());
        let no_mpm = PretrainConfig {
            mpm: false,
            p_mpm: 7.0,
            ..Default::default()
        };
        assert!(no_mpm.validate().is_ok());
        let f = FinetuneConfig {
            eval_every: 0,
            ..Default::default()
        };
        assert!(f.validate().unwrap_err().is_config());
    }
}
