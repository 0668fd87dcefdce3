//! Glue between a [`RunConfig`] and the training and evaluation functions.

use crate::config::RunConfig;
use crate::doc::{Document, LayoutDoc};
use crate::error::{Error, Result};
use crate::eval::{evaluate_entities, layout_all, EntityEval, Featurizer};
use crate::model::{Model, ModelConfig};
use crate::seed::derive_seed;
use crate::synth::CorpusSplits;
use crate::tokens::{Vocabulary, DEFAULT_CHUNK};
use crate::train::{finetune, pretrain, Finetuned, Pretrained, Targets, Task};

/// Normalised splits plus the closed vocabulary over all of them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<LayoutDoc>,
    pub dev: Vec<LayoutDoc>,
    pub test: Vec<LayoutDoc>,
}

impl Dataset {
    pub fn new(train: &[Document], dev: &[Document], test: &[Document]) -> Result<Self> {
        for d in train.iter().chain(dev).chain(test) {
            d.validate()?;
        }
        let vocab = Vocabulary::from_words(
            train
                .iter()
                .chain(dev)
                .chain(test)
                .flat_map(|d| d.segments.iter().flat_map(|s| s.words.iter().map(|w| w.text.as_str()))),
            DEFAULT_CHUNK,
        );
        Ok(Self {
            vocab,
            train: layout_all(train)?,
            dev: layout_all(dev)?,
            test: layout_all(test)?,
        })
    }

    pub fn from_splits(s: &CorpusSplits) -> Result<Self> {
        Self::new(&s.train, &s.dev, &s.test)
    }

    /// Documents used for fine-tuning label inventories: train and dev.
    pub fn labelled(&self) -> impl Iterator<Item = &LayoutDoc> + Clone {
        self.train.iter().chain(&self.dev)
    }

    pub fn targets(&self, task: Task) -> Result<Targets> {
        Targets::from_docs(task, self.labelled())
    }
}

/// The model configuration with `vocab_size = 0` resolved to `vocab`.
pub fn model_config(cfg: &RunConfig, vocab: &Vocabulary) -> Result<ModelConfig> {
    let mut m = cfg.model.clone();
    if m.vocab_size == 0 {
        m.vocab_size = vocab.len();
    } else if m.vocab_size < vocab.len() {
        return Err(Error::Config(format!(
            "model.vocab_size {} is smaller than the corpus vocabulary ({})",
            m.vocab_size,
            vocab.len()
        )));
    }
    m.validate()?;
    Ok(m)
}

pub fn featurizer(cfg: &RunConfig, vocab: &Vocabulary) -> Featurizer {
    Featurizer {
        vocab: vocab.clone(),
        one_d: cfg.position.one_d,
        two_d: cfg.position.two_d,
        max_len: cfg.position.max_len,
    }
}

/// Fresh model initialised from `seed`.
pub fn init_model(cfg: &RunConfig, vocab: &Vocabulary, seed: u64) -> Result<Model> {
    Model::new(model_config(cfg, vocab)?, derive_seed(seed, "model-init", "", 0))
}

/// Seed of the `k`-th fine-tuning repeat; repeat 0 uses the configured seed.
pub fn repeat_seed(base: u64, k: usize) -> u64 {
    if k == 0 {
        base
    } else {
        derive_seed(base, "repeat", "", k as u64)
    }
}

pub fn run_pretrain(cfg: &RunConfig, data: &Dataset) -> Result<Pretrained> {
    let model = init_model(cfg, &data.vocab, cfg.pretrain.seed)?;
    pretrain(model, &featurizer(cfg, &data.vocab), &cfg.pretrain, &data.train)
}

/// Fine-tune `start` (or a random initialisation) with the configured
/// fine-tuning seed replaced by `seed`.
pub fn run_finetune(cfg: &RunConfig, data: &Dataset, start: Option<&Model>, seed: u64) -> Result<Finetuned> {
    let mut ft = cfg.finetune.clone();
    ft.seed = seed;
    let model = match start {
        Some(m) => m.clone(),
        None => init_model(cfg, &data.vocab, seed)?,
    };
    let targets = data.targets(ft.task)?;
    finetune(model, &featurizer(cfg, &data.vocab), &ft, &targets, &data.train, &data.dev)
}

/// Test-set entity scores of an entity model.
pub fn test_entities(cfg: &RunConfig, data: &Dataset, model: &Model) -> Result<EntityEval> {
    let Targets::Entities(labels) = data.targets(Task::Entities)? else {
        unreachable!("entity targets")
    };
    evaluate_entities(model, &featurizer(cfg, &data.vocab), &labels, &data.test)
}
