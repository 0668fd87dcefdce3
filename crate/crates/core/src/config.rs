//! TOML run configuration with dotted-path overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::doc::{OneDMode, TwoDMode};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_SWAP_LEVELS;
use crate::model::ModelConfig;
use crate::seed::sha256_hex;
use crate::synth::GenSpec;
use crate::train::{FinetuneConfig, PretrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PositionConfig {
    pub one_d: OneDMode,
    pub two_d: TwoDMode,
    /// Token budget per document including CLS and SEP.
    pub max_len: usize,
}

impl Default for PositionConfig {
    fn default() -> Self {
        Self {
            one_d: OneDMode::Local,
            two_d: TwoDMode::Segment,
            max_len: 160,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessConfig {
    pub levels: Vec<f64>,
    /// Swap draws per document and level.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            levels: DEFAULT_SWAP_LEVELS.to_vec(),
            repeats: 1,
            seed: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PMlm,
    PMpm,
    Position,
    Strategy,
}

/// A grid point: a probability for the `p_*` axes, a name otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Number(f64),
    Name(String),
}

impl std::fmt::Display for GridValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridValue::Number(x) => write!(f, "{x}"),
            GridValue::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub grid: Vec<GridValue>,
    /// Fine-tuning repeats per grid point.
    pub seeds: usize,
    /// Add a row fine-tuned from random initialisation.
    pub random_baseline: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Strategy,
            grid: ["naive", "wwm", "wwm+lam", "wwm+mpm", "wwm+lam+mpm"]
                .iter()
                .map(|s| GridValue::Name(s.to_string()))
                .collect(),
            seeds: 5,
            random_baseline: true,
        }
    }
}

/// Everything a command needs, resolvable from one TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces the corpus, pre-training, fine-tuning and
    /// robustness seeds.
    pub seed: Option<u64>,
    pub corpus: GenSpec,
    /// `model.vocab_size = 0` sizes the token table to the corpus vocabulary.
    pub model: ModelConfig,
    pub position: PositionConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub robustness: RobustnessConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            corpus: GenSpec::default(),
            model: ModelConfig {
                vocab_size: 0,
                max_len: 160,
                max_1d_position: 256,
                ..ModelConfig::default()
            },
            position: PositionConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            robustness: RobustnessConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse TOML text, apply `key.path=value` overrides and validate.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        // defaults come from RunConfig::default, also for partially given sections
        let mut table = toml::Table::try_from(RunConfig::default())
            .map_err(|e| Error::invalid(format!("cannot serialise defaults: {e}")))?;
        merge(&mut table, user);
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = RunConfig::deserialize(toml::Value::Table(table))
            .map_err(|e| Error::Config(e.to_string().trim().to_owned()))?;
        cfg.apply_global_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    fn apply_global_seed(&mut self) {
        if let Some(s) = self.seed {
            self.corpus.seed = s;
            self.pretrain.seed = s;
            self.finetune.seed = s;
            self.robustness.seed = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        if self.model.vocab_size != 0 {
            self.model.validate()?;
        } else {
            ModelConfig {
                vocab_size: crate::tokens::NUM_SPECIAL as usize + 1,
                ..self.model.clone()
            }
            .validate()?;
        }
        if self.position.max_len < 3 {
            return Err(Error::Config("position.max_len must be at least 3".into()));
        }
        if self.position.max_len > self.model.max_len {
            return Err(Error::Config(format!(
                "position.max_len {} exceeds model.max_len {}",
                self.position.max_len, self.model.max_len
            )));
        }
        if self.position.max_len >= self.model.max_1d_position {
            return Err(Error::Config(format!(
                "model.max_1d_position {} must exceed position.max_len {}",
                self.model.max_1d_position, self.position.max_len
            )));
        }
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.robustness.repeats == 0 {
            return Err(Error::Config("robustness.repeats must be positive".into()));
        }
        if let Some(p) = self.robustness.levels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("robustness.levels: {p} is not in [0, 1]")));
        }
        if self.sweep.grid.is_empty() {
            return Err(Error::Config("sweep.grid must not be empty".into()));
        }
        if self.sweep.seeds == 0 {
            return Err(Error::Config("sweep.seeds must be positive".into()));
        }
        for g in &self.sweep.grid {
            crate::sweep::GridPoint::parse(self.sweep.axis, g)?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialise config: {e}")))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

/// Recursively overlay `top` onto `base`; tables merge, other values replace.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Set `a.b.c=value` in `table`. The value is read as a TOML value when it
/// parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key {path:?} has an empty component")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let (last, parents) = keys.split_last().expect("split yields one key");
    let mut cur = table;
    for (i, k) in parents.iter().enumerate() {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {path:?}: {} is not a table", keys[..=i].join("."))))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let c = RunConfig::from_toml("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = RunConfig::from_toml(
            "[pretrain]\np_mlm = 0.2\n",
            &["pretrain.p_mlm=0.3".into(), "position.one_d=global".into(), "corpus.doc_count=10".into()],
        )
        .unwrap();
        assert_eq!(c.pretrain.p_mlm, 0.3);
        assert_eq!(c.position.one_d, OneDMode::Global);
        assert_eq!(c.corpus.doc_count, 10);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::from_toml("[pretrain]\np_mlmm = 0.2\n", &[]).unwrap_err();
        assert!(e.is_config());
        assert!(e.to_string().contains("p_mlmm"), "{e}");
        let e = RunConfig::from_toml("", &["bogus.key=1".into()]).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for o in ["pretrain.p_mlm=1.5", "position.max_len=400", "sweep.grid=[]", "robustness.levels=[2.0]"] {
            let e = RunConfig::from_toml("", &[o.into()]).unwrap_err();
            assert!(e.is_config(), "{o}: {e}");
        }
        assert!(RunConfig::from_toml("", &["noequals".into()]).is_err());
        assert!(RunConfig::from_toml("", &["pretrain.p_mlm.x=1".into()]).is_err());
    }

    #[test]
    fn partial_sections_keep_run_defaults() {
        let c = RunConfig::from_toml("[model]\nhidden_size = 16\nffn_size = 16\n", &[]).unwrap();
        assert_eq!(c.model.hidden_size, 16);
        assert_eq!(c.model.vocab_size, 0);
        assert_eq!(c.model.max_len, RunConfig::default().model.max_len);
    }

    #[test]
    fn global_seed_fans_out() {
        let c = RunConfig::from_toml("seed = 99\n", &[]).unwrap();
        assert_eq!((c.corpus.seed, c.pretrain.seed, c.finetune.seed), (99, 99, 99));
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }
}
