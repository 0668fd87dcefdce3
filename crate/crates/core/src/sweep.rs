//! Ablation sweeps: pre-train once per grid point, fine-tune with shared
//! seeds, score on the test split.

use serde::{Deserialize, Serialize};

use crate::config::{GridValue, RunConfig, SweepAxis};
use crate::doc::{OneDMode, TwoDMode};
use crate::error::{Error, Result};
use crate::masking::MlmStrategy;
use crate::pipeline::{repeat_seed, run_finetune, run_pretrain, test_entities, Dataset};
use crate::train::Task;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GridPoint {
    PMlm(f64),
    PMpm(f64),
    Position(OneDMode, TwoDMode),
    Strategy { strategy: MlmStrategy, mpm: bool },
}

impl GridPoint {
    pub fn parse(axis: SweepAxis, v: &GridValue) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("sweep.grid: {v} is not a valid {what}"));
        let prob = |v: &GridValue| match v {
            GridValue::Number(p) if *p > 0.0 && *p < 1.0 => Ok(*p),
            _ => Err(bad("probability in (0, 1)")),
        };
        match axis {
            SweepAxis::PMlm => Ok(GridPoint::PMlm(prob(v)?)),
            SweepAxis::PMpm => Ok(GridPoint::PMpm(prob(v)?)),
            SweepAxis::Position => {
                let GridValue::Name(s) = v else {
                    return Err(bad("position such as \"local/segment\""));
                };
                let (a, b) = s.split_once('/').ok_or_else(|| bad("position such as \"local/segment\""))?;
                let one_d = match a {
                    "global" => OneDMode::Global,
                    "local" => OneDMode::Local,
                    _ => return Err(bad("1D mode")),
                };
                let two_d = match b {
                    "word" => TwoDMode::Word,
                    "segment" => TwoDMode::Segment,
                    _ => return Err(bad("2D mode")),
                };
                Ok(GridPoint::Position(one_d, two_d))
            }
            SweepAxis::Strategy => {
                let GridValue::Name(s) = v else {
                    return Err(bad("strategy such as \"wwm+lam+mpm\""));
                };
                let (strategy, mpm) = match s.as_str() {
                    "naive" => (MlmStrategy::Naive, false),
                    "naive+mpm" => (MlmStrategy::Naive, true),
                    "wwm" => (MlmStrategy::Wwm, false),
                    "wwm+mpm" => (MlmStrategy::Wwm, true),
                    "wwm+lam" => (MlmStrategy::WwmLam, false),
                    "wwm+lam+mpm" => (MlmStrategy::WwmLam, true),
                    _ => return Err(bad("strategy")),
                };
                Ok(GridPoint::Strategy { strategy, mpm })
            }
        }
    }

    /// `base` with this point's setting applied.
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        match *self {
            GridPoint::PMlm(p) => c.pretrain.p_mlm = p,
            GridPoint::PMpm(p) => {
                c.pretrain.p_mpm = p;
                c.pretrain.mpm = true;
            }
            GridPoint::Position(a, b) => {
                c.position.one_d = a;
                c.position.two_d = b;
            }
            GridPoint::Strategy { strategy, mpm } => {
                c.pretrain.strategy = strategy;
                c.pretrain.mpm = mpm;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Grid value as written, or `random-init` for the baseline row.
    pub point: String,
    pub pretrained: bool,
    pub seeds: Vec<u64>,
    pub entity_f1: Vec<f64>,
    pub word_f1: Vec<f64>,
    pub entity_mean: f64,
    pub entity_std: f64,
    pub word_mean: f64,
    pub word_std: f64,
    /// Mean total loss over the last tenth of pre-training.
    pub final_pretrain_loss: Option<f64>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

fn row(point: String, cfg: &RunConfig, data: &Dataset, pretrain: bool) -> Result<SweepRow> {
    let (start, final_loss) = if pretrain {
        let p = run_pretrain(cfg, data)?;
        let tail = (p.trace.len() / 10).max(1);
        let last = &p.trace[p.trace.len().saturating_sub(tail)..];
        let loss = if last.is_empty() {
            None
        } else {
            Some(last.iter().map(|r| r.loss).sum::<f64>() / last.len() as f64)
        };
        (Some(p.model), loss)
    } else {
        (None, None)
    };
    let mut seeds = Vec::new();
    let (mut ent, mut word) = (Vec::new(), Vec::new());
    for k in 0..cfg.sweep.seeds {
        let seed = repeat_seed(cfg.finetune.seed, k);
        let ft = run_finetune(cfg, data, start.as_ref(), seed)?;
        let e = test_entities(cfg, data, &ft.model)?;
        seeds.push(seed);
        ent.push(e.entity.overall.f1);
        word.push(e.word.overall.f1);
    }
    let (entity_mean, entity_std) = mean_std(&ent);
    let (word_mean, word_std) = mean_std(&word);
    Ok(SweepRow {
        point,
        pretrained: pretrain,
        seeds,
        entity_f1: ent,
        word_f1: word,
        entity_mean,
        entity_std,
        word_mean,
        word_std,
        final_pretrain_loss: final_loss,
    })
}

/// Run every grid point of `base.sweep` (plus the random-initialisation
/// baseline when enabled) on up to `jobs` worker threads. Rows come back in
/// grid order, baseline last; results do not depend on `jobs`.
pub fn ablation_sweep(base: &RunConfig, data: &Dataset, jobs: usize) -> Result<Vec<SweepRow>> {
    if base.finetune.task != Task::Entities {
        return Err(Error::Config("sweeps score entity fine-tuning; set finetune.task = \"entities\"".into()));
    }
    if base.sweep.grid.is_empty() {
        return Err(Error::Config("sweep.grid must not be empty".into()));
    }
    let mut units: Vec<(String, RunConfig, bool)> = base
        .sweep
        .grid
        .iter()
        .map(|g| Ok((g.to_string(), GridPoint::parse(base.sweep.axis, g)?.apply(base), true)))
        .collect::<Result<_>>()?;
    if base.sweep.random_baseline {
        units.push(("random-init".into(), base.clone(), false));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start workers: {e}")))?;
    pool.install(|| {
        use rayon::prelude::*;
        units
            .par_iter()
            .map(|(name, cfg, pre)| row(name.clone(), cfg, data, *pre))
            .collect()
    })
}
