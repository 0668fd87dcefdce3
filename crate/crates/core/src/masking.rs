//! Seeded masking decisions for masked language modelling and masked
//! position modelling.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doc::{BBox, QBox, COORD_BINS};
use crate::error::{Error, Result};
use crate::tokens::{SeqSegment, TokenSequence, MASK, NUM_SPECIAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlmStrategy {
    /// Every non-special token independently.
    Naive,
    /// Whole words.
    Wwm,
    /// Whole words, with segment-boundary words at three times the rate.
    WwmLam,
}

impl MlmStrategy {
    pub fn is_whole_word(self) -> bool {
        !matches!(self, MlmStrategy::Naive)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlmAction {
    ReplaceWithMask,
    ReplaceWithRandom,
    Keep,
}

/// Which tokens an MLM step will corrupt and what they must recover.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmPlan {
    pub strategy: MlmStrategy,
    /// Sorted token positions.
    pub masked: Vec<usize>,
    /// Original ids at masked positions, `None` elsewhere.
    pub labels: Vec<Option<u32>>,
    /// Per-token action; filled by [`apply_mlm`], `None` for unmasked tokens.
    pub actions: Vec<Option<MlmAction>>,
    /// Units that were masked together: one entry per word (whole-word
    /// strategies) or per token (naive), holding token positions.
    pub units: Vec<Vec<usize>>,
}

impl MlmPlan {
    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    /// Words with at least one masked token.
    pub fn masked_words(&self, seq: &TokenSequence) -> HashSet<usize> {
        self.masked
            .iter()
            .filter_map(|&t| seq.word_index[t])
            .collect()
    }
}

/// Masking probability for one word under `strategy`.
pub fn word_mask_probability(seq: &TokenSequence, word: usize, strategy: MlmStrategy, p_mlm: f64) -> f64 {
    match strategy {
        MlmStrategy::WwmLam if seq.is_boundary_word(word) => (3.0 * p_mlm).min(1.0),
        _ => p_mlm,
    }
}

pub fn plan_mlm(seq: &TokenSequence, strategy: MlmStrategy, p_mlm: f64, seed: u64) -> Result<MlmPlan> {
    if !(p_mlm > 0.0 && p_mlm < 1.0) {
        return Err(Error::invalid(format!("p_mlm must lie in (0, 1), got {p_mlm}")));
    }
    if seq.words.is_empty() {
        return Err(Error::invalid("sequence has no maskable tokens"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut units = Vec::new();
    match strategy {
        MlmStrategy::Naive => {
            for t in 0..seq.len() {
                if !seq.special[t] && rng.random::<f64>() < p_mlm {
                    units.push(vec![t]);
                }
            }
        }
        MlmStrategy::Wwm | MlmStrategy::WwmLam => {
            for (w, word) in seq.words.iter().enumerate() {
                let p = word_mask_probability(seq, w, strategy, p_mlm);
                if rng.random::<f64>() < p {
                    units.push(word.tokens.clone().collect());
                }
            }
        }
    }
    let mut labels = vec![None; seq.len()];
    let mut masked: Vec<usize> = units.iter().flatten().copied().collect();
    masked.sort_unstable();
    for &t in &masked {
        labels[t] = Some(seq.tokens[t]);
    }
    Ok(MlmPlan {
        strategy,
        masked,
        labels,
        actions: vec![None; seq.len()],
        units,
    })
}

/// Fractions of masked units replaced by `[MASK]`, by a random token, or
/// left unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplacementPolicy {
    pub mask: f64,
    pub random: f64,
    pub keep: f64,
}

impl Default for ReplacementPolicy {
    fn default() -> Self {
        Self {
            mask: 0.8,
            random: 0.1,
            keep: 0.1,
        }
    }
}

impl ReplacementPolicy {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.mask, self.random, self.keep];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "replacement fractions must be in [0, 1] and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMlm {
    pub seq: TokenSequence,
    /// Original token ids at masked positions; `None` is the ignore marker.
    pub labels: Vec<Option<u32>>,
    pub plan: MlmPlan,
}

/// Corrupt the tokens chosen by `plan`. Actions are drawn once per masking
/// unit, so every token of a whole-word unit shares its action. Positions
/// and boxes are untouched.
pub fn apply_mlm(
    seq: &TokenSequence,
    plan: &MlmPlan,
    policy: ReplacementPolicy,
    vocab_size: usize,
    seed: u64,
) -> Result<MaskedMlm> {
    if plan.labels.len() != seq.len() {
        return Err(Error::invalid(format!(
            "plan covers {} tokens but the sequence has {}",
            plan.labels.len(),
            seq.len()
        )));
    }
    policy.validate()?;
    if vocab_size <= NUM_SPECIAL as usize {
        return Err(Error::invalid("vocabulary has no regular tokens"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = seq.clone();
    let mut plan = plan.clone();
    for unit in &plan.units {
        let u: f64 = rng.random();
        let action = if u < policy.mask {
            MlmAction::ReplaceWithMask
        } else if u < policy.mask + policy.random {
            MlmAction::ReplaceWithRandom
        } else {
            MlmAction::Keep
        };
        for &t in unit {
            if seq.special[t] {
                return Err(Error::invalid(format!("plan masks special token at {t}")));
            }
            plan.actions[t] = Some(action);
            match action {
                MlmAction::ReplaceWithMask => out.tokens[t] = MASK,
                MlmAction::ReplaceWithRandom => {
                    out.tokens[t] = rng.random_range(NUM_SPECIAL..vocab_size as u32)
                }
                MlmAction::Keep => {}
            }
        }
    }
    Ok(MaskedMlm {
        seq: out,
        labels: plan.labels.clone(),
        plan,
    })
}

/// Words whose 2D position will be hidden and regressed.
#[derive(Debug, Clone, PartialEq)]
pub struct MpmSelection {
    pub words: Vec<usize>,
    /// One distinct pseudo height in `1..=1000` per selected word.
    pub pseudo_heights: Vec<u16>,
    /// Original `[0, 1]` word boxes.
    pub targets: Vec<BBox>,
}

impl MpmSelection {
    pub fn empty() -> Self {
        Self {
            words: Vec::new(),
            pseudo_heights: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Select each word independently with `p_mpm`, skipping words already
/// masked by `mlm`, and attach distinct pseudo heights.
pub fn select_mpm(seq: &TokenSequence, p_mpm: f64, seed: u64, mlm: Option<&MlmPlan>) -> Result<MpmSelection> {
    if !(p_mpm > 0.0 && p_mpm < 1.0) {
        return Err(Error::invalid(format!("p_mpm must lie in (0, 1), got {p_mpm}")));
    }
    let excluded = mlm.map(|p| p.masked_words(seq)).unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = Vec::new();
    for w in 0..seq.words.len() {
        // draw for every word so the stream does not depend on the exclusions
        let hit = rng.random::<f64>() < p_mpm;
        if hit && !excluded.contains(&w) && seq.words[w].bbox.area() > 0.0 {
            words.push(w);
        }
    }
    attach_pseudo_heights(seq, words, &mut rng)
}

/// Build a selection over exactly `words` (deduplicated, sorted).
pub fn select_mpm_words(seq: &TokenSequence, words: &[usize], seed: u64) -> Result<MpmSelection> {
    let mut ws: Vec<usize> = words.to_vec();
    ws.sort_unstable();
    ws.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    attach_pseudo_heights(seq, ws, &mut rng)
}

fn attach_pseudo_heights(seq: &TokenSequence, words: Vec<usize>, rng: &mut ChaCha8Rng) -> Result<MpmSelection> {
    if let Some(&bad) = words.iter().find(|&&w| w >= seq.words.len()) {
        return Err(Error::invalid(format!(
            "selected word {bad} is not in the sequence ({} words kept)",
            seq.words.len()
        )));
    }
    if words.len() > COORD_BINS as usize {
        return Err(Error::invalid("more selected words than pseudo heights"));
    }
    let heights = sample(rng, COORD_BINS as usize, words.len())
        .into_iter()
        .map(|h| h as u16 + 1)
        .collect();
    let targets = words.iter().map(|&w| seq.words[w].bbox).collect();
    Ok(MpmSelection {
        words,
        pseudo_heights: heights,
        targets,
    })
}

/// Split every segment containing a selected word into pieces: each
/// selected word alone, and each maximal run of unselected words together.
/// Touched segments get fresh ids; pieces get tight-union boxes; 1D
/// positions are recomputed (restarting at 1 per piece in local mode).
pub fn split_segments(seq: &TokenSequence, sel: &MpmSelection) -> Result<TokenSequence> {
    if let Some(&bad) = sel.words.iter().find(|&&w| w >= seq.words.len()) {
        return Err(Error::invalid(format!(
            "selected word {bad} is not in the sequence ({} words kept)",
            seq.words.len()
        )));
    }
    let selected: HashSet<usize> = sel.words.iter().copied().collect();
    let mut next_id = seq.segments.iter().map(|s| s.id).max().map_or(0, |m| m + 1);
    let mut out = seq.clone();
    out.segments.clear();
    for seg in &seq.segments {
        let touched = seg.words.clone().any(|w| selected.contains(&w));
        if !touched {
            let si = out.segments.len();
            for w in seg.words.clone() {
                out.words[w].segment = si;
            }
            out.segments.push(seg.clone());
            continue;
        }
        let mut start = seg.words.start;
        while start < seg.words.end {
            let end = if selected.contains(&start) {
                start + 1
            } else {
                let mut e = start;
                while e < seg.words.end && !selected.contains(&e) {
                    e += 1;
                }
                e
            };
            let bbox = BBox::union_all(seq.words[start..end].iter().map(|w| &w.bbox))
                .expect("piece is non-empty");
            let si = out.segments.len();
            for w in start..end {
                out.words[w].segment = si;
            }
            out.segments.push(SeqSegment {
                id: next_id,
                bbox,
                qbox: bbox.quantize(),
                words: start..end,
            });
            next_id += 1;
            start = end;
        }
    }
    for t in 0..out.len() {
        out.segment_index[t] = out.word_index[t].map(|w| out.words[w].segment);
    }
    out.recompute_positions();
    let mode = out.two_d;
    out.resolve_boxes(mode);
    Ok(out)
}

/// Overwrite selected words' token boxes with pseudo boxes `[0,0,0,n]` and
/// return box labels (the original word box at each selected word's first
/// token, `None` elsewhere).
pub fn apply_box_masks(seq: &TokenSequence, sel: &MpmSelection) -> Result<(TokenSequence, Vec<Option<BBox>>)> {
    let distinct: HashSet<u16> = sel.pseudo_heights.iter().copied().collect();
    if distinct.len() != sel.pseudo_heights.len() {
        return Err(Error::invalid("duplicate pseudo heights in selection"));
    }
    if sel.pseudo_heights.len() != sel.words.len() || sel.targets.len() != sel.words.len() {
        return Err(Error::invalid("selection fields have mismatched lengths"));
    }
    let mut out = seq.clone();
    let mut labels = vec![None; seq.len()];
    for ((&w, &n), target) in sel.words.iter().zip(&sel.pseudo_heights).zip(&sel.targets) {
        let word = seq
            .words
            .get(w)
            .ok_or_else(|| Error::invalid(format!("selected word {w} is not in the sequence")))?;
        if seq.segments[word.segment].words.len() != 1 {
            return Err(Error::invalid(format!(
                "word {w} shares its segment; split segments before masking boxes"
            )));
        }
        for t in word.tokens.clone() {
            out.box_2d[t] = QBox::pseudo(n);
        }
        labels[word.tokens.start] = Some(*target);
    }
    Ok((out, labels))
}

/// Serialisable view of a plan, used by `inspect` and golden files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDump {
    pub tokens: Vec<u32>,
    pub pos_1d: Vec<u32>,
    pub boxes: Vec<[u16; 4]>,
    pub segment_index: Vec<Option<usize>>,
    pub mlm_actions: Vec<Option<MlmAction>>,
    pub mpm_words: Vec<usize>,
}

impl PlanDump {
    pub fn new(seq: &TokenSequence, mlm: Option<&MlmPlan>, mpm: Option<&MpmSelection>) -> Self {
        Self {
            tokens: seq.tokens.clone(),
            pos_1d: seq.pos_1d.clone(),
            boxes: seq.box_2d.iter().map(|b| b.0).collect(),
            segment_index: seq.segment_index.clone(),
            mlm_actions: mlm.map_or_else(|| vec![None; seq.len()], |p| p.actions.clone()),
            mpm_words: mpm.map_or_else(Vec::new, |s| s.words.clone()),
        }
    }
}
