//! Entity labelling, decoding, scoring and the segment-swap perturbation.
//!
//! Predictions are always mapped back to the canonical reading order of the
//! document before BIO decoding, so a model whose inputs are invariant to
//! the serialisation order also produces invariant entity spans.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doc::{group_lines, normalize_document, reading_order, BBox, Document, LayoutDoc, OneDMode, TwoDMode};
use crate::error::{Error, Result};
use crate::model::{Model, ModelInput};
use crate::seed::derive_seed;
use crate::tokens::{encode_in_order, TokenSequence, Vocabulary, WordRef};

/// Tokenizer and position settings shared by training and inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub vocab: Vocabulary,
    pub one_d: OneDMode,
    pub two_d: TwoDMode,
    pub max_len: usize,
}

impl Featurizer {
    /// Encode `doc` in its current serialisation order.
    pub fn encode(&self, doc: &LayoutDoc) -> Result<TokenSequence> {
        encode_in_order(doc, &self.vocab, self.one_d, self.two_d, self.max_len)
    }
}

/// Normalise every document, keeping the reading order.
pub fn layout_all(docs: &[Document]) -> Result<Vec<LayoutDoc>> {
    docs.iter().map(normalize_document).collect()
}

/// BIO label inventory: `O` is 0, tag `i` has `B` at `1 + 2i` and `I` at
/// `2 + 2i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    tags: Vec<String>,
}

impl LabelSet {
    pub fn new(tags: impl IntoIterator<Item = impl Into<String>>) -> Result<Self> {
        let tags: Vec<String> = tags.into_iter().map(Into::into).collect();
        let unique: BTreeSet<&String> = tags.iter().collect();
        if unique.len() != tags.len() {
            return Err(Error::invalid("duplicate tag in label set"));
        }
        if tags.iter().any(|t| t.is_empty()) {
            return Err(Error::invalid("empty tag name"));
        }
        Ok(Self { tags })
    }

    /// Sorted set of tags appearing on any word.
    pub fn from_docs<'a>(docs: impl IntoIterator<Item = &'a LayoutDoc>) -> Self {
        let tags: BTreeSet<String> = docs
            .into_iter()
            .flat_map(|d| d.segments.iter().flat_map(|s| s.words.iter()))
            .filter_map(|w| w.label.clone())
            .collect();
        Self {
            tags: tags.into_iter().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn num_labels(&self) -> usize {
        1 + 2 * self.tags.len()
    }

    pub fn tag_index(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn begin(&self, tag: usize) -> usize {
        1 + 2 * tag
    }

    pub fn inside(&self, tag: usize) -> usize {
        2 + 2 * tag
    }

    /// Tag index of a non-`O` label.
    pub fn tag_of(&self, label: usize) -> Option<usize> {
        (label > 0 && label < self.num_labels()).then(|| (label - 1) / 2)
    }

    pub fn is_begin(&self, label: usize) -> bool {
        label > 0 && label % 2 == 1
    }

    pub fn name(&self, label: usize) -> String {
        match self.tag_of(label) {
            None => "O".into(),
            Some(t) if self.is_begin(label) => format!("B-{}", self.tags[t]),
            Some(t) => format!("I-{}", self.tags[t]),
        }
    }
}

/// Words of `doc` in canonical reading order (independent of `doc.order`).
pub fn canonical_words(doc: &LayoutDoc) -> Vec<WordRef> {
    let boxes: Vec<BBox> = doc.segments.iter().map(|s| s.bbox).collect();
    reading_order(&boxes)
        .into_iter()
        .flat_map(|s| (0..doc.segments[s].words.len()).map(move |w| WordRef { segment_id: s, word: w }))
        .collect()
}

/// Gold BIO labels in canonical order. A run of equally tagged consecutive
/// words forms one entity. Tags missing from `labels` are an error.
pub fn bio_labels(doc: &LayoutDoc, labels: &LabelSet) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for r in canonical_words(doc) {
        let tag = match &doc.word(r.segment_id, r.word).label {
            None => None,
            Some(t) => Some(labels.tag_index(t).ok_or_else(|| {
                Error::validation(&doc.doc_id, format!("tag {t:?} is not in the label set"))
            })?),
        };
        out.push(match tag {
            None => 0,
            Some(t) if prev == Some(t) => labels.inside(t),
            Some(t) => labels.begin(t),
        });
        prev = tag;
    }
    Ok(out)
}

/// A labelled span of words `[start, end)` in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub tag: usize,
    pub start: usize,
    pub end: usize,
}

/// Decode BIO labels into spans. An `I` label that does not continue a span
/// of the same tag opens a new span, as if it were `B`.
pub fn decode_bio(seq: &[usize], labels: &LabelSet) -> Vec<Span> {
    let mut spans: Vec<Span> = Vec::new();
    let mut open: Option<Span> = None;
    for (i, &l) in seq.iter().enumerate() {
        let tag = labels.tag_of(l);
        let continues = matches!((&open, tag), (Some(s), Some(t)) if s.tag == t && !labels.is_begin(l));
        if continues {
            if let Some(s) = open.as_mut() {
                s.end = i + 1;
            }
            continue;
        }
        spans.extend(open.take());
        open = tag.map(|t| Span {
            tag: t,
            start: i,
            end: i + 1,
        });
    }
    spans.extend(open);
    spans
}

/// Per-word predicted labels in canonical order; words cut off by the
/// length limit are predicted `O`.
pub fn predict_word_labels(model: &Model, feat: &Featurizer, doc: &LayoutDoc) -> Result<Vec<usize>> {
    let canon = canonical_words(doc);
    let index: HashMap<WordRef, usize> = canon.iter().enumerate().map(|(i, r)| (*r, i)).collect();
    let seq = feat.encode(doc)?;
    let states = model.encode_values(&ModelInput::from_sequence(&seq))?;
    let mut tape = layoutkit_tensor::Tape::with_params(model.params());
    let s = tape.constant(states);
    let firsts = seq.first_tokens();
    let mut out = vec![0; canon.len()];
    if firsts.is_empty() {
        return Ok(out);
    }
    let logits = crate::model::token_logits(&mut tape, model, s, &firsts)?;
    let v = tape.value(logits);
    for (w, word) in seq.words.iter().enumerate() {
        out[index[&word.source]] = argmax(v.row(w));
    }
    Ok(out)
}

pub fn predict_entities(model: &Model, feat: &Featurizer, labels: &LabelSet, doc: &LayoutDoc) -> Result<Vec<Span>> {
    if model.token_labels() != Some(labels.num_labels()) {
        return Err(Error::invalid(format!(
            "model predicts {:?} token labels but the label set has {}",
            model.token_labels(),
            labels.num_labels()
        )));
    }
    Ok(decode_bio(&predict_word_labels(model, feat, doc)?, labels))
}

/// Predicted document class index.
pub fn predict_class(model: &Model, feat: &Featurizer, doc: &LayoutDoc) -> Result<usize> {
    let seq = feat.encode(doc)?;
    let states = model.encode_values(&ModelInput::from_sequence(&seq))?;
    let mut tape = layoutkit_tensor::Tape::with_params(model.params());
    let s = tape.constant(states);
    let logits = crate::model::doc_logits(&mut tape, model, s)?;
    Ok(argmax(tape.value(logits).row(0)))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Level {
    /// Per-word tag match, `O` excluded.
    Word,
    /// Exact span match.
    Entity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Score {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub level: F1Level,
    pub per_tag: BTreeMap<String, Score>,
    /// Micro average over tags.
    pub overall: Score,
}

/// One document's gold and predicted spans plus its word count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DocSpans {
    pub words: usize,
    pub gold: Vec<Span>,
    pub pred: Vec<Span>,
}

fn word_tags(spans: &[Span], n: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; n];
    for s in spans {
        for t in out.iter_mut().take(s.end.min(n)).skip(s.start) {
            *t = Some(s.tag);
        }
    }
    out
}

pub fn f1(docs: &[DocSpans], labels: &LabelSet, level: F1Level) -> F1Report {
    let k = labels.tags().len();
    let (mut tp, mut fp, mut fn_) = (vec![0; k], vec![0; k], vec![0; k]);
    for d in docs {
        match level {
            F1Level::Entity => {
                let gold: BTreeSet<&Span> = d.gold.iter().collect();
                let pred: BTreeSet<&Span> = d.pred.iter().collect();
                for s in &pred {
                    if gold.contains(s) {
                        tp[s.tag] += 1;
                    } else {
                        fp[s.tag] += 1;
                    }
                }
                for s in gold.difference(&pred) {
                    fn_[s.tag] += 1;
                }
            }
            F1Level::Word => {
                let g = word_tags(&d.gold, d.words);
                let p = word_tags(&d.pred, d.words);
                for (g, p) in g.into_iter().zip(p) {
                    match (g, p) {
                        (Some(a), Some(b)) if a == b => tp[a] += 1,
                        (g, p) => {
                            if let Some(b) = p {
                                fp[b] += 1;
                            }
                            if let Some(a) = g {
                                fn_[a] += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    let per_tag = labels
        .tags()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), Score::from_counts(tp[i], fp[i], fn_[i])))
        .collect();
    let overall = Score::from_counts(tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    F1Report { level, per_tag, overall }
}

/// Word- and entity-level scores of one evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityEval {
    pub word: F1Report,
    pub entity: F1Report,
}

pub fn evaluate_entities(model: &Model, feat: &Featurizer, labels: &LabelSet, docs: &[LayoutDoc]) -> Result<EntityEval> {
    let spans = docs
        .iter()
        .map(|d| {
            Ok(DocSpans {
                words: d.num_words(),
                gold: decode_bio(&bio_labels(d, labels)?, labels),
                pred: predict_entities(model, feat, labels, d)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EntityEval {
        word: f1(&spans, labels, F1Level::Word),
        entity: f1(&spans, labels, F1Level::Entity),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub accuracy: f64,
    /// `(correct, total)` per class.
    pub per_class: BTreeMap<String, (usize, usize)>,
}

pub fn evaluate_classes(model: &Model, feat: &Featurizer, classes: &[String], docs: &[LayoutDoc]) -> Result<ClassEval> {
    let mut per_class: BTreeMap<String, (usize, usize)> = classes.iter().map(|c| (c.clone(), (0, 0))).collect();
    let mut correct = 0;
    for d in docs {
        let gold = d
            .class
            .as_ref()
            .ok_or_else(|| Error::validation(&d.doc_id, "document has no class label"))?;
        let entry = per_class
            .get_mut(gold)
            .ok_or_else(|| Error::validation(&d.doc_id, format!("unknown class {gold:?}")))?;
        entry.1 += 1;
        if classes[predict_class(model, feat, d)?] == *gold {
            entry.0 += 1;
            correct += 1;
        }
    }
    let accuracy = if docs.is_empty() { 0.0 } else { correct as f64 / docs.len() as f64 };
    Ok(ClassEval { accuracy, per_class })
}

/// Reverse the serialisation order of segments within text lines.
///
/// Every line with at least two segments draws `u ~ U(0, 1)` from `seed`
/// and is reversed when `u < p`. The draws do not depend on `p`, so the set
/// of swapped lines grows monotonically with `p` for a fixed seed. Boxes
/// and word order within segments are untouched; 1D positions are
/// renumbered along the new order.
pub fn segment_swap(doc: &LayoutDoc, p: f64, seed: u64) -> Result<LayoutDoc> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("swap probability must lie in [0, 1], got {p}")));
    }
    let boxes: Vec<BBox> = doc.segments.iter().map(|s| s.bbox).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(boxes.len());
    for mut line in group_lines(&boxes) {
        if line.len() >= 2 {
            let u: f64 = rng.random();
            if u < p {
                line.reverse();
            }
        }
        order.extend(line);
    }
    let mut out = doc.clone();
    out.order = order;
    if let Some(mode) = doc.one_d {
        crate::doc::number_words(&mut out, mode);
    }
    Ok(out)
}

/// Fraction of multi-segment lines whose order differs from reading order.
pub fn swapped_line_fraction(original: &LayoutDoc, swapped: &LayoutDoc) -> (usize, usize) {
    let boxes: Vec<BBox> = original.segments.iter().map(|s| s.bbox).collect();
    let pos: HashMap<usize, usize> = swapped.order.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut eligible = 0;
    let mut changed = 0;
    for line in group_lines(&boxes) {
        if line.len() >= 2 {
            eligible += 1;
            if line.windows(2).any(|w| pos[&w[0]] > pos[&w[1]]) {
                changed += 1;
            }
        }
    }
    (changed, eligible)
}

pub const DEFAULT_SWAP_LEVELS: [f64; 4] = [0.0, 0.1, 0.2, 0.3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub p_swap: f64,
    pub eval: EntityEval,
}

/// Entity scores under increasing segment-swap probabilities. Each document
/// uses `repeats` swap seeds derived from `seed` and its id; counts are
/// pooled over repeats.
pub fn robustness_report(
    model: &Model,
    feat: &Featurizer,
    labels: &LabelSet,
    docs: &[LayoutDoc],
    levels: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be positive"));
    }
    let gold = docs
        .iter()
        .map(|d| Ok(decode_bio(&bio_labels(d, labels)?, labels)))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(levels.len());
    for &p in levels {
        let mut spans = Vec::with_capacity(docs.len() * repeats);
        for (d, g) in docs.iter().zip(&gold) {
            for r in 0..repeats {
                let swapped = segment_swap(d, p, derive_seed(seed, "segment-swap", &d.doc_id, r as u64))?;
                spans.push(DocSpans {
                    words: d.num_words(),
                    gold: g.clone(),
                    pred: predict_entities(model, feat, labels, &swapped)?,
                });
                if p == 0.0 {
                    // identical input for every repeat
                    for _ in 1..repeats {
                        spans.push(spans.last().expect("just pushed").clone());
                    }
                    break;
                }
            }
        }
        rows.push(RobustnessRow {
            p_swap: p,
            eval: EntityEval {
                word: f1(&spans, labels, F1Level::Word),
                entity: f1(&spans, labels, F1Level::Entity),
            },
        });
    }
    Ok(rows)
}
