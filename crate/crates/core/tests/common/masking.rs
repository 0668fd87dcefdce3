//! Monte Carlo rates of the masking plans on synthetic pages.

use layoutkit::doc::{normalize_document, OneDMode, TwoDMode};
use layoutkit::masking::{apply_mlm, plan_mlm, select_mpm, MlmAction, MlmStrategy, ReplacementPolicy};
use layoutkit::seed::derive_seed;
use layoutkit::synth::{generate_corpus, GenSpec};
use layoutkit::tokens::{encode_document, TokenSequence, Vocabulary};

pub const DRAWS: u64 = 40;

#[derive(Debug, Clone, Copy, Default)]
pub struct Rate {
    pub hits: usize,
    pub n: usize,
}

impl Rate {
    pub fn add(&mut self, hit: bool) {
        self.n += 1;
        self.hits += hit as usize;
    }

    pub fn value(&self) -> f64 {
        self.hits as f64 / self.n as f64
    }

    pub fn within(&self, p: f64, tol: f64) -> bool {
        (self.value() - p).abs() <= tol
    }
}

pub struct Sample {
    pub seqs: Vec<TokenSequence>,
    pub vocab_size: usize,
}

pub fn sample() -> Sample {
    let spec = GenSpec {
        doc_count: 60,
        seed: 3,
        ..GenSpec::default()
    };
    let docs: Vec<_> = generate_corpus(&spec).unwrap().all().cloned().collect();
    let vocab = Vocabulary::from_words(
        docs.iter()
            .flat_map(|d| d.segments.iter().flat_map(|s| s.words.iter().map(|w| w.text.clone()))),
        3,
    );
    let seqs = docs
        .iter()
        .map(|d| encode_document(&normalize_document(d).unwrap(), &vocab, OneDMode::Local, TwoDMode::Segment, 512).unwrap())
        .collect();
    Sample {
        seqs,
        vocab_size: vocab.len(),
    }
}

fn seed(tag: u64, doc: usize, draw: u64) -> u64 {
    derive_seed(tag, "test", &doc.to_string(), draw)
}

/// Word masking rates under layout-aware masking at 25%, split into
/// (interior, boundary) words.
pub fn lam_rates(s: &Sample) -> (Rate, Rate) {
    let (mut interior, mut boundary) = (Rate::default(), Rate::default());
    for (i, seq) in s.seqs.iter().enumerate() {
        for d in 0..DRAWS {
            let plan = plan_mlm(seq, MlmStrategy::WwmLam, 0.25, seed(1, i, d)).unwrap();
            let masked = plan.masked_words(seq);
            for w in 0..seq.words.len() {
                let r = if seq.is_boundary_word(w) { &mut boundary } else { &mut interior };
                r.add(masked.contains(&w));
            }
        }
    }
    (interior, boundary)
}

/// Word rate of plain whole word masking.
pub fn wwm_rate(s: &Sample) -> Rate {
    let mut r = Rate::default();
    for (i, seq) in s.seqs.iter().enumerate() {
        for d in 0..DRAWS {
            let plan = plan_mlm(seq, MlmStrategy::Wwm, 0.25, seed(2, i, d)).unwrap();
            r.n += seq.words.len();
            r.hits += plan.masked_words(seq).len();
        }
    }
    r
}

/// Token rate of naive masking.
pub fn naive_rate(s: &Sample) -> Rate {
    let mut r = Rate::default();
    for (i, seq) in s.seqs.iter().enumerate() {
        for d in 0..DRAWS {
            let plan = plan_mlm(seq, MlmStrategy::Naive, 0.25, seed(3, i, d)).unwrap();
            r.n += seq.special.iter().filter(|s| !**s).count();
            r.hits += plan.len();
        }
    }
    r
}

/// Word rate of MPM selection at 15%, and the number of draws whose pseudo
/// heights were not all distinct.
pub fn mpm_rate(s: &Sample) -> (Rate, usize) {
    let mut r = Rate::default();
    let mut clashes = 0;
    for (i, seq) in s.seqs.iter().enumerate() {
        for d in 0..DRAWS {
            let sel = select_mpm(seq, 0.15, seed(4, i, d), None).unwrap();
            r.n += seq.words.iter().filter(|w| w.bbox.area() > 0.0).count();
            r.hits += sel.len();
            let mut h = sel.pseudo_heights.clone();
            h.sort_unstable();
            h.dedup();
            clashes += (h.len() != sel.len()) as usize;
        }
    }
    (r, clashes)
}

pub struct Atomicity {
    /// Words whose tokens got different actions or partial labels.
    pub violations: usize,
    pub mask: Rate,
    pub random: Rate,
}

/// Whole word strategies after replacement: every token of a word shares
/// one action.
pub fn atomicity(s: &Sample) -> Atomicity {
    let mut out = Atomicity {
        violations: 0,
        mask: Rate::default(),
        random: Rate::default(),
    };
    for (i, seq) in s.seqs.iter().enumerate() {
        for strategy in [MlmStrategy::Wwm, MlmStrategy::WwmLam] {
            for d in 0..DRAWS {
                let sd = seed(5, i, d);
                let plan = plan_mlm(seq, strategy, 0.25, sd).unwrap();
                let masked = apply_mlm(seq, &plan, ReplacementPolicy::default(), s.vocab_size, sd + 1).unwrap();
                for w in &seq.words {
                    let actions: Vec<_> = w.tokens.clone().map(|t| masked.plan.actions[t]).collect();
                    let labelled = w.tokens.clone().filter(|&t| masked.labels[t].is_some()).count();
                    if actions.windows(2).any(|a| a[0] != a[1]) || (labelled != 0 && labelled != w.tokens.len()) {
                        out.violations += 1;
                    }
                    if let Some(a) = actions[0] {
                        out.mask.add(a == MlmAction::ReplaceWithMask);
                        out.random.add(a == MlmAction::ReplaceWithRandom);
                    }
                }
            }
        }
    }
    out
}
