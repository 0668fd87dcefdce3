//! Fixed-width chunk tokenizer and the flat token sequence fed to the model.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::doc::{BBox, LayoutDoc, OneDMode, QBox, TwoDMode};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIAL: u32 = 5;

/// Characters per sub-word chunk.
pub const DEFAULT_CHUNK: usize = 3;

/// Closed vocabulary of sub-word chunks, special tokens first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    chunk: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    chunk: usize,
    tokens: Vec<String>,
}

impl TryFrom<VocabRepr> for Vocabulary {
    type Error = String;
    fn try_from(r: VocabRepr) -> std::result::Result<Self, String> {
        let specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
        if r.tokens.len() < specials.len() || r.tokens[..specials.len()] != specials {
            return Err("vocabulary must start with the special tokens".into());
        }
        if r.chunk == 0 {
            return Err("chunk width must be positive".into());
        }
        let index = r
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if index.len() != r.tokens.len() {
            return Err("duplicate vocabulary entry".into());
        }
        Ok(Self {
            tokens: r.tokens,
            index,
            chunk: r.chunk,
        })
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            chunk: v.chunk,
            tokens: v.tokens,
        }
    }
}

/// Split a word into consecutive chunks of `width` characters; the last
/// chunk may be shorter.
pub fn chunk_word(word: &str, width: usize) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars.chunks(width).map(|c| c.iter().collect()).collect()
}

impl Vocabulary {
    /// Build from every chunk of every word, in sorted order for stability.
    pub fn from_words<I, S>(words: I, chunk: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut pieces: Vec<String> = words
            .into_iter()
            .flat_map(|w| chunk_word(w.as_ref(), chunk))
            .collect();
        pieces.sort();
        pieces.dedup();
        let mut tokens: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tokens.extend(pieces);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            index,
            chunk,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= NUM_SPECIAL as usize
    }

    pub fn chunk(&self) -> usize {
        self.chunk
    }

    pub fn id(&self, piece: &str) -> u32 {
        self.index.get(piece).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("[UNK]", String::as_str)
    }

    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        chunk_word(word, self.chunk)
            .iter()
            .map(|p| self.id(p))
            .collect()
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIAL
    }
}

/// Identity of a word inside its source [`LayoutDoc`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WordRef {
    pub segment_id: usize,
    pub word: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqWord {
    pub text: String,
    pub bbox: BBox,
    pub qbox: QBox,
    pub label: Option<String>,
    /// Index into [`TokenSequence::segments`].
    pub segment: usize,
    pub tokens: Range<usize>,
    pub source: WordRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqSegment {
    pub id: usize,
    pub bbox: BBox,
    pub qbox: QBox,
    /// Range into [`TokenSequence::words`].
    pub words: Range<usize>,
}

/// Flat token stream with word/segment alignment and layout features.
/// Words and segments are stored in serialisation order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub word_index: Vec<Option<usize>>,
    pub segment_index: Vec<Option<usize>>,
    pub pos_1d: Vec<u32>,
    pub box_2d: Vec<QBox>,
    pub special: Vec<bool>,
    pub words: Vec<SeqWord>,
    pub segments: Vec<SeqSegment>,
    pub one_d: OneDMode,
    pub two_d: TwoDMode,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// First token of every word, in word order.
    pub fn first_tokens(&self) -> Vec<usize> {
        self.words.iter().map(|w| w.tokens.start).collect()
    }

    /// Whether word `w` opens or closes its segment.
    pub fn is_boundary_word(&self, w: usize) -> bool {
        let seg = &self.segments[self.words[w].segment];
        w == seg.words.start || w + 1 == seg.words.end
    }

    /// Recompute per-token 1D positions from the segment structure.
    ///
    /// Local: tokens restart at 1 in every segment. Global: tokens count up
    /// from 1 over the whole sequence. CLS is 0; SEP is `max + 1` in global
    /// mode and 0 in local mode.
    pub fn recompute_positions(&mut self) {
        let n = self.tokens.len();
        let mut next = 1u32;
        let mut last_seg = None;
        let mut max = 0;
        for i in 0..n {
            match self.segment_index[i] {
                None => self.pos_1d[i] = 0,
                Some(s) => {
                    if self.one_d == OneDMode::Local && last_seg != Some(s) {
                        next = 1;
                    }
                    last_seg = Some(s);
                    self.pos_1d[i] = next;
                    max = max.max(next);
                    next += 1;
                }
            }
        }
        if let Some(last) = self.tokens.last() {
            if *last == SEP && self.special[n - 1] {
                self.pos_1d[n - 1] = match self.one_d {
                    OneDMode::Global => max + 1,
                    OneDMode::Local => 0,
                };
            }
        }
    }

    /// Re-derive every token's box from its word or segment under `mode`.
    pub fn resolve_boxes(&mut self, mode: TwoDMode) {
        self.two_d = mode;
        for i in 0..self.tokens.len() {
            self.box_2d[i] = match (self.word_index[i], mode) {
                (None, _) => QBox::ZERO,
                (Some(w), TwoDMode::Word) => self.words[w].qbox,
                (Some(w), TwoDMode::Segment) => self.segments[self.words[w].segment].qbox,
            };
        }
    }
}

/// Serialise a positioned document into tokens, dropping whole trailing
/// segments until the sequence (including CLS and SEP) fits in `max_len`.
/// Token boxes start in word mode; see [`resolve_token_boxes`].
pub fn tokenize(doc: &LayoutDoc, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    let one_d = doc
        .one_d
        .ok_or_else(|| Error::validation(&doc.doc_id, "positions not assigned"))?;
    let mut budget = max_len.saturating_sub(2);
    let mut kept = Vec::new();
    let mut encoded = Vec::new();
    for &s in &doc.order {
        let seg = &doc.segments[s];
        let ids: Vec<Vec<u32>> = seg.words.iter().map(|w| vocab.encode_word(&w.text)).collect();
        let n: usize = ids.iter().map(Vec::len).sum();
        if n > budget {
            break;
        }
        budget -= n;
        kept.push(s);
        encoded.push(ids);
    }
    if kept.is_empty() {
        return Err(Error::validation(
            &doc.doc_id,
            format!("no complete segment fits in max_len {max_len}"),
        ));
    }

    let mut seq = TokenSequence {
        tokens: vec![CLS],
        word_index: vec![None],
        segment_index: vec![None],
        pos_1d: vec![0],
        box_2d: vec![QBox::ZERO],
        special: vec![true],
        words: Vec::new(),
        segments: Vec::new(),
        one_d,
        two_d: TwoDMode::Word,
    };
    for (&s, ids) in kept.iter().zip(&encoded) {
        let seg = &doc.segments[s];
        let si = seq.segments.len();
        let w_start = seq.words.len();
        for (wi, (w, wids)) in seg.words.iter().zip(ids).enumerate() {
            let t_start = seq.tokens.len();
            let widx = seq.words.len();
            for &id in wids {
                seq.tokens.push(id);
                seq.word_index.push(Some(widx));
                seq.segment_index.push(Some(si));
                seq.pos_1d.push(0);
                seq.box_2d.push(w.qbox);
                seq.special.push(false);
            }
            seq.words.push(SeqWord {
                text: w.text.clone(),
                bbox: w.bbox,
                qbox: w.qbox,
                label: w.label.clone(),
                segment: si,
                tokens: t_start..seq.tokens.len(),
                source: WordRef {
                    segment_id: seg.id,
                    word: wi,
                },
            });
        }
        seq.segments.push(SeqSegment {
            id: seg.id,
            bbox: seg.bbox,
            qbox: seg.qbox,
            words: w_start..seq.words.len(),
        });
    }
    seq.tokens.push(SEP);
    seq.word_index.push(None);
    seq.segment_index.push(None);
    seq.pos_1d.push(0);
    seq.box_2d.push(QBox::ZERO);
    seq.special.push(true);
    seq.recompute_positions();
    Ok(seq)
}

/// Assign every token the box of its word (`Word`) or segment (`Segment`).
pub fn resolve_token_boxes(seq: &TokenSequence, mode: TwoDMode) -> TokenSequence {
    let mut out = seq.clone();
    out.resolve_boxes(mode);
    out
}

/// Position + tokenize + resolve in one go.
pub fn encode_document(
    doc: &LayoutDoc,
    vocab: &Vocabulary,
    one_d: OneDMode,
    two_d: TwoDMode,
    max_len: usize,
) -> Result<TokenSequence> {
    let positioned = crate::doc::assign_positions(doc, one_d);
    let mut seq = tokenize(&positioned, vocab, max_len)?;
    seq.resolve_boxes(two_d);
    Ok(seq)
}

/// Like [`encode_document`] but keeps `doc.order`, so a perturbed
/// serialisation (for example a segment swap) is encoded as given.
pub fn encode_in_order(
    doc: &LayoutDoc,
    vocab: &Vocabulary,
    one_d: OneDMode,
    two_d: TwoDMode,
    max_len: usize,
) -> Result<TokenSequence> {
    let mut positioned = doc.clone();
    crate::doc::number_words(&mut positioned, one_d);
    let mut seq = tokenize(&positioned, vocab, max_len)?;
    seq.resolve_boxes(two_d);
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::{assign_positions, normalize_document, Document, Segment, Word};

    fn doc(segments: &[&[&str]]) -> LayoutDoc {
        // one segment per line, words laid out left to right
        let segs = segments
            .iter()
            .enumerate()
            .map(|(li, words)| {
                let y = 10.0 + 40.0 * li as f64;
                let ws: Vec<Word> = words
                    .iter()
                    .enumerate()
                    .map(|(wi, t)| Word {
                        text: t.to_string(),
                        bbox: [10.0 + 100.0 * wi as f64, y, 90.0 + 100.0 * wi as f64, y + 20.0].into(),
                        label: None,
                    })
                    .collect();
                Segment {
                    bbox: [10.0, y, 90.0 + 100.0 * (words.len() - 1) as f64, y + 20.0].into(),
                    words: ws,
                }
            })
            .collect();
        normalize_document(&Document {
            doc_id: "t".into(),
            page_width: 1000.0,
            page_height: 1000.0,
            class: None,
            segments: segs,
        })
        .unwrap()
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_words(["TOTAL", "AMOUNT", "193.00", "HI", "A", "BB", "CCCC"], 3)
    }

    #[test]
    fn chunks_of_three() {
        assert_eq!(chunk_word("TOTAL", 3), vec!["TOT", "AL"]);
        assert_eq!(chunk_word("HI", 3), vec!["HI"]);
        assert_eq!(chunk_word("193.00", 3), vec!["193", ".00"]);
    }

    #[test]
    fn multi_token_word_shares_word_index() {
        let d = assign_positions(&doc(&[&["TOTAL", "HI"]]), OneDMode::Local);
        let seq = tokenize(&d, &vocab(), 512).unwrap();
        let v = vocab();
        let toks: Vec<&str> = seq.tokens.iter().map(|&t| v.token(t)).collect();
        assert_eq!(toks, vec!["[CLS]", "TOT", "AL", "HI", "[SEP]"]);
        assert_eq!(seq.word_index, vec![None, Some(0), Some(0), Some(1), None]);
        assert_eq!(seq.pos_1d, vec![0, 1, 2, 3, 0]);
    }

    #[test]
    fn local_positions_restart_and_global_count_up() {
        let d = doc(&[&["TOTAL", "AMOUNT"], &["193.00"]]);
        let local = encode_document(&d, &vocab(), OneDMode::Local, TwoDMode::Segment, 512).unwrap();
        // TOT AL AMO UNT | 193 .00
        assert_eq!(local.pos_1d, vec![0, 1, 2, 3, 4, 1, 2, 0]);
        let global = encode_document(&d, &vocab(), OneDMode::Global, TwoDMode::Segment, 512).unwrap();
        assert_eq!(global.pos_1d, vec![0, 1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn segment_mode_shares_one_box() {
        let d = doc(&[&["TOTAL", "AMOUNT"]]);
        let seg = encode_document(&d, &vocab(), OneDMode::Local, TwoDMode::Segment, 512).unwrap();
        let boxes: Vec<QBox> = (1..seg.len() - 1).map(|i| seg.box_2d[i]).collect();
        assert!(boxes.windows(2).all(|w| w[0] == w[1]));
        let word = resolve_token_boxes(&seg, TwoDMode::Word);
        assert_ne!(word.box_2d[1], word.box_2d[3]);
        assert_eq!(word.box_2d[1], word.box_2d[2]);
        assert_eq!(word.box_2d[0], QBox::ZERO);
        assert_eq!(word.box_2d[word.len() - 1], QBox::ZERO);
    }

    #[test]
    fn truncation_keeps_whole_segments() {
        let d = doc(&[&["CCCC", "CCCC"], &["CCCC"], &["HI"]]);
        // 4 + 2 + 1 tokens of content; 7 fits exactly in 9
        let all = encode_document(&d, &vocab(), OneDMode::Local, TwoDMode::Word, 9).unwrap();
        assert_eq!(all.segments.len(), 3);
        let cut = encode_document(&d, &vocab(), OneDMode::Local, TwoDMode::Word, 8).unwrap();
        assert_eq!(cut.segments.len(), 2);
        assert_eq!(cut.len(), 8);
        let err = encode_document(&d, &vocab(), OneDMode::Local, TwoDMode::Word, 5);
        assert!(err.is_err());
    }

    #[test]
    fn unknown_chunk_maps_to_unk() {
        assert_eq!(vocab().encode_word("ZZZ"), vec![UNK]);
    }

    #[test]
    fn vocabulary_serde_round_trip() {
        let v = vocab();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }
}
