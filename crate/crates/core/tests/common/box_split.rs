//! Exhaustive Box Split check over every selection of a 1 to 4 word
//! segment, pinned by a golden file.

use std::path::PathBuf;

use layoutkit::doc::{BBox, OneDMode, TwoDMode};
use layoutkit::masking::{apply_box_masks, select_mpm_words, split_segments};
use layoutkit::tokens::encode_document;
use serde::Serialize;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

#[derive(Serialize, PartialEq, Debug)]
pub struct Case {
    pub words: usize,
    pub selected: Vec<usize>,
    /// Word ranges of the pieces the first segment became.
    pub pieces: Vec<(usize, usize)>,
    pub pos_1d: Vec<u32>,
    pub boxes: Vec<[u16; 4]>,
}

const TEXTS: [&str; 4] = ["Hillside", "Bk", "Road", "Unit"];

/// One selection pattern `mask` over an `n` word segment followed by a
/// second, untouched segment. Errors name the first broken rule.
pub fn run_case(n: usize, mask: u32) -> Result<Case, String> {
    let first: Vec<&str> = TEXTS[..n].to_vec();
    let doc = super::page("split", &[&[&first], &[&["Tel", "5550"]]]);
    let vocab = super::vocab_of([&doc]);
    let seq = encode_document(&super::layout(&doc), &vocab, OneDMode::Local, TwoDMode::Segment, 64).unwrap();
    let selected: Vec<usize> = (0..n).filter(|w| mask & (1 << w) != 0).collect();
    let sel = select_mpm_words(&seq, &selected, 11).unwrap();
    let split = split_segments(&seq, &sel).unwrap();

    // pieces of the first segment, in order
    let pieces: Vec<(usize, usize)> = split
        .segments
        .iter()
        .filter(|s| s.words.end <= n)
        .map(|s| (s.words.start, s.words.end))
        .collect();

    // rule: selected words alone, maximal unselected runs kept together
    let mut expect = Vec::new();
    let mut w = 0;
    while w < n {
        if selected.contains(&w) {
            expect.push((w, w + 1));
            w += 1;
        } else {
            let s = w;
            while w < n && !selected.contains(&w) {
                w += 1;
            }
            expect.push((s, w));
        }
    }
    ensure(pieces == expect, || format!("pieces {pieces:?} != rule {expect:?} (n={n} selected={selected:?})"))?;
    if selected.len() == 1 {
        let k = selected[0];
        let want = if n == 1 {
            1
        } else if k == 0 || k == n - 1 {
            2
        } else {
            3
        };
        ensure(pieces.len() == want, || format!("single selection {k} of {n}: {} pieces", pieces.len()))?;
    }

    // local positions restart at 1 in every piece; untouched segments unchanged
    for seg in &split.segments {
        let toks: Vec<usize> = seg.words.clone().flat_map(|w| split.words[w].tokens.clone()).collect();
        let pos: Vec<u32> = toks.iter().map(|&t| split.pos_1d[t]).collect();
        ensure(pos == (1..=toks.len() as u32).collect::<Vec<_>>(), || format!("local positions {pos:?} (n={n} selected={selected:?})"))?;
        let union = BBox::union_all(seg.words.clone().map(|w| &split.words[w].bbox)).unwrap();
        ensure(seg.bbox == union, || format!("piece box is not the union (n={n} selected={selected:?})"))?;
    }
    let tail = |s: &layoutkit::tokens::TokenSequence| s.pos_1d[s.len() - 4..].to_vec();
    ensure(tail(&split) == tail(&seq), || format!("untouched segment moved (n={n} selected={selected:?})"))?;

    let (boxed, labels) = apply_box_masks(&split, &sel).unwrap();
    for (&w, &h) in sel.words.iter().zip(&sel.pseudo_heights) {
        for t in boxed.words[w].tokens.clone() {
            ensure(boxed.box_2d[t].0 == [0, 0, 0, h], || format!("pseudo box of word {w} (n={n} selected={selected:?})"))?;
        }
        ensure(labels[boxed.words[w].tokens.start] == Some(seq.words[w].bbox), || format!("box label of word {w}"))?;
    }

    Ok(Case {
        words: n,
        selected,
        pieces,
        pos_1d: split.pos_1d.clone(),
        boxes: split.box_2d.iter().map(|b| b.0).collect(),
    })
}


/// Every selection pattern of 1 to 4 word segments.
pub fn all_cases() -> Result<Vec<Case>, String> {
    (1..=4).flat_map(|n| (0..1u32 << n).map(move |m| run_case(n, m))).collect()
}

pub fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/box_split.json")
}

pub fn render(cases: &[Case]) -> String {
    serde_json::to_string_pretty(cases).unwrap() + "\n"
}

/// Rule checks plus golden comparison. `LAYOUTKIT_BLESS=1` rewrites the
/// golden file first.
pub fn check_golden() -> Result<usize, String> {
    let cases = all_cases()?;
    let text = render(&cases);
    let path = golden_path();
    if std::env::var_os("LAYOUTKIT_BLESS").is_some() {
        std::fs::write(&path, &text).map_err(|e| e.to_string())?;
    }
    let golden = std::fs::read_to_string(&path).map_err(|_| "golden file missing; rerun with LAYOUTKIT_BLESS=1".to_string())?;
    ensure(golden == text, || format!("box split output differs from {}", path.display()))?;
    Ok(cases.len())
}
