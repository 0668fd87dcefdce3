//! Small documents and models shared by the integration tests.
#![allow(dead_code)]

use layoutkit::doc::{normalize_document, Document, LayoutDoc, Segment, Word};
use layoutkit::model::ModelConfig;
use layoutkit::tokens::Vocabulary;

pub mod box_split;
pub mod giou;
pub mod grad;
pub mod masking;

/// A page whose lines hold left-to-right segments of words. Each word may
/// carry a label written as `text/TAG`.
pub fn page(id: &str, lines: &[&[&[&str]]]) -> Document {
    let mut segments = Vec::new();
    for (li, line) in lines.iter().enumerate() {
        let y = 20.0 + 40.0 * li as f64;
        let mut x = 20.0;
        for seg in line.iter() {
            let x0 = x;
            let words: Vec<Word> = seg
                .iter()
                .map(|raw| {
                    let (text, label) = match raw.split_once('/') {
                        Some((t, l)) => (t, Some(l.to_string())),
                        None => (*raw, None),
                    };
                    let w = 12.0 * text.len() as f64;
                    let b = [x, y, x + w, y + 20.0];
                    x += w + 10.0;
                    Word {
                        text: text.to_string(),
                        bbox: b.into(),
                        label,
                    }
                })
                .collect();
            segments.push(Segment {
                bbox: [x0, y, x - 10.0, y + 20.0].into(),
                words,
            });
            x += 40.0;
        }
    }
    Document {
        doc_id: id.to_string(),
        page_width: 1000.0,
        page_height: (40.0 * lines.len() as f64 + 100.0).max(1000.0),
        class: None,
        segments,
    }
}

pub fn layout(doc: &Document) -> LayoutDoc {
    normalize_document(doc).expect("test page is valid")
}

pub fn vocab_of<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Vocabulary {
    let words: Vec<String> = docs
        .into_iter()
        .flat_map(|d| d.segments.iter().flat_map(|s| s.words.iter().map(|w| w.text.clone())))
        .collect();
    Vocabulary::from_words(words, 3)
}

/// One layer, eight channels, no dropout.
pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        hidden_size: 8,
        layers: 1,
        heads: 2,
        ffn_size: 12,
        max_len: 64,
        max_1d_position: 64,
        dropout: 0.0,
        init_std: 0.3,
        ..ModelConfig::default()
    }
}

/// The two-segment receipt line plus a second line, labelled.
pub fn receipt() -> Document {
    page(
        "receipt",
        &[
            &[&["Total/TOTAL", "Amount/TOTAL"], &["$12.30/TOTAL"]],
            &[&["Hillside/COMPANY", "Bakery/COMPANY"], &["Apr/DATE", "03/DATE"], &["thanks"]],
        ],
    )
}
