//! Print one synthetic document under the four position encodings: global
//! or per-segment 1D positions crossed with word or segment 2D boxes.

use layoutkit::doc::{normalize_document, OneDMode, TwoDMode};
use layoutkit::synth::{generate_corpus, GenSpec};
use layoutkit::tokens::{encode_document, Vocabulary, DEFAULT_CHUNK};

fn main() -> layoutkit::Result<()> {
    let corpus = generate_corpus(&GenSpec {
        doc_count: 10,
        ..GenSpec::default()
    })?;
    let doc = corpus.all().next().expect("non-empty corpus");
    let vocab = Vocabulary::from_words(
        doc.segments.iter().flat_map(|s| s.words.iter().map(|w| w.text.clone())),
        DEFAULT_CHUNK,
    );
    let layout = normalize_document(doc)?;

    for one_d in [OneDMode::Global, OneDMode::Local] {
        for two_d in [TwoDMode::Word, TwoDMode::Segment] {
            let seq = encode_document(&layout, &vocab, one_d, two_d, 48)?;
            println!("\n{one_d:?}-1D / {two_d:?}-2D  ({} tokens)", seq.len());
            println!("{:>4}  {:<8} {:>4}  box", "tok", "piece", "pos");
            for t in 0..seq.len().min(16) {
                let b = seq.box_2d[t].0;
                println!("{t:>4}  {:<8} {:>4}  {b:?}", vocab.token(seq.tokens[t]), seq.pos_1d[t]);
            }
        }
    }
    Ok(())
}
