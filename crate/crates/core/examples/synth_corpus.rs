//! Generate the default synthetic corpus and print its statistics, the
//! vocabulary size and token lengths, plus one document in reading order.

use layoutkit::doc::{normalize_document, OneDMode, TwoDMode};
use layoutkit::synth::{corpus_stats, generate_corpus, GenSpec};
use layoutkit::tokens::{encode_document, Vocabulary, DEFAULT_CHUNK};

fn main() -> layoutkit::Result<()> {
    let spec = GenSpec::default();
    let corpus = generate_corpus(&spec)?;
    let tags: Vec<String> = spec.tags.iter().map(|t| t.name.clone()).collect();
    let stats = corpus_stats(corpus.all(), &tags)?;
    print!("{}", stats.table());

    let words = corpus
        .all()
        .flat_map(|d| d.segments.iter().flat_map(|s| s.words.iter().map(|w| w.text.clone())));
    let vocab = Vocabulary::from_words(words, DEFAULT_CHUNK);
    println!("\nvocabulary: {} entries", vocab.len());

    let mut lengths = Vec::new();
    for doc in corpus.all() {
        let layout = normalize_document(doc)?;
        let seq = encode_document(&layout, &vocab, OneDMode::Local, TwoDMode::Segment, 512)?;
        lengths.push(seq.len());
    }
    lengths.sort_unstable();
    println!(
        "tokens per document: min {} median {} max {}",
        lengths[0],
        lengths[lengths.len() / 2],
        lengths[lengths.len() - 1]
    );

    let doc = &corpus.test[0];
    let layout = normalize_document(doc)?;
    println!("\n{} ({})", doc.doc_id, doc.class.as_deref().unwrap_or("-"));
    for &s in &layout.order {
        let seg = &layout.segments[s];
        let text: Vec<String> = seg
            .words
            .iter()
            .map(|w| match &w.label {
                Some(l) => format!("{}/{}", w.text, l),
                None => w.text.clone(),
            })
            .collect();
        println!("  {:?}  {}", seg.qbox.0, text.join(" "));
    }
    Ok(())
}
