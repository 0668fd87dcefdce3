//! Draw MLM plans with each strategy on one page, then an MPM selection
//! with Box Split and pseudo boxes on top of the layout-aware plan.

use layoutkit::doc::{normalize_document, OneDMode, TwoDMode};
use layoutkit::masking::{apply_box_masks, apply_mlm, plan_mlm, select_mpm, split_segments, MlmStrategy, ReplacementPolicy};
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
    let seq = encode_document(&normalize_document(doc)?, &vocab, OneDMode::Local, TwoDMode::Segment, 256)?;
    println!("{} words in {} segments", seq.words.len(), seq.segments.len());

    for strategy in [MlmStrategy::Naive, MlmStrategy::Wwm, MlmStrategy::WwmLam] {
        let plan = plan_mlm(&seq, strategy, 0.25, 7)?;
        let words: Vec<&str> = plan.masked_words(&seq).iter().map(|&w| seq.words[w].text.as_str()).collect();
        println!("\n{strategy:?}: {} tokens masked", plan.len());
        println!("  words touched: {}", words.join(" "));
    }

    // replacement: 80% [MASK], 10% random token, 10% unchanged
    let plan = plan_mlm(&seq, MlmStrategy::WwmLam, 0.25, 7)?;
    let masked = apply_mlm(&seq, &plan, ReplacementPolicy::default(), vocab.len(), 8)?;
    let shown: Vec<&str> = masked.seq.tokens.iter().take(24).map(|&t| vocab.token(t)).collect();
    println!("\nmasked input: {}", shown.join(" "));

    // MPM draws only among words the MLM plan left alone, which can be few
    // on a page of short segments; take the first seed with a selection
    let (seed, sel) = (9..)
        .map(|s| select_mpm(&seq, 0.15, s, Some(&plan)).map(|sel| (s, sel)))
        .find(|r| r.as_ref().map_or(true, |(_, sel)| !sel.is_empty()))
        .expect("unbounded seed range")?;
    let split = split_segments(&masked.seq, &sel)?;
    let (boxed, targets) = apply_box_masks(&split, &sel)?;
    println!("\nMPM (seed {seed}): {} words, segments {} -> {}", sel.len(), seq.segments.len(), split.segments.len());
    for (&w, &h) in sel.words.iter().zip(&sel.pseudo_heights) {
        let t = boxed.words[w].tokens.start;
        let truth = targets[t].expect("selected word carries its box");
        println!(
            "  {:<12} pseudo box {:?} (height {h}), 1D pos {}, target [{:.3} {:.3} {:.3} {:.3}]",
            seq.words[w].text, boxed.box_2d[t].0, boxed.pos_1d[t], truth.x1, truth.y1, truth.x2, truth.y2
        );
    }
    Ok(())
}
