//! Pre-train a small encoder with whole word plus layout-aware masking and
//! MPM, print the loss trace and round-trip the checkpoint.

use layoutkit::config::RunConfig;
use layoutkit::pipeline::{featurizer, run_pretrain, Dataset};
use layoutkit::synth::generate_corpus;
use layoutkit::train::SavedModel;

const CONFIG: &str = r#"
[corpus]
doc_count = 200
[model]
hidden_size = 32
layers = 1
heads = 2
ffn_size = 64
[pretrain.schedule]
steps = 80
batch_size = 8
warmup_steps = 8
"#;

fn main() -> layoutkit::Result<()> {
    let cfg = RunConfig::from_toml(CONFIG, &[])?;
    let data = Dataset::from_splits(&generate_corpus(&cfg.corpus)?)?;
    println!("{} training documents, vocabulary {}", data.train.len(), data.vocab.len());

    let pre = run_pretrain(&cfg, &data)?;
    println!("{:>5} {:>8} {:>8} {:>8} {:>9}", "step", "lr", "total", "mlm", "mpm");
    for r in pre.trace.iter().filter(|r| r.step % 10 == 0 || r.step + 1 == pre.trace.len()) {
        println!("{:>5} {:>8.2e} {:>8.4} {:>8.4} {:>+9.4}", r.step, r.lr, r.loss, r.mlm, r.mpm);
    }

    let dir = std::env::temp_dir().join("layoutkit-pretrain-tiny");
    std::fs::create_dir_all(&dir).map_err(|e| layoutkit::Error::Invalid(e.to_string()))?;
    let path = dir.join("checkpoint.lkc");
    let saved = SavedModel {
        model: pre.model,
        featurizer: featurizer(&cfg, &data.vocab),
        targets: None,
        meta: serde_json::json!({ "steps": cfg.pretrain.schedule.steps }),
    };
    saved.save(&path)?;
    let back = SavedModel::load(&path)?;
    let same = back.model.params().iter().zip(saved.model.params().iter()).all(|(a, b)| a.2 == b.2);
    println!("\ncheckpoint {} reloads bit-identically: {same}", path.display());
    Ok(())
}
