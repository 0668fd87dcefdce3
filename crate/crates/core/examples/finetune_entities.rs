//! Fine-tune for entity extraction from a short pre-training run and from
//! random initialisation, then score both on the test split per tag.

use layoutkit::config::RunConfig;
use layoutkit::pipeline::{run_finetune, run_pretrain, test_entities, Dataset};
use layoutkit::synth::generate_corpus;

const CONFIG: &str = r#"
[corpus]
doc_count = 300
[model]
hidden_size = 32
layers = 1
heads = 2
ffn_size = 64
[pretrain.schedule]
steps = 150
batch_size = 8
warmup_steps = 15
[finetune]
train_docs = 40
eval_every = 25
[finetune.schedule]
steps = 150
batch_size = 8
warmup_steps = 15
"#;

fn main() -> layoutkit::Result<()> {
    let cfg = RunConfig::from_toml(CONFIG, &[])?;
    let data = Dataset::from_splits(&generate_corpus(&cfg.corpus)?)?;
    let pre = run_pretrain(&cfg, &data)?;

    for (name, start) in [("pre-trained", Some(&pre.model)), ("random init", None)] {
        let ft = run_finetune(&cfg, &data, start, cfg.finetune.seed)?;
        let curve: Vec<String> = ft.curve.iter().map(|p| format!("{}:{:.3}", p.step, p.dev_score)).collect();
        println!("\n{name}: dev curve {}  (best step {})", curve.join(" "), ft.best_step);
        let e = test_entities(&cfg, &data, &ft.model)?;
        for (tag, s) in &e.entity.per_tag {
            println!("  {tag:<10} P {:.3} R {:.3} F1 {:.3}", s.precision, s.recall, s.f1);
        }
        println!("  overall    entity F1 {:.3}  word F1 {:.3}", e.entity.overall.f1, e.word.overall.f1);
    }
    Ok(())
}
