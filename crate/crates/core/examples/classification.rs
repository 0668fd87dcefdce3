//! Document classification: fine-tune the [CLS] head on the synthetic
//! document classes and report per-class accuracy.

use layoutkit::config::RunConfig;
use layoutkit::eval::evaluate_classes;
use layoutkit::pipeline::{featurizer, run_finetune, Dataset};
use layoutkit::synth::generate_corpus;
use layoutkit::train::Targets;

const CONFIG: &str = r#"
[corpus]
doc_count = 300
[model]
hidden_size = 32
layers = 1
heads = 2
ffn_size = 64
[finetune]
task = "classification"
eval_every = 50
[finetune.schedule]
steps = 300
batch_size = 8
warmup_steps = 30
"#;

fn main() -> layoutkit::Result<()> {
    let cfg = RunConfig::from_toml(CONFIG, &[])?;
    let data = Dataset::from_splits(&generate_corpus(&cfg.corpus)?)?;
    let Targets::Classes(classes) = data.targets(cfg.finetune.task)? else {
        unreachable!()
    };
    let ft = run_finetune(&cfg, &data, None, cfg.finetune.seed)?;
    println!("best dev accuracy {:.3} at step {}", ft.best_score, ft.best_step);
    let eval = evaluate_classes(&ft.model, &featurizer(&cfg, &data.vocab), &classes, &data.test)?;
    for (class, (right, total)) in &eval.per_class {
        println!("  {class:<12} {right}/{total}");
    }
    println!("test accuracy {:.3}", eval.accuracy);
    Ok(())
}
