//! Train the same small model with per-segment and with global 1D
//! positions, then score both while reversing the segment order of a
//! growing share of text lines.

use layoutkit::config::RunConfig;
use layoutkit::doc::OneDMode;
use layoutkit::eval::robustness_report;
use layoutkit::pipeline::{featurizer, run_finetune, run_pretrain, Dataset};
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
[pretrain.schedule]
steps = 120
batch_size = 8
warmup_steps = 12
[finetune]
train_docs = 60
eval_every = 40
[finetune.schedule]
steps = 120
batch_size = 8
warmup_steps = 12
[robustness]
levels = [0.0, 0.1, 0.2, 0.3, 0.5, 1.0]
repeats = 2
"#;

fn main() -> layoutkit::Result<()> {
    let base = RunConfig::from_toml(CONFIG, &[])?;
    let data = Dataset::from_splits(&generate_corpus(&base.corpus)?)?;
    let Targets::Entities(labels) = data.targets(base.finetune.task)? else {
        unreachable!()
    };
    print!("{:<8}", "p_swap");
    for p in &base.robustness.levels {
        print!("{p:>8.2}");
    }
    println!();
    for one_d in [OneDMode::Local, OneDMode::Global] {
        let mut cfg = base.clone();
        cfg.position.one_d = one_d;
        let pre = run_pretrain(&cfg, &data)?;
        let ft = run_finetune(&cfg, &data, Some(&pre.model), cfg.finetune.seed)?;
        let r = &cfg.robustness;
        let rows = robustness_report(&ft.model, &featurizer(&cfg, &data.vocab), &labels, &data.test, &r.levels, r.repeats, r.seed)?;
        print!("{:<8}", format!("{one_d:?}"));
        for row in &rows {
            print!("{:>8.4}", row.eval.entity.overall.f1);
        }
        println!();
    }
    Ok(())
}
