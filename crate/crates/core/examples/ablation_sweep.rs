//! A miniature strategy sweep: pre-train once per masking strategy,
//! fine-tune with shared seeds and compare against random initialisation.
//! Pass `position`, `p_mlm` or `p_mpm` as the first argument for another
//! axis.

use layoutkit::config::RunConfig;
use layoutkit::pipeline::Dataset;
use layoutkit::sweep::ablation_sweep;
use layoutkit::synth::generate_corpus;

const CONFIG: &str = r#"
[corpus]
doc_count = 200
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
train_docs = 40
eval_every = 50
[finetune.schedule]
steps = 150
batch_size = 8
warmup_steps = 15
[sweep]
seeds = 2
"#;

fn main() -> layoutkit::Result<()> {
    let grid = match std::env::args().nth(1).as_deref() {
        None | Some("strategy") => r#"sweep.grid=["naive","wwm","wwm+lam+mpm"]"#.to_string(),
        Some("position") => r#"sweep.grid=["global/word","local/segment"]"#.to_string(),
        Some("p_mlm") => "sweep.grid=[0.15,0.25,0.35]".to_string(),
        Some("p_mpm") => "sweep.grid=[0.1,0.15,0.3]".to_string(),
        Some(other) => return Err(layoutkit::Error::Config(format!("unknown axis {other}"))),
    };
    let axis = format!("sweep.axis=\"{}\"", std::env::args().nth(1).unwrap_or_else(|| "strategy".into()));
    let cfg = RunConfig::from_toml(CONFIG, &[axis, grid])?;
    let data = Dataset::from_splits(&generate_corpus(&cfg.corpus)?)?;
    let jobs = std::thread::available_parallelism().map_or(1, usize::from);
    for r in ablation_sweep(&cfg, &data, jobs)? {
        println!(
            "{:<14} entity F1 {:.4} ± {:.4}   word F1 {:.4}   final pre-training loss {}",
            r.point,
            r.entity_mean,
            r.entity_std,
            r.word_mean,
            r.final_pretrain_loss.map_or("-".into(), |l| format!("{l:.4}"))
        );
    }
    Ok(())
}
