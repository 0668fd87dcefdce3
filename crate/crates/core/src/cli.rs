//! Command-line front end. Every command resolves and validates its
//! configuration and inputs first, then writes into a fresh run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::doc::{load_corpus, save_corpus, Document, LayoutDoc};
use crate::error::{Error, Result};
use crate::eval::{evaluate_classes, evaluate_entities, robustness_report, F1Report, Featurizer};
use crate::masking::{apply_box_masks, apply_mlm, select_mpm, split_segments, PlanDump};
use crate::pipeline::{self, Dataset};
use crate::seed::{derive_seed, sha256_hex};
use crate::sweep::ablation_sweep;
use crate::synth::{corpus_stats, generate_corpus};
use crate::tokens::TokenSequence;
use crate::train::{draw_plan, SavedModel, Targets, TraceRow};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;
pub const RUN_DIR_ENV: &str = "LAYOUTKIT_RUN_DIR";

const SPLITS: [&str; 3] = ["train", "dev", "test"];

#[derive(Debug, Parser)]
#[command(name = "layoutkit", version, about = "Layout-aware masked pre-training toolkit")]
pub struct Cli {
    /// Root for run directories; the LAYOUTKIT_RUN_DIR environment variable takes precedence.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration value by dotted path, e.g. pretrain.p_mlm=0.2 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Re-execute the run recorded in this manifest.json; other flags are ignored.
    #[arg(long, value_name = "MANIFEST")]
    pub from_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled corpus and its statistics.
    GenCorpus {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Pre-train an encoder with masked language and position modelling.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corpus directory written by gen-corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Fine-tune for entity tagging or document classification.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Start from this checkpoint instead of a random initialisation.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a fine-tuned checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<Split>,
    },
    /// Entity scores under increasing segment-swap probabilities.
    Robustness {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Pre-train and fine-tune over a grid of settings.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print tokens, positions, boxes and masking decisions for one document.
    Inspect {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corpus directory or a single JSONL file.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Document id; defaults to the first document.
        #[arg(long)]
        doc: Option<String>,
        /// Pre-training step whose masks are shown.
        #[arg(long)]
        step: Option<usize>,
    },
}

/// Inputs of a run as recorded in its manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub split: Option<Split>,
    pub jobs: Option<usize>,
    pub doc: Option<String>,
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: String,
    pub config_hash: String,
    pub inputs: Inputs,
    /// SHA-256 of every input file.
    pub input_hashes: BTreeMap<String, String>,
    /// SHA-256 of every output file in the run directory.
    pub outputs: BTreeMap<String, String>,
    pub version: String,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus { .. } => "gen-corpus",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Eval { .. } => "eval",
            Command::Robustness { .. } => "robustness",
            Command::Sweep { .. } => "sweep",
            Command::Inspect { .. } => "inspect",
        }
    }

    fn parts(&self) -> (&ConfigArgs, Inputs) {
        match self {
            Command::GenCorpus { cfg } => (cfg, Inputs::default()),
            Command::Pretrain { cfg, corpus } => (
                cfg,
                Inputs {
                    corpus: corpus.clone(),
                    ..Default::default()
                },
            ),
            Command::Finetune {
                cfg,
                corpus,
                checkpoint,
            }
            | Command::Robustness {
                cfg,
                corpus,
                checkpoint,
            } => (
                cfg,
                Inputs {
                    corpus: corpus.clone(),
                    checkpoint: checkpoint.clone(),
                    ..Default::default()
                },
            ),
            Command::Eval {
                cfg,
                corpus,
                checkpoint,
                split,
            } => (
                cfg,
                Inputs {
                    corpus: corpus.clone(),
                    checkpoint: checkpoint.clone(),
                    split: *split,
                    ..Default::default()
                },
            ),
            Command::Sweep { cfg, corpus, jobs } => (
                cfg,
                Inputs {
                    corpus: corpus.clone(),
                    jobs: *jobs,
                    ..Default::default()
                },
            ),
            Command::Inspect { cfg, corpus, doc, step } => (
                cfg,
                Inputs {
                    corpus: corpus.clone(),
                    doc: doc.clone(),
                    step: *step,
                    ..Default::default()
                },
            ),
        }
    }
}

/// Parse process arguments, run, and map errors to exit codes.
pub fn main_from_env() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(dir) => {
            println!("run directory: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn run_root(cli_out: &Path) -> PathBuf {
    match std::env::var_os(RUN_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cli_out.to_path_buf(),
    }
}

/// Create `<root>/<command>-NNNN` with the first free index.
fn fresh_run_dir(root: &Path, command: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for i in 1..100_000 {
        let dir = root.join(format!("{command}-{i:04}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    Err(Error::invalid(format!("no free run directory under {}", root.display())))
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn write_file(dir: &Path, name: &str, body: &[u8]) -> Result<()> {
    let p = dir.join(name);
    if p.exists() {
        return Err(Error::invalid(format!("refusing to overwrite {}", p.display())));
    }
    fs::write(&p, body).map_err(|e| Error::io(&p, e))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))
}

fn trace_csv(trace: &[TraceRow]) -> Result<Vec<u8>> {
    csv_bytes(trace)
}

/// Everything resolved before a run directory is created.
struct Prepared {
    command: &'static str,
    cfg: RunConfig,
    inputs: Inputs,
    input_hashes: BTreeMap<String, String>,
}

fn resolve(cli: &Cli) -> Result<Prepared> {
    let command = cli.command.name();
    let (args, mut inputs) = cli.command.parts();
    let cfg = if let Some(mpath) = &args.from_manifest {
        let text = fs::read_to_string(mpath).map_err(|e| Error::Config(format!("{}: {e}", mpath.display())))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", mpath.display())))?;
        if m.command != command {
            return Err(Error::Config(format!(
                "manifest records a {} run, not {command}",
                m.command
            )));
        }
        inputs = m.inputs;
        RunConfig::from_toml(&m.config, &[])?
    } else {
        RunConfig::load(args.config.as_deref(), &args.set)?
    };
    let needs_corpus = command != "gen-corpus";
    let needs_checkpoint = matches!(command, "eval" | "robustness");
    if needs_corpus && inputs.corpus.is_none() {
        return Err(Error::Config(format!("{command} needs --corpus")));
    }
    if needs_checkpoint && inputs.checkpoint.is_none() {
        return Err(Error::Config(format!("{command} needs --checkpoint")));
    }
    if inputs.jobs == Some(0) {
        return Err(Error::Config("--jobs must be positive".into()));
    }
    let mut input_hashes = BTreeMap::new();
    if let Some(c) = &inputs.corpus {
        for f in corpus_files(c)? {
            input_hashes.insert(format!("corpus/{}", f.file_name().unwrap_or_default().to_string_lossy()), hash_file(&f)?);
        }
    }
    if let Some(c) = &inputs.checkpoint {
        input_hashes.insert("checkpoint".into(), hash_file(c)?);
    }
    Ok(Prepared {
        command,
        cfg,
        inputs,
        input_hashes,
    })
}

/// Split files of a corpus directory, or the file itself.
fn corpus_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "corpus not found"),
        ));
    }
    SPLITS
        .iter()
        .map(|s| {
            let f = path.join(format!("{s}.jsonl"));
            if f.is_file() {
                Ok(f)
            } else {
                Err(Error::io(
                    &f,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "missing corpus split"),
                ))
            }
        })
        .collect()
}

fn load_splits(path: &Path) -> Result<[Vec<Document>; 3]> {
    let files = corpus_files(path)?;
    if files.len() == 1 {
        return Err(Error::Config(format!(
            "{} is a single file; this command needs a corpus directory with train/dev/test splits",
            path.display()
        )));
    }
    Ok([load_corpus(&files[0])?, load_corpus(&files[1])?, load_corpus(&files[2])?])
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let [train, dev, test] = load_splits(path)?;
    Dataset::new(&train, &dev, &test)
}

/// Run the parsed command and return its run directory.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let prep = resolve(cli)?;
    let root = run_root(&cli.out);
    match prep.command {
        "gen-corpus" => gen_corpus(&prep, &root),
        "pretrain" => pretrain_cmd(&prep, &root),
        "finetune" => finetune_cmd(&prep, &root),
        "eval" => eval_cmd(&prep, &root),
        "robustness" => robustness_cmd(&prep, &root),
        "sweep" => sweep_cmd(&prep, &root),
        "inspect" => inspect_cmd(&prep, &root),
        other => unreachable!("unknown command {other}"),
    }
}

/// Write config and manifest after the command's own outputs.
fn finish(prep: &Prepared, dir: &Path) -> Result<PathBuf> {
    let config = prep.cfg.to_toml()?;
    write_file(dir, "config.toml", config.as_bytes())?;
    let mut outputs = BTreeMap::new();
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for n in names {
        outputs.insert(n.clone(), hash_file(&dir.join(&n))?);
    }
    let m = Manifest {
        command: prep.command.into(),
        config,
        config_hash: prep.cfg.hash()?,
        inputs: prep.inputs.clone(),
        input_hashes: prep.input_hashes.clone(),
        outputs,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    write_file(dir, "manifest.json", serde_json::to_string_pretty(&m)?.as_bytes())?;
    Ok(dir.to_path_buf())
}

fn meta(prep: &Prepared) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "command": prep.command,
        "config_hash": prep.cfg.hash()?,
        "input_hashes": prep.input_hashes,
    }))
}

fn gen_corpus(prep: &Prepared, root: &Path) -> Result<PathBuf> {
    let splits = generate_corpus(&prep.cfg.corpus)?;
    let tags: Vec<String> = prep.cfg.corpus.tags.iter().map(|t| t.name.clone()).collect();
    let stats = corpus_stats(splits.all(), &tags)?;
    let dir = fresh_run_dir(root, prep.command)?;
    for (name, docs) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
        save_corpus(dir.join(format!("{name}.jsonl")), docs)?;
    }
    let all: Vec<Document> = splits.all().cloned().collect();
    save_corpus(dir.join("corpus.jsonl"), &all)?;
    write_file(&dir, "stats.txt", stats.table().as_bytes())?;
    write_file(&dir, "stats.json", serde_json::to_string_pretty(&stats)?.as_bytes())?;
    print!("{}", stats.table());
    finish(prep, &dir)
}

fn pretrain_cmd(prep: &Prepared, root: &Path) -> Result<PathBuf> {
    let data = load_dataset(prep.inputs.corpus.as_deref().expect("resolved"))?;
    pipeline::model_config(&prep.cfg, &data.vocab)?;
    let dir = fresh_run_dir(root, prep.command)?;
    let out = pipeline::run_pretrain(&prep.cfg, &data)?;
    write_file(&dir, "trace.csv", &trace_csv(&out.trace)?)?;
    SavedModel {
        model: out.model,
        featurizer: pipeline::featurizer(&prep.cfg, &data.vocab),
        targets: None,
        meta: meta(prep)?,
    }
    .save(dir.join("checkpoint.lkc"))?;
    if let Some(last) = out.trace.last() {
        println!("step {} loss {:.4} (mlm {:.4}, mpm {:.4})", last.step, last.loss, last.mlm, last.mpm);
    }
    finish(prep, &dir)
}

/// Load a checkpoint and point the dataset at its vocabulary.
fn load_checkpoint(path: &Path, data: &mut Dataset) -> Result<SavedModel> {
    let saved = SavedModel::load(path)?;
    data.vocab = saved.featurizer.vocab.clone();
    Ok(saved)
}

fn finetune_cmd(prep: &Prepared, root: &Path) -> Result<PathBuf> {
    let mut data = load_dataset(prep.inputs.corpus.as_deref().expect("resolved"))?;
    let start = match &prep.inputs.checkpoint {
        Some(p) => {
            let saved = load_checkpoint(p, &mut data)?;
            let f = &saved.featurizer;
            let pos = &prep.cfg.position;
            if (f.one_d, f.two_d, f.max_len) != (pos.one_d, pos.two_d, pos.max_len) {
                return Err(Error::Config(format!(
                    "position settings {:?}/{:?}/{} differ from the checkpoint's {:?}/{:?}/{}",
                    pos.one_d, pos.two_d, pos.max_len, f.one_d, f.two_d, f.max_len
                )));
            }
            Some(saved.model)
        }
        None => None,
    };
    let targets = data.targets(prep.cfg.finetune.task)?;
    pipeline::model_config(&prep.cfg, &data.vocab)?;
    let dir = fresh_run_dir(root, prep.command)?;
    let out = pipeline::run_finetune(&prep.cfg, &data, start.as_ref(), prep.cfg.finetune.seed)?;
    write_file(&dir, "trace.csv", &trace_csv(&out.trace)?)?;
    write_file(&dir, "dev_curve.csv", &csv_bytes(&out.curve)?)?;
    SavedModel {
        model: out.model,
        featurizer: pipeline::featurizer(&prep.cfg, &data.vocab),
        targets: Some(targets),
        meta: meta(prep)?,
    }
    .save(dir.join("checkpoint.lkc"))?;
    println!("best dev score {:.4} at step {}", out.best_score, out.best_step);
    finish(prep, &dir)
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    p_swap: Option<f64>,
    level: &'a str,
    tag: &'a str,
    precision: f64,
    recall: f64,
    f1: f64,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
}

fn score_rows<'a>(p_swap: Option<f64>, r: &'a F1Report, out: &mut Vec<ScoreRow<'a>>) {
    let level = match r.level {
        crate::eval::F1Level::Word => "word",
        crate::eval::F1Level::Entity => "entity",
    };
    for (tag, s) in r.per_tag.iter().map(|(t, s)| (t.as_str(), s)).chain([("overall", &r.overall)]) {
        out.push(ScoreRow {
            p_swap,
            level,
            tag,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            tp: s.tp,
            fp: s.fp,
            fn_: s.fn_,
        });
    }
}

fn split_docs(data: &Dataset, split: Split) -> &[LayoutDoc] {
    match split {
        Split::Train => &data.train,
        Split::Dev => &data.dev,
        Split::Test => &data.test,
    }
}

fn eval_cmd(prep: &Prepared, root: &Path) -> Result<PathBuf> {
    let mut data = load_dataset(prep.inputs.corpus.as_deref().expect("resolved"))?;
    let saved = load_checkpoint(prep.inputs.checkpoint.as_deref().expect("resolved"), &mut data)?;
    let docs = split_docs(&data, prep.inputs.split.unwrap_or(Split::Test));
    let feat = &saved.featurizer;
    let dir;
    match &saved.targets {
        Some(Targets::Entities(labels)) => {
            let e = evaluate_entities(&saved.model, feat, labels, docs)?;
            dir = fresh_run_dir(root, prep.command)?;
            let mut rows = Vec::new();
            score_rows(None, &e.word, &mut rows);
            score_rows(None, &e.entity, &mut rows);
            write_file(&dir, "report.csv", &csv_bytes(&rows)?)?;
            write_file(&dir, "report.json", serde_json::to_string_pretty(&e)?.as_bytes())?;
            println!(
                "entity F1 {:.4}, word F1 {:.4}",
                e.entity.overall.f1, e.word.overall.f1
            );
        }
        Some(Targets::Classes(classes)) => {
            let c = evaluate_classes(&saved.model, feat, classes, docs)?;
            dir = fresh_run_dir(root, prep.command)?;
            #[derive(Serialize)]
            struct Row<'a> {
                class: &'a str,
                correct: usize,
                total: usize,
                accuracy: f64,
            }
            let mut rows: Vec<Row> = c
                .per_class
                .iter()
                .map(|(k, &(ok, n))| Row {
                    class: k,
                    correct: ok,
                    total: n,
                    accuracy: if n == 0 { 0.0 } else { ok as f64 / n as f64 },
                })
                .collect();
            let total: usize = c.per_class.values().map(|v| v.1).sum();
            let ok: usize = c.per_class.values().map(|v| v.0).sum();
            rows.push(Row {
                class: "overall",
                correct: ok,
                total,
                accuracy: c.accuracy,
            });
            write_file(&dir, "report.csv", &csv_bytes(&rows)?)?;
            write_file(&dir, "report.json", serde_json::to_string_pretty(&c)?.as_bytes())?;
            println!("accuracy {:.4}", c.accuracy);
        }
        None => return Err(Error::Config("checkpoint has no fine-tuned head; run finetune first".into())),
    }
    finish(prep, &dir)
}

fn robustness_cmd(prep: &Prepared, root: &Path) -> Result<PathBuf> {
    let mut data = load_dataset(prep.inputs.corpus.as_deref().expect("resolved"))?;
    let saved = load_checkpoint(prep.inputs.checkpoint.as_deref().expect("resolved"), &mut data)?;
    let Some(Targets::Entities(labels)) = &saved.targets else {
        return Err(Error::Config("robustness needs an entity checkpoint".into()));
    };
    let r = &prep.cfg.robustness;
    let rows = robustness_report(&saved.model, &saved.featurizer, labels, &data.test, &r.levels, r.repeats, r.seed)?;
    let dir = fresh_run_dir(root, prep.command)?;
    let mut flat = Vec::new();
    for row in &rows {
        score_rows(Some(row.p_swap), &row.eval.word, &mut flat);
        score_rows(Some(row.p_swap), &row.eval.entity, &mut flat);
        println!(
            "p_swap {:.2}: entity F1 {:.4}, word F1 {:.4}",
            row.p_swap, row.eval.entity.overall.f1, row.eval.word.overall.f1
        );
    }
    write_file(&dir, "robustness.csv", &csv_bytes(&flat)?)?;
    write_file(&dir, "robustness.json", serde_json::to_string_pretty(&rows)?.as_bytes())?;
    finish(prep, &dir)
}

fn sweep_cmd(prep: &Prepared, root: &Path) -> Result<PathBuf> {
    let data = load_dataset(prep.inputs.corpus.as_deref().expect("resolved"))?;
    pipeline::model_config(&prep.cfg, &data.vocab)?;
    let dir = fresh_run_dir(root, prep.command)?;
    let rows = ablation_sweep(&prep.cfg, &data, prep.inputs.jobs.unwrap_or(1))?;
    #[derive(Serialize)]
    struct Flat<'a> {
        point: &'a str,
        pretrained: bool,
        runs: usize,
        entity_mean: f64,
        entity_std: f64,
        word_mean: f64,
        word_std: f64,
        final_pretrain_loss: Option<f64>,
    }
    let flat: Vec<Flat> = rows
        .iter()
        .map(|r| Flat {
            point: &r.point,
            pretrained: r.pretrained,
            runs: r.seeds.len(),
            entity_mean: r.entity_mean,
            entity_std: r.entity_std,
            word_mean: r.word_mean,
            word_std: r.word_std,
            final_pretrain_loss: r.final_pretrain_loss,
        })
        .collect();
    for r in &rows {
        println!(
            "{:<14} entity {:.4} ± {:.4}  word {:.4} ± {:.4}",
            r.point, r.entity_mean, r.entity_std, r.word_mean, r.word_std
        );
    }
    write_file(&dir, "sweep.csv", &csv_bytes(&flat)?)?;
    write_file(&dir, "sweep.json", serde_json::to_string_pretty(&rows)?.as_bytes())?;
    finish(prep, &dir)
}

/// Human-readable table of one document under the configured positions
/// and the masks drawn for `step`.
pub fn inspect_table(doc: &LayoutDoc, feat: &Featurizer, cfg: &RunConfig, step: usize) -> Result<(String, PlanDump)> {
    let seq = feat.encode(doc)?;
    let pc = &cfg.pretrain;
    let plan = draw_plan(&seq, pc, &doc.doc_id, step)?
        .ok_or_else(|| Error::invalid(format!("document {} has no maskable token", doc.doc_id)))?;
    // random replacements come from the model's token table, as in training
    let vocab_size = pipeline::model_config(cfg, &feat.vocab)?.vocab_size;
    let masked = apply_mlm(&seq, &plan, pc.replacement, vocab_size, derive_seed(pc.seed, "mlm-apply", &doc.doc_id, step as u64))?;
    let (shown, sel) = if pc.mpm {
        let sel = select_mpm(&seq, pc.p_mpm, derive_seed(pc.seed, "mpm", &doc.doc_id, step as u64), Some(&plan))?;
        let split = split_segments(&masked.seq, &sel)?;
        (apply_box_masks(&split, &sel)?.0, Some(sel))
    } else {
        (masked.seq.clone(), None)
    };
    let dump = PlanDump::new(&shown, Some(&masked.plan), sel.as_ref());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "document {} ({:?} 1D, {:?} 2D, strategy {:?}, mpm {})",
        doc.doc_id, feat.one_d, feat.two_d, pc.strategy, pc.mpm
    );
    let _ = writeln!(out, "{:>4}  {:<8} {:<8} {:<10} {:>4} {:>4}  {:<22} {:<8} mpm", "idx", "input", "original", "word", "seg", "pos", "box", "mlm");
    let original = |i: usize, s: &TokenSequence| feat.vocab.token(s.tokens[i]).to_owned();
    for i in 0..shown.len() {
        let word = shown.word_index[i].map_or(String::new(), |w| shown.words[w].text.clone());
        let seg = shown.segment_index[i].map_or("-".to_string(), |s| shown.segments[s].id.to_string());
        let b = shown.box_2d[i].0;
        let action = match masked.plan.actions[i] {
            None => "",
            Some(crate::masking::MlmAction::ReplaceWithMask) => "mask",
            Some(crate::masking::MlmAction::ReplaceWithRandom) => "random",
            Some(crate::masking::MlmAction::Keep) => "keep",
        };
        let mpm = shown.word_index[i].is_some_and(|w| dump.mpm_words.contains(&w) && shown.words[w].tokens.start == i);
        let _ = writeln!(
            out,
            "{:>4}  {:<8} {:<8} {:<10} {:>4} {:>4}  {:<22} {:<8} {}",
            i,
            feat.vocab.token(shown.tokens[i]),
            original(i, &seq),
            word,
            seg,
            shown.pos_1d[i],
            format!("[{},{},{},{}]", b[0], b[1], b[2], b[3]),
            action,
            if mpm { "box" } else { "" }
        );
    }
    Ok((out, dump))
}

fn inspect_cmd(prep: &Prepared, root: &Path) -> Result<PathBuf> {
    let path = prep.inputs.corpus.as_deref().expect("resolved");
    let docs: Vec<Document> = corpus_files(path)?
        .iter()
        .map(load_corpus)
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let doc = match &prep.inputs.doc {
        Some(id) => docs
            .iter()
            .find(|d| &d.doc_id == id)
            .ok_or_else(|| Error::Config(format!("no document with id {id:?}")))?,
        None => docs.first().ok_or_else(|| Error::Config("corpus is empty".into()))?,
    };
    let data = Dataset::new(&docs, &[], &[])?;
    let feat = pipeline::featurizer(&prep.cfg, &data.vocab);
    let layout = crate::doc::normalize_document(doc)?;
    let (table, dump) = inspect_table(&layout, &feat, &prep.cfg, prep.inputs.step.unwrap_or(0))?;
    let dir = fresh_run_dir(root, prep.command)?;
    print!("{table}");
    write_file(&dir, "inspect.txt", table.as_bytes())?;
    write_file(&dir, "plan.json", serde_json::to_string_pretty(&dump)?.as_bytes())?;
    finish(prep, &dir)
}
