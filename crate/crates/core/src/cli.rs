//! Command-line front end. Summaries go to the given writer, artifacts to
//! files, warnings and progress to stderr.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    generate_synthetic, load_csv, load_feature_rows, save_csv, GeneratorConfig, HealthState, DEFAULT_LABEL_NOISE,
};
use crate::error::{Error, Result};
use crate::metrics::{write_roc_csv, EvalReport, RocPoint};
use crate::model::{argmax, load_checkpoint, save_checkpoint};
use crate::training::{evaluate, predict_dataset, run_experiment, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "ssd-health", version, about = "SSD health-state classification with a BiGRU + multi-head attention model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic telemetry dataset.
    Generate(GenerateArgs),
    /// Split, standardise, train and save a checkpoint.
    Train(TrainArgs),
    /// Score a labelled dataset with a checkpoint.
    Eval(EvalArgs),
    /// Write class probabilities for each row of a dataset.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 593, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LABEL_NOISE)]
    pub label_noise: f64,
    /// Normal,Warning,Failure label frequencies.
    #[arg(long, value_parser = parse_priors)]
    pub priors: Option<[f64; 3]>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with optional `model`, `train` and `test_fraction` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Per-epoch `epoch,loss,train_acc,test_acc` CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Directory receiving the `train.csv` and `test.csv` split actually used.
    #[arg(long)]
    pub split_dir: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip_threshold: Option<f64>,
    #[arg(long)]
    pub l2_lambda: Option<f64>,
    /// Seeds the split, the shuffling and the parameter initialisation.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Print a progress line every this many epochs (0 disables).
    #[arg(long, default_value_t = 50)]
    pub progress: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON report destination.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory for `fpr,tpr` curves, one per class plus failure-vs-rest.
    #[arg(long)]
    pub roc: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_priors(s: &str) -> std::result::Result<[f64; 3], String> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(values).map_err(|v| format!("expected 3 comma-separated values, got {}", v.len()))
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Predict(a) => predict(a, out),
    }
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = GeneratorConfig {
        n: a.n as usize,
        seed: a.seed,
        label_noise: a.label_noise,
        ..GeneratorConfig::default()
    };
    if let Some(p) = a.priors {
        cfg.priors = p;
    }
    let ds = generate_synthetic(&cfg)?;
    save_csv(&ds, &a.out)?;
    let counts = ds.class_counts();
    writeln!(out, "wrote {} records to {}", ds.len(), a.out.display()).map_err(stdout_err)?;
    for (state, c) in HealthState::ALL.iter().zip(counts) {
        writeln!(out, "  {:<8} {}", state.as_str(), c).map_err(stdout_err)?;
    }
    Ok(())
}

/// Reads an experiment config file. Unknown keys and malformed values
/// reject the whole file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Defaults, then the config file, then command-line flags.
pub fn resolve_config(a: &TrainArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    let t = &mut cfg.train;
    if let Some(v) = a.max_epochs {
        t.max_epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.clip_threshold {
        t.clip_threshold = v;
    }
    if let Some(v) = a.l2_lambda {
        t.l2_lambda = v;
    }
    if let Some(v) = a.eval_every {
        t.eval_every = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
        cfg.model.seed = v;
    }
    if let Some(v) = a.hidden {
        cfg.model.hidden = v;
    }
    if let Some(v) = a.heads {
        cfg.model.heads = v;
    }
    if let Some(v) = a.test_fraction {
        cfg.test_fraction = v;
    }
    cfg.train.validate()?;
    let mut effective = cfg.model.clone();
    effective.l2_lambda = cfg.train.l2_lambda;
    effective.validate()?;
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {}",
            cfg.test_fraction
        )));
    }
    Ok(cfg)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(&a)?;
    let ds = load_csv(&a.data)?;
    if cfg.train.max_epochs == 0 {
        eprintln!("warning: max_epochs is 0; saving the initial parameters");
    }
    let every = a.progress;
    let exp = run_experiment(&ds, &cfg, |e| {
        if every > 0 && e.epoch % every == 0 {
            let test = e.test_acc.map_or(String::new(), |t| format!("  test acc {t:.4}"));
            eprintln!("epoch {:>4}  loss {:.4}  train acc {:.4}{test}", e.epoch, e.loss, e.train_acc);
        }
    })?;

    save_checkpoint(&a.out, &exp.params, &exp.config, &exp.standardizer)?;
    if let Some(h) = &a.history {
        exp.history.save_csv(h)?;
    }
    if let Some(dir) = &a.split_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_csv(&exp.train_set, dir.join("train.csv"))?;
        save_csv(&exp.test_set, dir.join("test.csv"))?;
    }

    let fmt_opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    writeln!(
        out,
        "trained {} epochs on {} records ({} held out)",
        exp.history.len(),
        exp.train_set.len(),
        exp.test_set.len()
    )
    .map_err(stdout_err)?;
    writeln!(out, "train accuracy {:.4}", exp.train_report.accuracy).map_err(stdout_err)?;
    writeln!(out, "test accuracy {:.4}", exp.test_report.accuracy).map_err(stdout_err)?;
    writeln!(out, "test macro AUC {}", fmt_opt(exp.test_report.macro_auc)).map_err(stdout_err)?;
    writeln!(out, "test failure AUC {}", fmt_opt(exp.test_report.failure_auc)).map_err(stdout_err)?;
    writeln!(out, "checkpoint written to {}", a.out.display()).map_err(stdout_err)?;
    Ok(())
}

fn write_curve(path: &Path, points: &[RocPoint]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_roc_csv(points, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

fn write_roc_dir(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (class, curve) in report.classes.iter().zip(&report.roc) {
        let name = format!("roc_{}.csv", class.class.to_lowercase());
        match curve {
            Some(points) => write_curve(&dir.join(name), points)?,
            None => eprintln!("warning: ROC for {} is undefined on this data; skipped", class.class),
        }
    }
    match &report.failure_roc {
        Some(points) => write_curve(&dir.join("roc_failure_vs_rest.csv"), points),
        None => {
            eprintln!("warning: failure-vs-rest ROC is undefined on this data; skipped");
            Ok(())
        }
    }
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (params, cfg, standardizer) = load_checkpoint(&a.model)?;
    let ds = load_csv(&a.data)?;
    let report = evaluate(&params, &cfg, &standardizer, &ds)?;
    out.write_all(report.summary().as_bytes()).map_err(stdout_err)?;
    if let Some(p) = &a.report {
        std::fs::write(p, report.to_json() + "\n").map_err(|e| Error::io(p, e))?;
    }
    if let Some(dir) = &a.roc {
        write_roc_dir(dir, &report)?;
    }
    Ok(())
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let (params, cfg, standardizer) = load_checkpoint(&a.model)?;
    let rows = load_feature_rows(&a.data)?;
    let proba = predict_dataset(&params, &cfg, &standardizer, rows.iter().map(|r| r.features))?;

    let mut text = String::from("predicted,p_normal,p_warning,p_failure\n");
    for p in &proba {
        let class = HealthState::from_index(argmax(p)).ok_or_else(|| Error::Internal("class index".into()))?;
        text.push_str(&format!("{},{},{},{}\n", class.as_str(), p[0], p[1], p[2]));
    }
    match &a.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => out.write_all(text.as_bytes()).map_err(stdout_err),
    }
}
