//! The `dfa` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{prepare, save_bundle};
use crate::diffmath::primitive_gradient_errors;
use crate::dfa::{episode_gradient_error, heatmap_pgm, trace_csv, write_text};
use crate::error::{Error, Result};
use crate::seeds::{derive_seed, tag};
use crate::train::{
    collect_records, comparison_table, evaluate, mask_frequency, split_tag, trace_episodes,
    train_run, write_run, ExperimentConfig, TrainedModel, CONFIG_FILE,
};

/// Largest relative error `grad-check` accepts.
pub const GRAD_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "dfa", version, about = "Budgeted dynamic feature acquisition on time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Build a corrupted dataset from the raw archive and cache it.
    PrepareData(PrepareArgs),
    /// Train one acquirer/classifier pair and write its run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test (or training) split.
    Evaluate(EvaluateArgs),
    /// Aggregate run records into a mean ± std accuracy table.
    Compare(CompareArgs),
    /// Export acquisition heatmaps and per-series traces.
    ExportPatterns(ExportArgs),
    /// Check tape gradients against finite differences.
    GradCheck(GradCheckArgs),
}

/// Flags mapping onto `[data]` keys.
#[derive(Debug, Args, Default)]
pub struct DataFlags {
    #[arg(long)]
    pub dataset: Option<String>,
    /// Directory holding the raw archive files.
    #[arg(long = "in", value_name = "DIR")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub fake: Option<String>,
    #[arg(long)]
    pub fake_count: Option<usize>,
    #[arg(long)]
    pub shift: bool,
    #[arg(long)]
    pub normalize: Option<bool>,
    #[arg(long)]
    pub gp_variance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub acquirer: Option<String>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub penalty_scale: Option<f64>,
    #[arg(long)]
    pub acquirer_hidden: Option<usize>,
    #[arg(long)]
    pub lstm_layers: Option<usize>,
    #[arg(long)]
    pub time_encoding: Option<String>,
    #[arg(long)]
    pub forest_trees: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run config; defaults to `config.ini` beside the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `test` or `train`.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Directory searched recursively for run records.
    #[arg(long)]
    pub config_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "random,learned,complete")]
    pub acquirers: Vec<String>,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// First `n` test series.
    #[arg(long, default_value_t = 100)]
    pub n_series: usize,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl DataFlags {
    fn pairs(&self, out: &mut Vec<(String, String)>) {
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("data.dataset", self.dataset.clone());
        push("data.input", self.input.as_ref().map(|p| p.display().to_string()));
        push("data.fold", self.fold.map(|v| v.to_string()));
        push("data.fake", self.fake.clone());
        push("data.fake_count", self.fake_count.map(|v| v.to_string()));
        push("data.shift", self.shift.then(|| "true".to_string()));
        push("data.normalize", self.normalize.map(|v| v.to_string()));
        push("data.gp_variance", self.gp_variance.map(|v| v.to_string()));
        push("train.seed", self.seed.map(|v| v.to_string()));
    }
}

impl TrainArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut pairs = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                ExperimentConfig::parse_pairs(&text, p)?
            }
            None => Vec::new(),
        };
        self.data.pairs(&mut pairs);
        let flags = [
            ("model.acquirer", self.acquirer.clone()),
            ("model.budget", self.budget.map(|v| v.to_string())),
            ("model.temperature", self.temperature.map(|v| v.to_string())),
            ("model.penalty_scale", self.penalty_scale.map(|v| v.to_string())),
            ("model.acquirer_hidden", self.acquirer_hidden.map(|v| v.to_string())),
            ("model.lstm_layers", self.lstm_layers.map(|v| v.to_string())),
            ("model.time_encoding", self.time_encoding.clone()),
            ("model.forest_trees", self.forest_trees.map(|v| v.to_string())),
            ("train.batch_size", self.batch_size.map(|v| v.to_string())),
            ("train.lr", self.lr.map(|v| v.to_string())),
            ("train.max_epochs", self.max_epochs.map(|v| v.to_string())),
            ("train.patience", self.patience.map(|v| v.to_string())),
            ("train.val_fraction", self.val_fraction.map(|v| v.to_string())),
            ("output.dir", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        pairs.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        // the dataset decides the defaults, so it is applied first
        pairs.sort_by_key(|(k, _)| k != "data.dataset");
        ExperimentConfig::from_pairs(&pairs)
    }
}

fn config_beside(checkpoint: &Path, explicit: Option<&PathBuf>) -> Result<ExperimentConfig> {
    let path = match explicit {
        Some(p) => p.clone(),
        None => checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(CONFIG_FILE),
    };
    ExperimentConfig::load(&path)
}

fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let mut pairs = Vec::new();
    args.data.pairs(&mut pairs);
    pairs.sort_by_key(|(k, _)| k != "data.dataset");
    let mut cfg = ExperimentConfig::from_pairs(&pairs)?;
    cfg.out_dir = args.out.clone();
    let bundle = prepare(&cfg.data)?;
    save_bundle(&bundle, &args.out)?;
    write_text(&args.out.join(CONFIG_FILE), &cfg.to_text())?;
    println!("{}", bundle.summary());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.resolve()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_text(&cfg.out_dir.join(CONFIG_FILE), &cfg.to_text())?;
    let bundle = prepare(&cfg.data)?;
    eprintln!("{} seed={} config={}", bundle.summary(), cfg.seed, cfg.hash());
    let quiet = args.quiet;
    let outcome = train_run(&cfg, &bundle, &mut |e| {
        if !quiet {
            eprintln!(
                "epoch {:>3} train_loss {:.4} train_acc {:.4} val_loss {:.4} val_acc {:.4} val_cost {:.1}",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy, e.val_cost
            );
        }
    })?;
    write_run(&cfg, &outcome)?;
    let r = &outcome.record;
    println!(
        "acquirer={} seed={} test_accuracy={:.4} test_cost={:.2} real_hit_rate={:.4} best_epoch={} out={}",
        r.acquirer,
        r.seed,
        r.test_accuracy,
        r.test_cost,
        r.test_real_hit_rate,
        r.best_epoch.map_or("-".to_string(), |e| e.to_string()),
        cfg.out_dir.display()
    );
    if let Some(reason) = &r.diverged {
        return Err(Error::Diverged(reason.clone()));
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = config_beside(&args.checkpoint, args.config.as_ref())?;
    let model = TrainedModel::load(&args.checkpoint)?;
    let bundle = prepare(&cfg.data)?;
    let (split, id) = match args.split.as_str() {
        "test" => (&bundle.test, split_tag::TEST),
        "train" => (&bundle.train, split_tag::TRAIN),
        other => return Err(Error::Config(format!("unknown split '{other}' (expected test or train)"))),
    };
    let eval_seed = derive_seed(cfg.seed, &[tag::EVAL_NOISE]);
    let r = evaluate(&model, &bundle, split, eval_seed, id, cfg.batch_size)?;
    println!(
        "split={} seed={} accuracy={:?} loss={:?} mean_cost={:?} real_hit_rate={:?}",
        args.split, cfg.seed, r.accuracy, r.loss, r.mean_cost, r.real_hit_rate
    );
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let records = collect_records(&args.config_dir)?;
    let acquirers: Vec<&str> = args.acquirers.iter().map(String::as_str).collect();
    let table = comparison_table(&records, &acquirers)?;
    if let Some(out) = &args.out {
        write_text(out, &table)?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    let cfg = config_beside(&args.checkpoint, args.config.as_ref())?;
    let model = TrainedModel::load(&args.checkpoint)?;
    let bundle = prepare(&cfg.data)?;
    let n = args.n_series.min(bundle.test.len());
    if n == 0 {
        return Err(Error::invalid("--n-series must be positive"));
    }
    let ids: Vec<usize> = (0..n).collect();
    let eval_seed = derive_seed(cfg.seed, &[tag::EVAL_NOISE]);
    let episodes = trace_episodes(&model, &bundle, &bundle.test, &ids, eval_seed, split_tag::TEST)?;
    let freq = mask_frequency(&episodes)?;
    write_text(&args.out.join("heatmap.pgm"), &heatmap_pgm(&freq)?)?;
    let mut csv = String::from("step,feature,frequency\n");
    for t in 0..freq.rows() {
        for (j, v) in freq.row(t).iter().enumerate() {
            csv.push_str(&format!("{t},{j},{v:?}\n"));
        }
    }
    write_text(&args.out.join("frequency.csv"), &csv)?;
    for e in &episodes {
        write_text(
            &args.out.join("traces").join(format!("series_{:05}.csv", e.series_id)),
            &trace_csv(e),
        )?;
    }
    let export = format!(
        "[export]\ncheckpoint = {}\nn_series = {n}\nseed = {}\n\n{}",
        args.checkpoint.display(),
        cfg.seed,
        cfg.to_text()
    );
    write_text(&args.out.join("export.ini"), &export)?;
    let real_mass = {
        let (mut real, mut total) = (0.0, 0.0);
        for e in &episodes {
            let len = e.masks.rows();
            for t in 0..len {
                for (j, v) in e.masks.row(t).iter().enumerate() {
                    total += v;
                    if bundle.is_real(t, len, j) {
                        real += v;
                    }
                }
            }
        }
        if total > 0.0 { real / total } else { 0.0 }
    };
    println!(
        "series={n} steps={} features={} real_mass={real_mass:.4} out={}",
        freq.rows(),
        freq.last_dim(),
        args.out.display()
    );
    Ok(())
}

fn cmd_grad_check(args: &GradCheckArgs) -> Result<()> {
    let mut worst = 0.0f64;
    for (name, err) in primitive_gradient_errors(args.seed)? {
        println!("{name:<20} {err:.3e}");
        worst = worst.max(err);
    }
    let episode = episode_gradient_error(args.seed)?;
    println!("{:<20} {episode:.3e}", "episode");
    worst = worst.max(episode);
    if worst >= GRAD_TOLERANCE {
        return Err(Error::invalid(format!(
            "gradient check failed: max relative error {worst:.3e} >= {GRAD_TOLERANCE:e}"
        )));
    }
    println!("ok: max relative error {worst:.3e}");
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::PrepareData(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::ExportPatterns(a) => cmd_export(a),
        Command::GradCheck(a) => cmd_grad_check(a),
    }
}
