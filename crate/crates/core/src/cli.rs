//! Command-line front end.
//!
//! Flags given on the command line override values from `--config`, which
//! in turn override the selected profile.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::loss_weighting::grad_curve_csv;
use crate::seq2seq::{Checkpoint, Seq2Seq};
use crate::text_metrics::{bleu4, l_dimen, u_dimen, wl2_of, DimenConfig, Wl2Config};
use crate::training::{
    build_pairs, evaluate, load_corpora, run_experiment, Corpus, MetricConfig, Profile, RunConfig, Vocabulary,
};

#[derive(Debug, Parser)]
#[command(name = "replex", version, about = "Train and score dialogue models for repetitive generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints and a metric log.
    Train(TrainArgs),
    /// Score a checkpoint's greedy responses on a corpus.
    Eval(EvalArgs),
    /// Score a file of whitespace-tokenized utterances, one per line.
    Metrics(MetricsArgs),
    /// Write the synthetic training and validation corpora.
    Gencorpus(GencorpusArgs),
    /// Export loss and gradient curves as CSV.
    Gradcurve(GradcurveArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Key-value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base settings [default: desk]
    #[arg(long, value_parser = ["desk", "paper"])]
    pub profile: Option<String>,
    /// Loss weighting [default: ce]
    #[arg(long, value_parser = ["ce", "fl", "ldr", "tfl", "tldr", "uniform"])]
    pub scheme: Option<String>,
    /// Focal exponent for fl and tfl [default: 2]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Constant weight of the uniform scheme [default: 2]
    #[arg(long = "uniform-w")]
    pub uniform_w: Option<f64>,
    /// Attention wiring [default: pre for desk, pre-highway for paper]
    #[arg(long, value_parser = ["post", "if", "pre", "pre-highway"])]
    pub attention: Option<String>,
    /// Random seed [default: 1]
    #[arg(long, env = "REPLEX_SEED")]
    pub seed: Option<u64>,
    /// Training epochs, may be fractional [default: 30 for desk, 10 for paper]
    #[arg(long)]
    pub epochs: Option<f64>,
    /// Epochs between validations [default: 1 for desk, 0.5 for paper]
    #[arg(long = "valid-interval")]
    pub valid_interval: Option<f64>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let forced: Option<Profile> = self.profile.as_deref().map(str::parse).transpose()?;
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path, forced).map_err(|e| match e {
                Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
                other => other,
            })?,
            None => RunConfig::profile(forced.unwrap_or(Profile::Desk)),
        };
        let overrides: [(&str, Option<String>); 7] = [
            ("scheme", self.scheme.clone()),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("uniform_w", self.uniform_w.map(|v| v.to_string())),
            ("attention", self.attention.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("valid_interval", self.valid_interval.map(|v| v.to_string())),
        ];
        for (k, v) in overrides {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.finish()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Output directory for checkpoints and the metric log
    #[arg(long, default_value = "replex-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Checkpoint to evaluate
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dialogue corpus to score [default: the configured validation split]
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Utterances, one per line
    pub file: PathBuf,
    /// Reference utterances, line-aligned, for BLEU-4
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Comma-separated DIMEN weights [default: 0.25,0.25,0.25,0.25]
    #[arg(long)]
    pub alpha: Option<String>,
    /// Comma-separated WL2 bin weights [default: 0.9,0.8,...,0.0]
    #[arg(long)]
    pub beta: Option<String>,
}

#[derive(Debug, Args)]
pub struct GencorpusArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Output directory for train.txt and valid.txt
    #[arg(long, default_value = "corpus")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcurveArgs {
    /// Output CSV file; standard output when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Focal exponent of the exported tfl curve
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
}

/// Process exit status for an error: 1 for aborted training, 2 for bad
/// configuration, 3 for unreadable or unusable data.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::TrainingAborted(_) | Error::Shape { .. } => 1,
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_) => 3,
    }
}

fn parse_list(flag: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("--{flag}: cannot parse `{x}`")))
        })
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => run_train(&a),
        Command::Eval(a) => run_eval(&a),
        Command::Metrics(a) => {
            print!("{}", run_metrics(&a)?);
            Ok(())
        }
        Command::Gencorpus(a) => run_gencorpus(&a),
        Command::Gradcurve(a) => run_gradcurve(&a),
    }
}

pub fn run_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    create_dir(&args.out)?;
    eprintln!(
        "training {} attention with {} loss, seed {}",
        cfg.model.attention, cfg.train.scheme, cfg.train.seed
    );
    let (_, outcome) = run_experiment(&cfg, Some(&args.out), |rec| {
        let r = &rec.report;
        eprintln!(
            "epoch {:.2} step {} wl2={:.4} l_dimen={:.4} bleu4={:.4}",
            rec.epoch, rec.step, r.wl2, r.l_dimen, r.bleu4
        );
    })?;
    outcome.best.save(&args.out.join("best.ckpt"))?;
    outcome.last().save(&args.out.join("last.ckpt"))?;
    let best = &outcome.log[outcome.best_index];
    println!("best_epoch={}", best.epoch);
    println!("best_step={}", best.step);
    print!("{}", best.report);
    Ok(())
}

pub fn run_eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let vocab = Vocabulary::from_tokens(ckpt.vocab.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let model = Seq2Seq::from_params(ckpt.config.clone(), &ckpt.params)?;
    let corpus = match &args.corpus {
        Some(p) => Corpus::load(p)?,
        None => load_corpora(&cfg)?.1,
    };
    let pairs = build_pairs(&corpus, &vocab, &cfg.train.pairs)?;
    let pairs = match cfg.valid_limit {
        Some(n) if args.corpus.is_none() => pairs.into_iter().take(n).collect(),
        _ => pairs,
    };
    let metrics = MetricConfig {
        dimen: cfg.dimen.clone(),
        wl2: cfg.wl2.clone(),
    };
    let report = evaluate(&model, &pairs, cfg.train.pairs.response_truncation, &metrics)?;
    print!("{report}");
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<Vec<String>> = text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    if lines.is_empty() {
        return Err(Error::Data(format!("{}: no utterances", path.display())));
    }
    Ok(lines)
}

/// The key-value report for a file of utterances.
pub fn run_metrics(args: &MetricsArgs) -> Result<String> {
    let dimen = match &args.alpha {
        Some(s) => DimenConfig::new(parse_list("alpha", s)?).map_err(|e| Error::Config(e.to_string()))?,
        None => DimenConfig::default(),
    };
    let wl2_cfg = match &args.beta {
        Some(s) => Wl2Config::new(parse_list("beta", s)?).map_err(|e| Error::Config(e.to_string()))?,
        None => Wl2Config::default(),
    };
    let hyps = read_lines(&args.file)?;
    let (wl2, hist) = wl2_of(&hyps, &dimen, &wl2_cfg);
    let mean_u = hyps.iter().map(|h| u_dimen(h, &dimen)).sum::<f64>() / hyps.len() as f64;
    let mut out = format!("wl2={wl2}\nl_dimen={}\n", l_dimen(&hyps, &dimen));
    if let Some(refs) = &args.refs {
        let refs = read_lines(refs)?;
        if refs.len() != hyps.len() {
            return Err(Error::Data(format!(
                "{} utterances but {} references",
                hyps.len(),
                refs.len()
            )));
        }
        out.push_str(&format!("bleu4={}\n", bleu4(&hyps, &refs)?));
    }
    out.push_str(&format!("mean_u_dimen={mean_u}\nhist={hist}\n"));
    Ok(out)
}

pub fn run_gencorpus(args: &GencorpusArgs) -> Result<()> {
    let mut cfg = args.run.resolve()?;
    if let Some(seed) = args.run.seed {
        cfg.synthetic.seed = seed;
    }
    cfg.train_corpus = None;
    cfg.valid_corpus = None;
    let (train, valid) = load_corpora(&cfg)?;
    create_dir(&args.out)?;
    train.save(&args.out.join("train.txt"))?;
    valid.save(&args.out.join("valid.txt"))?;
    eprintln!("wrote {} training and {} validation dialogues", train.len(), valid.len());
    Ok(())
}

pub fn run_gradcurve(args: &GradcurveArgs) -> Result<()> {
    if !(args.gamma >= 0.0 && args.gamma.is_finite()) {
        return Err(Error::Config(format!("--gamma must be non-negative, got {}", args.gamma)));
    }
    let csv = grad_curve_csv(args.gamma);
    match &args.out {
        Some(path) => std::fs::write(path, csv).map_err(|e| Error::io(path, e)),
        None => std::io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}
