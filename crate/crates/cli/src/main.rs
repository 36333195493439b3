//! `calattn`: train, evaluate and inspect desk-scale calibrated ViT runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use calattn::harness::report::emit_reliability;
use calattn::harness::run::checkpoint_base;
use calattn::harness::selftest::run_selftest;
use calattn::harness::{diagnose_run, eval_run, train_run, RunConfig};
use calattn::metrics::{reliability_table, PredictionBatch, DEFAULT_BINS};
use calattn::posthoc::{fit_temperature, FitCriterion, TemperatureGrid};
use calattn::{Error, Result, Tensor};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "calattn", version, about = "Per-sample temperature calibration for a small Vision Transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a full run directory.
    Train {
        /// TOML run config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set model.dim=32`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Re-evaluate a checkpoint: report, reliability diagrams, summary.
    Eval {
        /// Run directory or checkpoint base path.
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CLS-norm versus confidence and per-sample scale statistics on the test split.
    Diagnose {
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a global temperature to a logits CSV (`label,logit_0,...,logit_{C-1}`).
    FitTemp {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "ece")]
        criterion: Criterion,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Reliability diagram from a predictions CSV (`confidence,correct`).
    Diagram {
        input: PathBuf,
        /// Output stem; `.csv` and `.svg` are appended.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value = "Reliability diagram")]
        title: String,
    },
    /// Gradient, neutrality, metric and temperature self-checks.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Criterion {
    Ece,
    Nll,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train {
            config,
            overrides,
            out,
            quiet,
        } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            train_run(&cfg, &out, |d| {
                if !quiet {
                    eprintln!(
                        "epoch {:>3}  lr {:<7} loss {:.4}  train acc {:.4}  val acc {:.4}  val ece {:.4}  mean s {:.3}  cv s {:.4}",
                        d.epoch, d.lr, d.train_loss, d.train_acc, d.val_acc, d.val_ece, d.mean_s, d.cv_s
                    );
                }
            })?;
            print!("{}", std::fs::read_to_string(out.join("summary.txt")).map_err(|e| Error::io(&out, e))?);
        }
        Command::Eval { checkpoint, out } => {
            let base = resolve(&checkpoint);
            let out = out.unwrap_or_else(|| base.parent().map(Path::to_path_buf).unwrap_or_default());
            eval_run(&base, &out)?;
            print!("{}", std::fs::read_to_string(out.join("summary.txt")).map_err(|e| Error::io(&out, e))?);
        }
        Command::Diagnose { checkpoint, out } => {
            let base = resolve(&checkpoint);
            let out = out.unwrap_or_else(|| base.parent().map(Path::to_path_buf).unwrap_or_default());
            let d = diagnose_run(&base, &out)?;
            print!("{}", d.summary());
        }
        Command::FitTemp { input, criterion, bins } => {
            let (logits, labels) = read_logits(&input)?;
            let criterion = match criterion {
                Criterion::Ece => FitCriterion::Ece,
                Criterion::Nll => FitCriterion::Nll,
            };
            let fit = fit_temperature(&logits, &labels, &TemperatureGrid::default(), bins, criterion)?;
            println!("temperature,score,ece");
            println!("{:?},{:.12},{:.12}", fit.temperature, fit.score, fit.ece);
        }
        Command::Diagram { input, out, bins, title } => {
            let batch = read_predictions(&input)?;
            let table = reliability_table(&batch, bins)?;
            emit_reliability(&table, &title, &out)?;
            println!("samples {}  ece {:.6}  mce {:.6}", table.samples, table.ece, table.mce);
        }
        Command::Selftest => {
            let checks = run_selftest()?;
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if !ok {
                return Ok(ExitCode::from(4));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Accepts a run directory, a checkpoint base, or either checkpoint file.
fn resolve(p: &Path) -> PathBuf {
    if p.is_dir() {
        return checkpoint_base(p);
    }
    match p.extension().and_then(|e| e.to_str()) {
        Some("manifest" | "blob") => p.with_extension(""),
        _ => p.to_path_buf(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn bad_row(path: &Path, line: usize, what: &str) -> Error {
    Error::Config(format!("{}:{line}: {what}", path.display()))
}

fn read_logits(path: &Path) -> Result<(Tensor, Vec<usize>)> {
    let mut rdr = reader(path)?;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad_row(path, line, &e.to_string()))?;
        let label: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad_row(path, line, "label is not a class index"))?;
        let row = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|_| bad_row(path, line, "logit is not a number")))
            .collect::<Result<Vec<_>>>()?;
        if row.len() < 2 || label >= row.len() || *width.get_or_insert(row.len()) != row.len() {
            return Err(bad_row(path, line, "row width or label out of range"));
        }
        labels.push(label);
        data.extend(row);
    }
    let c = width.ok_or_else(|| Error::Config(format!("{}: no rows", path.display())))?;
    Ok((Tensor::matrix(labels.len(), c, data)?, labels))
}

fn read_predictions(path: &Path) -> Result<PredictionBatch> {
    let mut rdr = reader(path)?;
    let mut conf = Vec::new();
    let mut correct = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad_row(path, line, &e.to_string()))?;
        let c: f64 = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .filter(|c| (0.0..=1.0).contains(c))
            .ok_or_else(|| bad_row(path, line, "confidence must be a number in [0, 1]"))?;
        let ok = match rec.get(1) {
            Some("1" | "true") => true,
            Some("0" | "false") => false,
            _ => return Err(bad_row(path, line, "correct must be 0, 1, true or false")),
        };
        conf.push(c);
        correct.push(ok);
    }
    if conf.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(PredictionBatch::from_confidences(&conf, &correct))
}
