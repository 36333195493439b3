//! End-to-end runs that read a config or checkpoint and write a run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::RunConfig;
use crate::harness::report::{diagnose, emit_reliability, evaluate, Diagnosis, Evaluation, Stage};
use crate::harness::train::{diagnostics_csv, init_params, prepare_data, train, EpochDiagnostics, PreparedData};
use crate::head::head_param_count;

pub const CHECKPOINT_STEM: &str = "checkpoint";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Checkpoint base path inside a run directory.
pub fn checkpoint_base(dir: &Path) -> PathBuf {
    dir.join(CHECKPOINT_STEM)
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochDiagnostics>,
    pub evaluation: Evaluation,
}

/// Trains, evaluates and writes every run artifact into `out`.
pub fn train_run(cfg: &RunConfig, out: &Path, on_epoch: impl FnMut(&EpochDiagnostics)) -> Result<TrainRun> {
    cfg.validate()?;
    ensure_dir(out)?;
    let data = prepare_data(cfg)?;
    let outcome = train(cfg, &data, init_params(cfg)?, on_epoch)?;
    let checkpoint = Checkpoint {
        config: cfg.clone(),
        epoch: cfg.total_epochs,
        norm: data.norm.clone(),
        params: outcome.params,
    };
    checkpoint.save(&checkpoint_base(out))?;
    write(&out.join("diagnostics.csv"), &diagnostics_csv(&outcome.history))?;
    let evaluation = write_evaluation(&checkpoint, &data, out)?;
    write(
        &out.join("summary.txt"),
        &summary(&checkpoint, &data, &evaluation, &outcome.history),
    )?;
    Ok(TrainRun {
        checkpoint,
        history: outcome.history,
        evaluation,
    })
}

fn write_evaluation(ck: &Checkpoint, data: &PreparedData, out: &Path) -> Result<Evaluation> {
    let ev = evaluate(&ck.config, &ck.params, &data.val, &data.test)?;
    write(&out.join("report.csv"), &ev.report.to_csv())?;
    emit_reliability(&ev.table_pre, "Reliability before temperature scaling", &out.join("reliability_preT"))?;
    let title = format!("Reliability after temperature scaling (T = {:.1})", ev.report.fit.temperature);
    emit_reliability(&ev.table_post, &title, &out.join("reliability_postT"))?;
    Ok(ev)
}

/// Rebuilds the data splits recorded in a checkpoint's config.
pub fn data_for(ck: &Checkpoint) -> Result<PreparedData> {
    let data = prepare_data(&ck.config)?;
    if data.norm != ck.norm {
        return Err(Error::ManifestMismatch(
            "normalization statistics differ from the data the checkpoint was trained on".into(),
        ));
    }
    Ok(data)
}

/// Re-evaluates a checkpoint, writing the report, reliability diagrams and a summary.
pub fn eval_run(base: &Path, out: &Path) -> Result<Evaluation> {
    let ck = Checkpoint::load(base)?;
    ensure_dir(out)?;
    let data = data_for(&ck)?;
    let ev = write_evaluation(&ck, &data, out)?;
    write(&out.join("summary.txt"), &summary(&ck, &data, &ev, &[]))?;
    Ok(ev)
}

/// CLS-norm and temperature diagnostics on the test split.
pub fn diagnose_run(base: &Path, out: &Path) -> Result<Diagnosis> {
    let ck = Checkpoint::load(base)?;
    ensure_dir(out)?;
    let data = data_for(&ck)?;
    let d = diagnose(&ck.config, &ck.params, &data.test)?;
    write(&out.join("diagnose_samples.csv"), &d.samples_csv())?;
    write(&out.join("diagnose_curve.csv"), &d.curve_csv())?;
    write(&out.join("diagnose_summary.txt"), &d.summary())?;
    Ok(d)
}

pub fn summary(ck: &Checkpoint, data: &PreparedData, ev: &Evaluation, history: &[EpochDiagnostics]) -> String {
    let cfg = &ck.config;
    let m = &cfg.model;
    let mut s = String::new();
    let _ = writeln!(s, "run summary");
    let _ = writeln!(s, "seed: {}", cfg.seed);
    let _ = writeln!(s, "loss: {:?} (lambda {})", cfg.loss.kind, cfg.loss.lambda);
    let _ = writeln!(
        s,
        "model: {}x{}x{} patch {} dim {} depth {} heads {} classes {} calattn {} ({:?}, h={})",
        m.channels, m.image_h, m.image_w, m.patch, m.dim, m.depth, m.heads, m.classes,
        m.calattn_enabled, m.calattn_input, m.calattn_hidden
    );
    let backbone = m.backbone_param_count();
    let headp = if m.calattn_enabled {
        head_param_count(m.head_input_dim(), m.calattn_hidden)
    } else {
        0
    };
    let _ = writeln!(
        s,
        "parameters: backbone {backbone}, head {headp}, head share {:.4}%",
        100.0 * headp as f64 / (backbone + headp) as f64
    );
    let _ = writeln!(
        s,
        "data: train {} / val {} / test {}",
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    let _ = writeln!(s, "epochs: {}", ck.epoch);
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        let _ = writeln!(
            s,
            "train loss: epoch 1 {:.6} -> epoch {} {:.6}",
            first.train_loss, last.epoch, last.train_loss
        );
        let _ = writeln!(s, "cv_s: epoch 1 {:.6} -> epoch {} {:.6}", first.cv_s, last.epoch, last.cv_s);
        let _ = writeln!(s, "mean_s: epoch 1 {:.6} -> epoch {} {:.6}", first.mean_s, last.epoch, last.mean_s);
    }
    let r = &ev.report;
    let _ = writeln!(s, "fitted temperature: {:.1} (validation ECE {:.4}%)", r.fit.temperature, 100.0 * r.fit.ece);
    let _ = writeln!(s, "{:<16}{:>12}{:>12}", "metric", "pre_T", "post_T");
    for metric in ["accuracy", "ece", "mce", "ada_ece", "classwise_ece", "smece", "auroc", "nll"] {
        let pct = metric != "nll";
        let f = |st| {
            let v = r.get(metric, st).unwrap_or(f64::NAN);
            if pct { 100.0 * v } else { v }
        };
        let _ = writeln!(s, "{metric:<16}{:>12.4}{:>12.4}", f(Stage::PreT), f(Stage::PostT));
    }
    for metric in ["hcfp_count", "hcfp_per_1000"] {
        let _ = writeln!(
            s,
            "{metric:<16}{:>12.1}{:>12.1}",
            r.get(metric, Stage::PreT).unwrap_or(f64::NAN),
            r.get(metric, Stage::PostT).unwrap_or(f64::NAN)
        );
    }
    let _ = writeln!(s, "(accuracy and calibration errors in percent)");
    s
}
