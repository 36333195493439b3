//! Evaluation reports, reliability diagrams and CLS-norm diagnostics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::train::{calibrated_logits, infer_dataset, ScaleSummary};
use crate::metrics::{
    ada_ece, auroc, classwise_ece, ece, hcfp, mce, pearson, reliability_table, smece, spearman,
    BinStats, PredictionBatch, ReliabilityTable,
};
use crate::posthoc::{batch_at_temperature, fit_temperature, nll_at_temperature, TemperatureFit, TemperatureGrid};
use crate::tensor::Tensor;
use crate::vit::{cls_norm, Inference, ViTParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    PreT,
    PostT,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::PreT => "pre_T",
            Stage::PostT => "post_T",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: &'static str,
    pub stage: Stage,
    pub value: f64,
}

/// All metrics before and after global temperature scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub fit: TemperatureFit,
}

impl MetricReport {
    pub fn get(&self, metric: &str, stage: Stage) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.stage == stage)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,stage,value\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.12}", r.metric, r.stage.label(), r.value);
        }
        out
    }
}

/// Metric values for one batch; undefined metrics (e.g. AUROC with no
/// errors) are NaN.
pub fn metric_rows(batch: &PredictionBatch, logits: &Tensor, labels: &[usize], t: f64, cfg: &RunConfig, stage: Stage) -> Result<Vec<MetricRow>> {
    let m = cfg.eval.bins;
    let h = hcfp(batch, cfg.eval.hcfp_threshold);
    let values = [
        ("accuracy", batch.accuracy()),
        ("nll", nll_at_temperature(logits, labels, t)?),
        ("ece", ece(batch, m)?),
        ("mce", mce(batch, m)?),
        ("ada_ece", ada_ece(batch, m)?),
        ("classwise_ece", classwise_ece(batch, m)?),
        ("smece", smece(batch, cfg.eval.smece_bandwidth)?),
        ("auroc", auroc(batch).unwrap_or(f64::NAN)),
        ("hcfp_count", h.count as f64),
        ("hcfp_per_1000", h.per_thousand),
        ("temperature", t),
    ];
    Ok(values
        .into_iter()
        .map(|(metric, value)| MetricRow { metric, stage, value })
        .collect())
}

/// Attaches CLS norms and temperatures to a prediction batch.
pub fn annotate(mut batch: PredictionBatch, inf: &[Inference]) -> PredictionBatch {
    for (s, i) in batch.samples.iter_mut().zip(inf) {
        s.cls_norm = Some(cls_norm(&i.z_cls));
        s.scale = i.scale;
    }
    batch
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricReport,
    pub pre: PredictionBatch,
    pub post: PredictionBatch,
    pub table_pre: ReliabilityTable,
    pub table_post: ReliabilityTable,
}

/// Test-set metrics at `T = 1`, a temperature fitted on the validation
/// split, then test-set metrics at that temperature.
pub fn evaluate(cfg: &RunConfig, params: &ViTParams, val: &Dataset, test: &Dataset) -> Result<Evaluation> {
    let chunk = cfg.eval.batch_size;
    let val_inf = infer_dataset(&cfg.model, params, val, chunk)?;
    let fit = fit_temperature(
        &calibrated_logits(&val_inf)?,
        &val.labels,
        &TemperatureGrid::default(),
        cfg.eval.bins,
        cfg.eval.fit,
    )?;

    let inf = infer_dataset(&cfg.model, params, test, chunk)?;
    let logits = calibrated_logits(&inf)?;
    let pre = annotate(batch_at_temperature(&logits, &test.labels, 1.0)?, &inf);
    let post = annotate(batch_at_temperature(&logits, &test.labels, fit.temperature)?, &inf);
    let mut rows = metric_rows(&pre, &logits, &test.labels, 1.0, cfg, Stage::PreT)?;
    rows.extend(metric_rows(&post, &logits, &test.labels, fit.temperature, cfg, Stage::PostT)?);
    Ok(Evaluation {
        table_pre: reliability_table(&pre, cfg.eval.bins)?,
        table_post: reliability_table(&post, cfg.eval.bins)?,
        report: MetricReport { rows, fit },
        pre,
        post,
    })
}

// ----- reliability diagrams ------------------------------------------------

pub fn reliability_csv(table: &ReliabilityTable) -> String {
    let mut out = String::from("bin_lo,bin_hi,count,acc,conf,gap\n");
    for b in &table.bins {
        let _ = writeln!(
            out,
            "{:?},{:?},{},{:?},{:?},{:?}",
            b.lower, b.upper, b.count, b.acc, b.conf, b.gap
        );
    }
    out
}

pub fn parse_reliability_csv(text: &str) -> Result<Vec<BinStats>> {
    let bad = |l: &str| Error::Config(format!("bad reliability row '{l}'"));
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(bad(l));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(l));
            Ok(BinStats {
                lower: num(f[0])?,
                upper: num(f[1])?,
                count: f[2].parse().map_err(|_| bad(l))?,
                acc: num(f[3])?,
                conf: num(f[4])?,
                gap: num(f[5])?,
            })
        })
        .collect()
}

/// Standalone 640×480 bar chart: bin accuracy bars, the gap to bin
/// confidence, and the identity diagonal.
pub fn reliability_svg(table: &ReliabilityTable, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    let (left, right, top, bottom) = (70.0, 30.0, 50.0, 60.0);
    let (pw, ph) = (W - left - right, H - top - bottom);
    let x = |v: f64| left + v * pw;
    let y = |v: f64| top + (1.0 - v) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="640" height="480" viewBox="0 0 640 480" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="640" height="480" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="320" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12">ECE {:.2}%  MCE {:.2}%  N={}</text>"#,
        x(0.02),
        y(0.95),
        100.0 * table.ece,
        100.0 * table.mce,
        table.samples
    );
    for b in &table.bins {
        let (x0, x1) = (x(b.lower), x(b.upper));
        let w = (x1 - x0 - 1.0).max(0.5);
        let (acc_y, conf_y) = (y(b.acc), y(b.conf));
        let _ = writeln!(
            s,
            r##"<rect class="bar" x="{x0:.2}" y="{acc_y:.2}" width="{w:.2}" height="{:.2}" fill="#3465a4" data-count="{}"/>"##,
            y(0.0) - acc_y,
            b.count
        );
        if b.count > 0 {
            let (g0, g1) = (acc_y.min(conf_y), acc_y.max(conf_y));
            let _ = writeln!(
                s,
                r##"<rect class="gap" x="{x0:.2}" y="{g0:.2}" width="{w:.2}" height="{:.2}" fill="#cc0000" fill-opacity="0.35"/>"##,
                g1 - g0
            );
        }
    }
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#555" stroke-dasharray="6,4"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#,
            x(v),
            y(0.0) + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            left - 8.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">confidence</text>"#, x(0.5), H - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">accuracy</text>"#,
        y(0.5),
        y(0.5)
    );
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<stem>.csv` and `<stem>.svg`.
pub fn emit_reliability(table: &ReliabilityTable, title: &str, stem: &Path) -> Result<()> {
    let csv = stem.with_extension("csv");
    let svg = stem.with_extension("svg");
    fs::write(&csv, reliability_csv(table)).map_err(|e| Error::io(&csv, e))?;
    fs::write(&svg, reliability_svg(table, title)).map_err(|e| Error::io(&svg, e))
}

// ----- CLS-norm diagnostics -------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct CurveBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnosis {
    pub batch: PredictionBatch,
    /// Mean confidence in equal-width bins of `‖z_cls‖`.
    pub curve: Vec<CurveBin>,
    pub pearson: f64,
    pub spearman: f64,
    pub scale: ScaleSummary,
}

/// Correlation of CLS norm with confidence plus the temperature spread,
/// from a batch whose samples carry `cls_norm` (and optionally `scale`).
pub fn diagnose_batch(batch: PredictionBatch, bins: usize) -> Result<Diagnosis> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let norms: Vec<f64> = batch
        .samples
        .iter()
        .map(|s| s.cls_norm.ok_or_else(|| Error::shape("diagnose", "sample without cls_norm")))
        .collect::<Result<_>>()?;
    let conf: Vec<f64> = batch.samples.iter().map(|s| s.confidence).collect();
    let scales: Vec<f64> = batch.samples.iter().map(|s| s.scale.unwrap_or(1.0)).collect();
    let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut sums = vec![(0usize, 0.0); bins];
    for (n, c) in norms.iter().zip(&conf) {
        let j = if width > 0.0 {
            (((n - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        sums[j].0 += 1;
        sums[j].1 += c;
    }
    let curve = sums
        .iter()
        .enumerate()
        .map(|(j, &(count, total))| CurveBin {
            lower: lo + j as f64 * width,
            upper: if j + 1 == bins { hi } else { lo + (j + 1) as f64 * width },
            count,
            mean_confidence: if count > 0 { total / count as f64 } else { f64::NAN },
        })
        .collect();
    Ok(Diagnosis {
        pearson: pearson(&norms, &conf).unwrap_or(f64::NAN),
        spearman: spearman(&norms, &conf).unwrap_or(f64::NAN),
        scale: ScaleSummary::of(&scales),
        curve,
        batch,
    })
}

pub fn diagnose(cfg: &RunConfig, params: &ViTParams, ds: &Dataset) -> Result<Diagnosis> {
    let inf = infer_dataset(&cfg.model, params, ds, cfg.eval.batch_size)?;
    let logits = calibrated_logits(&inf)?;
    let batch = annotate(batch_at_temperature(&logits, &ds.labels, 1.0)?, &inf);
    diagnose_batch(batch, cfg.eval.bins)
}

impl Diagnosis {
    pub fn samples_csv(&self) -> String {
        let mut out = String::from("index,label,predicted,correct,cls_norm,confidence,s\n");
        for (i, s) in self.batch.samples.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{:.10},{:.10},{:.10}",
                s.label,
                s.predicted,
                u8::from(s.correct),
                s.cls_norm.unwrap_or(f64::NAN),
                s.confidence,
                s.scale.unwrap_or(1.0)
            );
        }
        out
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("norm_lo,norm_hi,count,mean_confidence\n");
        for b in &self.curve {
            let _ = writeln!(out, "{:.10},{:.10},{},{:.10}", b.lower, b.upper, b.count, b.mean_confidence);
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "samples: {}\npearson(cls_norm, confidence): {:.6}\nspearman(cls_norm, confidence): {:.6}\ns mean: {:.6}\ns cv: {:.6}\ns min: {:.6}\ns max: {:.6}\n",
            self.batch.len(),
            self.pearson,
            self.spearman,
            self.scale.mean,
            self.scale.cv,
            self.scale.min,
            self.scale.max
        )
    }
}
