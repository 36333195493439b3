//! Calibration metrics over a batch of predictions.
//!
//! All values are fractions in `[0, 1]`; conversion to percent belongs to the
//! presentation layer. Equal-width bins are half-open `(lo, hi]`, with a
//! confidence of exactly 0 assigned to the first bin.

use std::cmp::Ordering;

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 15;
pub const DEFAULT_SMECE_BANDWIDTH: f64 = 0.05;
pub const DEFAULT_HCFP_THRESHOLD: f64 = 0.90;

/// One classified sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub confidence: f64,
    pub predicted: usize,
    pub label: usize,
    pub correct: bool,
    pub probs: Option<Vec<f64>>,
    pub cls_norm: Option<f64>,
    pub scale: Option<f64>,
}

impl Prediction {
    /// Builds a prediction from a full probability vector; ties in the
    /// argmax resolve to the lowest class index.
    pub fn from_probs(probs: Vec<f64>, label: usize) -> Self {
        let (predicted, confidence) = probs.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (i, p)| if p > best.1 { (i, p) } else { best },
        );
        Self {
            confidence,
            predicted,
            label,
            correct: predicted == label,
            probs: Some(probs),
            cls_norm: None,
            scale: None,
        }
    }

    /// A top-label-only prediction (no class probabilities).
    pub fn from_confidence(confidence: f64, correct: bool) -> Self {
        Self {
            confidence,
            predicted: 0,
            label: if correct { 0 } else { 1 },
            correct,
            probs: None,
            cls_norm: None,
            scale: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionBatch {
    pub samples: Vec<Prediction>,
}

impl PredictionBatch {
    pub fn new(samples: Vec<Prediction>) -> Self {
        Self { samples }
    }

    pub fn from_probs(rows: Vec<Vec<f64>>, labels: &[usize]) -> Self {
        Self::new(
            rows.into_iter()
                .zip(labels)
                .map(|(p, &y)| Prediction::from_probs(p, y))
                .collect(),
        )
    }

    pub fn from_confidences(conf: &[f64], correct: &[bool]) -> Self {
        Self::new(
            conf.iter()
                .zip(correct)
                .map(|(&c, &k)| Prediction::from_confidence(c, k))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn accuracy(&self) -> f64 {
        self.samples.iter().filter(|s| s.correct).count() as f64 / self.len() as f64
    }

    pub fn mean_confidence(&self) -> f64 {
        self.samples.iter().map(|s| s.confidence).sum::<f64>() / self.len() as f64
    }

    fn points(&self) -> Vec<(f64, bool)> {
        self.samples.iter().map(|s| (s.confidence, s.correct)).collect()
    }

    fn non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyBatch)
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinScheme {
    EqualWidth,
    EqualMass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinStats {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub acc: f64,
    pub conf: f64,
    pub gap: f64,
}

impl BinStats {
    fn from_members(lower: f64, upper: f64, members: &[(f64, bool)]) -> Self {
        let count = members.len();
        let (acc, conf) = if count == 0 {
            (0.0, 0.0)
        } else {
            let hits = members.iter().filter(|m| m.1).count() as f64;
            let total: f64 = members.iter().map(|m| m.0).sum();
            (hits / count as f64, total / count as f64)
        };
        Self {
            lower,
            upper,
            count,
            acc,
            conf,
            gap: (acc - conf).abs(),
        }
    }
}

fn edge(j: usize, m: usize) -> f64 {
    j as f64 / m as f64
}

/// Index of the `(j/m, (j+1)/m]` bin holding `c`.
pub fn equal_width_index(c: f64, m: usize) -> usize {
    if c <= edge(1, m) {
        return 0;
    }
    let mut idx = ((c * m as f64).ceil() as usize).clamp(1, m) - 1;
    while idx > 0 && c <= edge(idx, m) {
        idx -= 1;
    }
    while idx + 1 < m && c > edge(idx + 1, m) {
        idx += 1;
    }
    idx
}

fn equal_width(points: &[(f64, bool)], m: usize) -> Vec<BinStats> {
    let mut groups: Vec<Vec<(f64, bool)>> = vec![Vec::new(); m];
    for &p in points {
        groups[equal_width_index(p.0, m)].push(p);
    }
    groups
        .iter()
        .enumerate()
        .map(|(j, g)| BinStats::from_members(edge(j, m), edge(j + 1, m), g))
        .collect()
}

/// Stable sort by confidence, then `m` contiguous runs; the first `N mod m`
/// runs hold one extra sample. Fewer than `m` samples give `N` singleton bins.
fn equal_mass(points: &[(f64, bool)], m: usize) -> Vec<BinStats> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let n = sorted.len();
    let bins = m.min(n);
    let (base, extra) = (n / bins, n % bins);
    let mut out = Vec::with_capacity(bins);
    let mut start = 0;
    for j in 0..bins {
        let size = base + usize::from(j < extra);
        let members = &sorted[start..start + size];
        out.push(BinStats::from_members(
            members[0].0,
            members[size - 1].0,
            members,
        ));
        start += size;
    }
    out
}

pub fn bin_stats(batch: &PredictionBatch, m: usize, scheme: BinScheme) -> Result<Vec<BinStats>> {
    batch.non_empty()?;
    if m == 0 {
        return Err(Error::Config("bin count must be >= 1".into()));
    }
    let points = batch.points();
    Ok(match scheme {
        BinScheme::EqualWidth => equal_width(&points, m),
        BinScheme::EqualMass => equal_mass(&points, m),
    })
}

fn weighted_gap(bins: &[BinStats], n: usize) -> f64 {
    bins.iter()
        .map(|b| b.count as f64 / n as f64 * b.gap)
        .sum()
}

/// Expected calibration error over equal-width bins.
pub fn ece(batch: &PredictionBatch, m: usize) -> Result<f64> {
    Ok(weighted_gap(&bin_stats(batch, m, BinScheme::EqualWidth)?, batch.len()))
}

/// Maximum calibration error over non-empty equal-width bins.
pub fn mce(batch: &PredictionBatch, m: usize) -> Result<f64> {
    Ok(bin_stats(batch, m, BinScheme::EqualWidth)?
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.gap)
        .fold(0.0, f64::max))
}

/// ECE over equal-mass (adaptive) bins.
pub fn ada_ece(batch: &PredictionBatch, m: usize) -> Result<f64> {
    Ok(weighted_gap(&bin_stats(batch, m, BinScheme::EqualMass)?, batch.len()))
}

/// Class-wise ECE: for each class `k`, equal-width ECE of the column `ŷ_k`
/// against the indicator `y == k`, weighted by `1/N` (every sample
/// contributes to every class); averaged over classes.
pub fn classwise_ece(batch: &PredictionBatch, m: usize) -> Result<f64> {
    batch.non_empty()?;
    let classes = match &batch.samples[0].probs {
        Some(p) => p.len(),
        None => return Err(Error::MissingProbs),
    };
    let n = batch.len();
    let mut total = 0.0;
    for k in 0..classes {
        let mut points = Vec::with_capacity(n);
        for s in &batch.samples {
            let probs = s.probs.as_ref().ok_or(Error::MissingProbs)?;
            if probs.len() != classes {
                return Err(Error::shape("classwise_ece", "ragged probability rows"));
            }
            points.push((probs[k], s.label == k));
        }
        total += weighted_gap(&equal_width(&points, m), n);
    }
    Ok(total / classes as f64)
}

/// Kernel-smoothed ECE with a Gaussian kernel of the given bandwidth,
/// evaluated directly in `O(N²)`.
pub fn smece(batch: &PredictionBatch, bandwidth: f64) -> Result<f64> {
    batch.non_empty()?;
    if !(bandwidth > 0.0) {
        return Err(Error::Config("smECE bandwidth must be positive".into()));
    }
    let pts = batch.points();
    let denom = 2.0 * bandwidth * bandwidth;
    let total: f64 = pts
        .iter()
        .map(|&(pi, _)| {
            let (mut num, mut den) = (0.0, 0.0);
            for &(pj, cj) in &pts {
                let w = (-(pi - pj) * (pi - pj) / denom).exp();
                den += w;
                if cj {
                    num += w;
                }
            }
            (num / den - pi).abs()
        })
        .sum();
    Ok(total / pts.len() as f64)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Probability that a random correct sample is more confident than a random
/// incorrect one (Mann–Whitney U, ties count one half).
pub fn auroc(batch: &PredictionBatch) -> Result<f64> {
    let conf: Vec<f64> = batch.samples.iter().map(|s| s.confidence).collect();
    let n_pos = batch.samples.iter().filter(|s| s.correct).count();
    let n_neg = batch.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let ranks = average_ranks(&conf);
    let rank_sum: f64 = batch
        .samples
        .iter()
        .zip(&ranks)
        .filter(|(s, _)| s.correct)
        .map(|(_, r)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// High-confidence false positives: incorrect samples with confidence ≥ τ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hcfp {
    pub count: usize,
    pub per_thousand: f64,
}

pub fn hcfp(batch: &PredictionBatch, tau: f64) -> Hcfp {
    let count = batch
        .samples
        .iter()
        .filter(|s| !s.correct && s.confidence >= tau)
        .count();
    let per_thousand = if batch.is_empty() {
        0.0
    } else {
        1000.0 * count as f64 / batch.len() as f64
    };
    Hcfp {
        count,
        per_thousand,
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::shape("pearson", "need two equal-length series of n >= 2"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("spearman", "series lengths differ"));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Equal-width bins annotated with the batch-level ECE and MCE.
#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityTable {
    pub bins: Vec<BinStats>,
    pub samples: usize,
    pub ece: f64,
    pub mce: f64,
}

pub fn reliability_table(batch: &PredictionBatch, m: usize) -> Result<ReliabilityTable> {
    let bins = bin_stats(batch, m, BinScheme::EqualWidth)?;
    let ece = weighted_gap(&bins, batch.len());
    let mce = bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.gap)
        .fold(0.0, f64::max);
    Ok(ReliabilityTable {
        bins,
        samples: batch.len(),
        ece,
        mce,
    })
}
