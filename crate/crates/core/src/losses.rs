//! Training objectives.
//!
//! The free functions take a probability vector and a label and are the
//! reference definitions. [`LossConfig::record`] builds the same objectives
//! on a [`Tape`] from (already temperature-scaled) logits, going through
//! log-softmax for stability.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest true-class probability accepted by the log-based losses.
pub const MIN_PROB: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Brier,
    CeBrier,
    Focal,
    LabelSmooth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Brier weight for `ce_brier`.
    pub lambda: f64,
    /// Focal exponent.
    pub gamma: f64,
    /// Use `gamma_low` below `focal_threshold` true-class probability.
    pub focal_schedule: bool,
    pub gamma_low: f64,
    pub focal_threshold: f64,
    /// Label-smoothing mass.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::CeBrier,
            lambda: 0.1,
            gamma: 3.0,
            focal_schedule: false,
            gamma_low: 5.0,
            focal_threshold: 0.25,
            alpha: 0.1,
        }
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("loss.lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.gamma >= 0.0 && self.gamma_low >= 0.0) {
            return Err(Error::Config("loss.gamma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("loss.alpha must be in [0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    /// Focal exponent for a sample whose true-class probability is `p`.
    pub fn focal_gamma(&self, p: f64) -> f64 {
        if self.focal_schedule && p < self.focal_threshold {
            self.gamma_low
        } else {
            self.gamma
        }
    }

    /// Per-sample loss from a probability vector.
    pub fn eval(&self, probs: &[f64], label: usize) -> Result<f64> {
        match self.kind {
            LossKind::Ce => cross_entropy(probs, label),
            LossKind::Brier => Ok(brier(probs, label)),
            LossKind::CeBrier => combined(probs, label, self.lambda),
            LossKind::Focal => focal(probs, label, self.focal_gamma(probs[label])),
            LossKind::LabelSmooth => label_smooth_ce(probs, label, self.alpha),
        }
    }

    /// Records the batch-mean loss for `logits: [n, C]` on `tape`.
    pub fn record(&self, tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
        let classes = tape.value(logits).last_dim();
        let n = labels.len();
        if tape.value(logits).rows() != n || labels.iter().any(|&y| y >= classes) {
            return Err(Error::shape("loss", "one in-range label per logit row"));
        }
        let logp = tape.log_softmax(logits);
        let picked = tape.pick_cols(logp, labels.to_vec())?;
        let per_sample = match self.kind {
            LossKind::Ce => tape.neg(picked),
            LossKind::Brier => brier_on_tape(tape, logits, labels)?,
            LossKind::CeBrier => {
                let ce = tape.neg(picked);
                let b = brier_on_tape(tape, logits, labels)?;
                let b = tape.scale(b, self.lambda);
                tape.add(ce, b)?
            }
            LossKind::Focal => {
                let p = tape.exp(picked);
                let gammas = tape
                    .value(p)
                    .data()
                    .iter()
                    .map(|&p| self.focal_gamma(p))
                    .collect();
                let neg_p = tape.neg(p);
                let one_minus = tape.add_scalar(neg_p, 1.0);
                let weight = tape.powf(one_minus, gammas)?;
                let weighted = tape.mul(weight, picked)?;
                tape.neg(weighted)
            }
            LossKind::LabelSmooth => {
                let q = smoothed_targets(labels, classes, self.alpha);
                let q = tape.constant(q);
                let prod = tape.mul(logp, q)?;
                let row = tape.sum_rows(prod);
                tape.neg(row)
            }
        };
        Ok(tape.mean(per_sample))
    }
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        t.data_mut()[i * classes + y] = 1.0;
    }
    t
}

fn smoothed_targets(labels: &[usize], classes: usize, alpha: f64) -> Tensor {
    let mut t = Tensor::full(vec![labels.len(), classes], alpha / classes as f64);
    for (i, &y) in labels.iter().enumerate() {
        t.data_mut()[i * classes + y] += 1.0 - alpha;
    }
    t
}

fn brier_on_tape(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let classes = tape.value(logits).last_dim();
    let p = tape.softmax(logits);
    let target = tape.constant(one_hot(labels, classes));
    let diff = tape.sub(p, target)?;
    let sq = tape.square(diff);
    Ok(tape.sum_rows(sq))
}

fn true_prob(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs[label];
    if p < MIN_PROB {
        Err(Error::DegenerateProb(p))
    } else {
        Ok(p)
    }
}

/// `−log ŷ_y`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    Ok(-true_prob(probs, label)?.ln())
}

/// `−log softmax(logits)_y` via log-sum-exp.
pub fn cross_entropy_from_logits(logits: &[f64], label: usize) -> f64 {
    crate::autodiff::log_sum_exp(logits) - logits[label]
}

/// `Σ_c (ŷ_c − e_yc)²`, in `[0, 2]`.
pub fn brier(probs: &[f64], label: usize) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            let d = if c == label { p - 1.0 } else { p };
            d * d
        })
        .sum()
}

/// `CE + λ·Brier`.
pub fn combined(probs: &[f64], label: usize, lambda: f64) -> Result<f64> {
    Ok(cross_entropy(probs, label)? + lambda * brier(probs, label))
}

/// `−(1 − ŷ_y)^γ log ŷ_y`.
pub fn focal(probs: &[f64], label: usize, gamma: f64) -> Result<f64> {
    let p = true_prob(probs, label)?;
    Ok(-(1.0 - p).powf(gamma) * p.ln())
}

/// Cross-entropy against `q = (1 − α)·e_y + α/C`.
pub fn label_smooth_ce(probs: &[f64], label: usize, alpha: f64) -> Result<f64> {
    let c = probs.len() as f64;
    let mut total = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        let q = alpha / c + if k == label { 1.0 - alpha } else { 0.0 };
        if q == 0.0 {
            continue;
        }
        if p < MIN_PROB {
            return Err(Error::DegenerateProb(p));
        }
        total -= q * p.ln();
    }
    Ok(total)
}
