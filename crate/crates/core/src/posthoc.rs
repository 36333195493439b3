//! Global temperature scaling fitted on held-out logits.

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_sum_exp, softmax_row};
use crate::error::{Error, Result};
use crate::metrics::{ece, PredictionBatch};
use crate::tensor::Tensor;

/// Ordered, strictly positive candidate temperatures.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureGrid {
    values: Vec<f64>,
}

impl Default for TemperatureGrid {
    /// `0.1, 0.2, …, 10.0` with every entry an exact `k / 10`.
    fn default() -> Self {
        Self {
            values: (1..=100).map(|k| k as f64 / 10.0).collect(),
        }
    }
}

impl TemperatureGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("temperature grid is empty".into()));
        }
        if let Some(&t) = values.iter().find(|&&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::NonPositiveTemperature(t));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("temperature grid must be strictly increasing".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitCriterion {
    #[default]
    Ece,
    Nll,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperatureFit {
    pub temperature: f64,
    /// Value of the fit criterion at the chosen temperature.
    pub score: f64,
    pub ece: f64,
}

/// `softmax(ℓ / T)`.
pub fn apply_temperature(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTemperature(t));
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / t).collect();
    Ok(softmax_row(&scaled))
}

/// Predictions for every row of `logits[n, C]` after dividing by `t`.
pub fn batch_at_temperature(logits: &Tensor, labels: &[usize], t: f64) -> Result<PredictionBatch> {
    check_rows(logits, labels)?;
    let rows = (0..logits.rows())
        .map(|i| apply_temperature(logits.row(i), t))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionBatch::from_probs(rows, labels))
}

/// Mean negative log-likelihood of `labels` under `softmax(ℓ / t)`.
pub fn nll_at_temperature(logits: &Tensor, labels: &[usize], t: f64) -> Result<f64> {
    check_rows(logits, labels)?;
    if !(t > 0.0) {
        return Err(Error::NonPositiveTemperature(t));
    }
    let total: f64 = (0..logits.rows())
        .map(|i| {
            let scaled: Vec<f64> = logits.row(i).iter().map(|l| l / t).collect();
            log_sum_exp(&scaled) - scaled[labels[i]]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

fn check_rows(logits: &Tensor, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if logits.shape().len() != 2 || logits.rows() != labels.len() {
        return Err(Error::shape(
            "temperature",
            format!("logits {:?} vs {} labels", logits.shape(), labels.len()),
        ));
    }
    let c = logits.last_dim();
    if let Some(&y) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::shape("temperature", format!("label {y} out of {c} classes")));
    }
    Ok(())
}

/// Scans the grid and keeps the temperature with the lowest criterion;
/// ties go to the smallest temperature.
pub fn fit_temperature(
    logits: &Tensor,
    labels: &[usize],
    grid: &TemperatureGrid,
    bins: usize,
    criterion: FitCriterion,
) -> Result<TemperatureFit> {
    check_rows(logits, labels)?;
    let mut best: Option<TemperatureFit> = None;
    for &t in grid.values() {
        let e = ece(&batch_at_temperature(logits, labels, t)?, bins)?;
        let score = match criterion {
            FitCriterion::Ece => e,
            FitCriterion::Nll => nll_at_temperature(logits, labels, t)?,
        };
        if best.is_none_or(|b| score < b.score) {
            best = Some(TemperatureFit {
                temperature: t,
                score,
                ece: e,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}
