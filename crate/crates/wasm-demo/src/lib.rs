//! Browser bindings for three interactive views: softmax under a
//! temperature, a reliability diagram for a miscalibrated population, and
//! the per-sample loss as a function of the scale `s`.

use calattn::harness::report::reliability_svg;
use calattn::head::{combined_loss_at_scale, combined_scale_grad, optimal_scale_oracle, ORACLE_DOMAIN};
use calattn::metrics::{ada_ece, mce, reliability_table, smece, DEFAULT_SMECE_BANDWIDTH};
use calattn::posthoc::{apply_temperature, batch_at_temperature, fit_temperature, FitCriterion, TemperatureGrid};
use calattn::Tensor;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js_err(e: calattn::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Softmax of `logits / t`.
#[wasm_bindgen]
pub fn softmax_at(logits: &[f64], t: f64) -> Result<Vec<f64>, JsValue> {
    apply_temperature(logits, t).map_err(js_err)
}

/// A population whose logits are the true ones multiplied by `sharpness`,
/// so temperature `sharpness` restores calibration.
#[wasm_bindgen]
pub struct Population {
    logits: Tensor,
    labels: Vec<usize>,
}

#[wasm_bindgen]
impl Population {
    #[wasm_bindgen(constructor)]
    pub fn new(samples: usize, classes: usize, sharpness: f64, seed: u64) -> Result<Population, JsValue> {
        if samples == 0 || classes < 2 || !(sharpness > 0.0) {
            return Err(JsValue::from_str("need samples > 0, classes >= 2, sharpness > 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(samples * classes);
        let mut labels = Vec::with_capacity(samples);
        for _ in 0..samples {
            let z: Vec<f64> = (0..classes).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = apply_temperature(&z, 1.0).map_err(js_err)?;
            let y = WeightedIndex::new(&p).map_err(|e| JsValue::from_str(&e.to_string()))?;
            labels.push(y.sample(&mut rng));
            data.extend(z.iter().map(|v| v * sharpness));
        }
        let logits = Tensor::matrix(samples, classes, data).map_err(js_err)?;
        Ok(Population { logits, labels })
    }

    /// Reliability diagram and metrics after dividing the logits by `t`.
    pub fn view(&self, t: f64, bins: usize) -> Result<ReliabilityView, JsValue> {
        let batch = batch_at_temperature(&self.logits, &self.labels, t).map_err(js_err)?;
        let table = reliability_table(&batch, bins).map_err(js_err)?;
        let svg = reliability_svg(&table, &format!("T = {t:.2}"));
        Ok(ReliabilityView {
            svg,
            accuracy: batch.accuracy(),
            confidence: batch.mean_confidence(),
            ece: table.ece,
            mce: mce(&batch, bins).map_err(js_err)?,
            ada_ece: ada_ece(&batch, bins).map_err(js_err)?,
            smece: smece(&batch, DEFAULT_SMECE_BANDWIDTH).map_err(js_err)?,
        })
    }

    /// Grid-searched temperature minimising ECE.
    pub fn fitted_temperature(&self, bins: usize) -> Result<f64, JsValue> {
        fit_temperature(&self.logits, &self.labels, &TemperatureGrid::default(), bins, FitCriterion::Ece)
            .map(|f| f.temperature)
            .map_err(js_err)
    }
}

#[wasm_bindgen(getter_with_clone)]
pub struct ReliabilityView {
    pub svg: String,
    pub accuracy: f64,
    pub confidence: f64,
    pub ece: f64,
    pub mce: f64,
    pub ada_ece: f64,
    pub smece: f64,
}

/// `[s, loss, dloss/ds]` triples for `points` values of `s` spaced
/// geometrically over `[lo, hi]`, flattened.
#[wasm_bindgen]
pub fn scale_curve(logits: &[f64], label: usize, lambda: f64, lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, JsValue> {
    if label >= logits.len() || !(lo > 0.0 && hi > lo) || points < 2 {
        return Err(JsValue::from_str("need label < classes, 0 < lo < hi, points >= 2"));
    }
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    Ok((0..points)
        .flat_map(|i| {
            let s = lo * (ratio * i as f64).exp();
            [
                s,
                combined_loss_at_scale(logits, s, label, lambda),
                combined_scale_grad(logits, s, label, lambda),
            ]
        })
        .collect())
}

/// Loss-minimising scale for one sample.
#[wasm_bindgen]
pub fn best_scale(logits: &[f64], label: usize, lambda: f64) -> Result<f64, JsValue> {
    if label >= logits.len() {
        return Err(JsValue::from_str("label out of range"));
    }
    Ok(optimal_scale_oracle(logits, label, lambda, ORACLE_DOMAIN))
}
