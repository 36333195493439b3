//! Quick numeric self-checks run by the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{central_difference, grad_check, softmax_row, Tape, Var};
use crate::error::Result;
use crate::head::{calibrate_logits, combined_loss_at_scale, combined_scale_grad, CalibHeadParams};
use crate::losses::LossConfig;
use crate::metrics::{ada_ece, auroc, ece, PredictionBatch};
use crate::posthoc::{fit_temperature, FitCriterion, TemperatureGrid};
use crate::tensor::Tensor;
use crate::vit::{patchify, record_forward, HeadInput, ModelConfig, ViTParams};

#[derive(Clone, Debug, PartialEq)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> SelfCheck {
    SelfCheck { name, passed, detail }
}

fn scale_gradient() -> SelfCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let logits: Vec<f64> = (0..10).map(|_| rng.random_range(-4.0..4.0)).collect();
        let s = rng.random_range(0.2..5.0);
        let y = rng.random_range(0..10);
        let fd = central_difference(|s| combined_loss_at_scale(&logits, s, y, 0.1), s, 1e-5);
        let g = combined_scale_grad(&logits, s, y, 0.1);
        worst = worst.max((g - fd).abs() / fd.abs().max(1.0));
    }
    check("scale gradient vs finite differences", worst < 1e-5, format!("max rel err {worst:.2e}"))
}

fn end_to_end_gradient() -> Result<SelfCheck> {
    let cfg = ModelConfig {
        image_h: 4,
        image_w: 4,
        patch: 2,
        dim: 4,
        depth: 1,
        heads: 2,
        classes: 3,
        calattn_hidden: 3,
        calattn_input: HeadInput::Cls,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = ViTParams::init(&cfg, &mut rng)?;
    // move the head off its neutral start so every path carries gradient
    if let Some(h) = &mut params.head {
        h.w2 = Tensor::randn(vec![1, 3], 0.5, &mut rng);
    }
    let images = Tensor::randn(vec![2 * 16], 1.0, &mut rng);
    let patches = patchify(&cfg, images.data())?;
    let labels = [0usize, 2];
    let mut tensors = Vec::new();
    params.visit(|_, t| tensors.push(t.clone()));
    let loss_cfg = LossConfig::default();
    let report = grad_check(&tensors, 1e-5, |tape: &mut Tape, vars: &[Var]| {
        let mut k = 0;
        let bound = params.try_map::<Var, std::convert::Infallible>(|_, _| {
            k += 1;
            Ok(vars[k - 1])
        });
        let bound = bound.unwrap_or_else(|e| match e {});
        let x = tape.constant(patches.clone());
        let f = record_forward(tape, &cfg, &bound, x)?;
        loss_cfg.record(tape, f.calibrated, &labels)
    })?;
    Ok(check(
        "backbone + head gradient check",
        report.max_rel_err < 1e-3,
        format!("max rel err {:.2e} over {} values", report.max_rel_err, report.checked),
    ))
}

fn init_neutrality() -> SelfCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let head = CalibHeadParams::init(16, 8, &mut rng);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let z = Tensor::randn(vec![16], 3.0, &mut rng);
        let logits: Vec<f64> = (0..5).map(|_| rng.random_range(-5.0..5.0)).collect();
        let s = head.predict_scale(z.data()).map(|s| s.get()).unwrap_or(f64::NAN);
        let a = calibrate_logits(&logits, s).unwrap_or_default();
        let b = softmax_row(&logits);
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    check("head starts neutral", worst < 1e-5, format!("max prob diff {worst:.2e}"))
}

fn metric_hand_case() -> Result<SelfCheck> {
    let b = PredictionBatch::from_confidences(&[0.9, 0.8, 0.6, 0.55], &[true, true, false, true]);
    let (e, a) = (ece(&b, 2)?, ada_ece(&b, 2)?);
    let mixed = PredictionBatch::from_confidences(&[0.9, 0.8, 0.85, 0.1], &[true, true, false, false]);
    let u = auroc(&mixed)?;
    let ok = (e - 0.0375).abs() < 1e-12 && (a - 0.1125).abs() < 1e-12 && u == 0.75;
    Ok(check("metric hand cases", ok, format!("ece {e}, ada_ece {a}, auroc {u}")))
}

fn planted_temperature() -> Result<SelfCheck> {
    // 3:1 odds replicated with matching labels are calibrated; doubling the
    // logits must be undone by T = 2.
    let z = 3f64.ln();
    let n = 400;
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i % 4 == 0)).collect();
    let data = (0..n).flat_map(|_| [2.0 * z, 0.0]).collect();
    let logits = Tensor::matrix(n, 2, data)?;
    let fit = fit_temperature(&logits, &labels, &TemperatureGrid::default(), 15, FitCriterion::Ece)?;
    Ok(check(
        "planted temperature recovered",
        fit.temperature == 2.0,
        format!("T* = {}", fit.temperature),
    ))
}

pub fn run_selftest() -> Result<Vec<SelfCheck>> {
    Ok(vec![
        scale_gradient(),
        end_to_end_gradient()?,
        init_neutrality(),
        metric_hand_case()?,
        planted_temperature()?,
    ])
}
