mod common;

use calattn::head::calibrate_logits;
use calattn::metrics::ece;
use calattn::posthoc::{apply_temperature, batch_at_temperature, fit_temperature, FitCriterion, TemperatureGrid};
use calattn::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::{weighted::WeightedIndex, Distribution};

fn argmax(xs: &[f64]) -> usize {
    (1..xs.len()).fold(0, |b, k| if xs[k] > xs[b] { k } else { b })
}

proptest! {
    #[test]
    fn dividing_by_a_scale_keeps_the_ranking(
        logits in prop::collection::vec(-20.0f64..20.0, 2..12),
        s in 1e-3f64..50.0,
    ) {
        let p = calibrate_logits(&logits, s).unwrap();
        prop_assert_eq!(argmax(&p), argmax(&logits));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let q = apply_temperature(&logits, s).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cooling_lowers_top_confidence(logits in prop::collection::vec(-5.0f64..5.0, 2..8), t in 1.0f64..10.0) {
        let hot = apply_temperature(&logits, 1.0).unwrap();
        let cool = apply_temperature(&logits, t).unwrap();
        let k = argmax(&logits);
        prop_assert!(cool[k] <= hot[k] + 1e-12);
    }
}

/// Labels drawn from softmax(z); the logits handed to the fit are z * t0.
fn planted(t0: f64, n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 5;
    let mut data = Vec::with_capacity(n * c);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y = WeightedIndex::new(common::softmax(&z)).unwrap().sample(&mut rng);
        labels.push(y);
        data.extend(z.iter().map(|v| v * t0));
    }
    (Tensor::matrix(n, c, data).unwrap(), labels)
}

#[test]
fn planted_temperature_is_recovered_by_nll() {
    for t0 in [0.5, 2.0, 3.0] {
        let (logits, labels) = planted(t0, 5000, 11);
        let fit = fit_temperature(&logits, &labels, &TemperatureGrid::default(), 15, FitCriterion::Nll).unwrap();
        assert!((fit.temperature - t0).abs() < 0.15, "t0 {t0}: {}", fit.temperature);
    }
}

#[test]
fn fitted_temperature_never_worsens_ece() {
    for t0 in [0.5, 2.0, 3.0] {
        let (logits, labels) = planted(t0, 2000, 12);
        let fit = fit_temperature(&logits, &labels, &TemperatureGrid::default(), 15, FitCriterion::Ece).unwrap();
        let before = ece(&batch_at_temperature(&logits, &labels, 1.0).unwrap(), 15).unwrap();
        assert!(fit.ece <= before, "t0 {t0}");
    }
}
