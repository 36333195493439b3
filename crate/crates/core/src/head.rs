//! Calibration head: a per-sample temperature predicted from the CLS
//! embedding, `s(z) = softplus(w2ᵀ GELU(W1 z + b1) + b2) + ε`, and the
//! calibrated distribution `softmax(ℓ / s)`.
//!
//! Besides the head itself this module carries the scalar calculus used to
//! reason about a single sample's temperature: the analytic derivative of
//! the `CE + λ·Brier` objective with respect to `s`, and a golden-section
//! oracle for the loss-minimising `s`.

use std::f64::consts::E;

use rand::Rng;

use crate::autodiff::{gelu, log_sum_exp, softmax_row, softplus, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor added after the softplus so that `s ≥ ε > 0`.
pub const SCALE_EPS: f64 = 1e-6;

pub const DEFAULT_HIDDEN: usize = 128;

/// Reserved checkpoint prefix for head tensors.
pub const PARAM_PREFIX: &str = "calattn.";

const INIT_STD: f64 = 0.02;

/// `ln(e − 1)`, the pre-activation for which `softplus` returns exactly 1.
pub fn neutral_bias() -> f64 {
    (E - 1.0).ln()
}

/// A strictly positive per-sample temperature.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Scale(f64);

impl Scale {
    pub fn new(s: f64) -> Result<Self> {
        if s > 0.0 && s.is_finite() {
            Ok(Self(s))
        } else {
            Err(Error::NonPositiveScale(s))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Head weights. `w2` is stored as a `[1, h]` matrix and `b2` as a
/// one-element vector so both feed [`Tape::linear`] directly.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibHeadParams<T = Tensor> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

impl<T> CalibHeadParams<T> {
    pub const NAMES: [&'static str; 4] = ["w1", "b1", "w2", "b2"];

    fn fields(&self) -> [&T; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn fields_mut(&mut self) -> [&mut T; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Visits every tensor with its checkpoint name, in a fixed order.
    pub fn visit(&self, mut f: impl FnMut(String, &T)) {
        for (name, t) in Self::NAMES.iter().zip(self.fields()) {
            f(format!("{PARAM_PREFIX}{name}"), t);
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(String, &mut T)) {
        for (name, t) in Self::NAMES.iter().zip(self.fields_mut()) {
            f(format!("{PARAM_PREFIX}{name}"), t);
        }
    }

    pub fn try_map<U, E>(
        &self,
        mut f: impl FnMut(String, &T) -> Result<U, E>,
    ) -> Result<CalibHeadParams<U>, E> {
        let n = |s: &str| format!("{PARAM_PREFIX}{s}");
        Ok(CalibHeadParams {
            w1: f(n("w1"), &self.w1)?,
            b1: f(n("b1"), &self.b1)?,
            w2: f(n("w2"), &self.w2)?,
            b2: f(n("b2"), &self.b2)?,
        })
    }
}

impl CalibHeadParams {
    /// `W1 ~ N(0, 0.02)`, `b1 = 0`, `w2 = 0`, `b2 = ln(e − 1)`: the head
    /// starts out predicting `s ≈ 1` for every input.
    pub fn init<R: Rng + ?Sized>(d_in: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w1: Tensor::randn(vec![hidden, d_in], INIT_STD, rng),
            b1: Tensor::zeros(vec![hidden]),
            w2: Tensor::zeros(vec![1, hidden]),
            b2: Tensor::scalar(neutral_bias()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.w1.shape()[0]
    }

    /// Expected shape of each named tensor for a head of this size.
    pub fn shapes(d_in: usize, hidden: usize) -> [(&'static str, Vec<usize>); 4] {
        [
            ("w1", vec![hidden, d_in]),
            ("b1", vec![hidden]),
            ("w2", vec![1, hidden]),
            ("b2", vec![1]),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.fields().iter().map(|t| t.len()).sum()
    }

    /// Temperature for one feature vector.
    pub fn predict_scale(&self, feature: &[f64]) -> Result<Scale> {
        let d = self.input_dim();
        if feature.len() != d {
            return Err(Error::shape(
                "predict_scale",
                format!("feature length {} vs head input {d}", feature.len()),
            ));
        }
        let w2 = self.w2.data();
        let pre = (0..self.hidden())
            .map(|j| {
                let row = self.w1.row(j);
                let a: f64 = row.iter().zip(feature).map(|(w, z)| w * z).sum::<f64>()
                    + self.b1.data()[j];
                w2[j] * gelu(a)
            })
            .sum::<f64>()
            + self.b2.item();
        Scale::new(softplus(pre) + SCALE_EPS)
    }
}

/// Trainable head bound to a tape.
pub type HeadVars = CalibHeadParams<Var>;

/// Records the head on `tape` for a batch of features `[n, d_in]`, returning
/// the scales as an `[n, 1]` node.
pub fn scale_on_tape(tape: &mut Tape, head: &HeadVars, features: Var) -> Result<Var> {
    let hidden = tape.linear(features, head.w1, Some(head.b1))?;
    let act = tape.gelu(hidden);
    let pre = tape.linear(act, head.w2, Some(head.b2))?;
    let sp = tape.softplus(pre);
    Ok(tape.add_scalar(sp, SCALE_EPS))
}

/// `h·d_in + h + h + 1`: first layer with bias, second layer with bias.
pub fn head_param_count(d_in: usize, hidden: usize) -> usize {
    hidden * d_in + hidden + hidden + 1
}

/// `softmax(ℓ / s)`.
pub fn calibrate_logits(logits: &[f64], s: f64) -> Result<Vec<f64>> {
    let s = Scale::new(s)?;
    let scaled: Vec<f64> = logits.iter().map(|l| l / s.get()).collect();
    Ok(softmax_row(&scaled))
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// `Σ_j ŷ_j ℓ_j`, the probability-weighted mean logit.
fn mean_logit(probs: &[f64], logits: &[f64]) -> f64 {
    probs.iter().zip(logits).map(|(p, l)| p * l).sum()
}

/// The scale-gradient expression
/// `(ŷ_ĉ − 1[y = ĉ]) (ℓ_ĉ − Σ_j ŷ_j ℓ_j) / s` with `ĉ = argmax ℓ`.
///
/// This is a diagnostic: it is positive for confident mistakes and negative
/// for correct predictions, but it is not the derivative of the training
/// loss. Use [`combined_scale_grad`] for that.
pub fn scale_grad_ce(logits: &[f64], s: f64, label: usize) -> f64 {
    let probs = softmax_row(&logits.iter().map(|l| l / s).collect::<Vec<_>>());
    let c = argmax(logits);
    let indicator = if label == c { 1.0 } else { 0.0 };
    (probs[c] - indicator) * (logits[c] - mean_logit(&probs, logits)) / s
}

/// Closed-form stationarity expression with a diagonal Brier term,
/// `(ŷ_y − 1)(ℓ_y − m)/s + 2λ Σ_c (ŷ_c − e_yc) ŷ_c (1 − ŷ_c)(ℓ_c − m)/s`.
///
/// Kept for comparison only; it disagrees with finite differences.
pub fn diagonal_brier_scale_grad(logits: &[f64], s: f64, label: usize, lambda: f64) -> f64 {
    let probs = softmax_row(&logits.iter().map(|l| l / s).collect::<Vec<_>>());
    let m = mean_logit(&probs, logits);
    let ce = (probs[label] - 1.0) * (logits[label] - m) / s;
    let brier: f64 = probs
        .iter()
        .zip(logits)
        .enumerate()
        .map(|(c, (&p, &l))| {
            let e = if c == label { 1.0 } else { 0.0 };
            (p - e) * p * (1.0 - p) * (l - m) / s
        })
        .sum();
    ce + 2.0 * lambda * brier
}

/// `−log ŷ_y + λ‖ŷ − e_y‖²` at temperature `s`.
pub fn combined_loss_at_scale(logits: &[f64], s: f64, label: usize, lambda: f64) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|l| l / s).collect();
    let ce = log_sum_exp(&scaled) - scaled[label];
    let probs = softmax_row(&scaled);
    let brier: f64 = probs
        .iter()
        .enumerate()
        .map(|(c, p)| {
            let e = if c == label { 1.0 } else { 0.0 };
            (p - e) * (p - e)
        })
        .sum();
    ce + lambda * brier
}

/// Exact `∂/∂s` of [`combined_loss_at_scale`]:
/// `[(ℓ_y − m) − 2λ Σ_c (ŷ_c − e_yc) ŷ_c (ℓ_c − m)] / s²` with
/// `m = Σ_j ŷ_j ℓ_j`.
pub fn combined_scale_grad(logits: &[f64], s: f64, label: usize, lambda: f64) -> f64 {
    let probs = softmax_row(&logits.iter().map(|l| l / s).collect::<Vec<_>>());
    let m = mean_logit(&probs, logits);
    let brier: f64 = probs
        .iter()
        .zip(logits)
        .enumerate()
        .map(|(c, (&p, &l))| {
            let e = if c == label { 1.0 } else { 0.0 };
            (p - e) * p * (l - m)
        })
        .sum();
    ((logits[label] - m) - 2.0 * lambda * brier) / (s * s)
}

pub const ORACLE_DOMAIN: (f64, f64) = (1e-3, 50.0);
const GOLDEN_ITERS: usize = 40;

/// Loss-minimising temperature for one sample, by golden-section search on
/// `domain`. Endpoints are compared against the interior optimum so a
/// monotone loss returns the clamp itself. Logits that are all equal make
/// the loss constant in `s`; the midpoint of the domain is returned then.
pub fn optimal_scale_oracle(
    logits: &[f64],
    label: usize,
    lambda: f64,
    domain: (f64, f64),
) -> f64 {
    let (lo, hi) = domain;
    let flat = logits.iter().all(|&l| l == logits[0]);
    if flat {
        return 0.5 * (lo + hi);
    }
    let f = |s: f64| combined_loss_at_scale(logits, s, label, lambda);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    [lo, hi]
        .into_iter()
        .fold((mid, f(mid)), |best, s| {
            let v = f(s);
            if v <= best.1 {
                (s, v)
            } else {
                best
            }
        })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::central_difference;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_scale_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = CalibHeadParams::init(16, 32, &mut rng);
        assert!((softplus(head.b2.item()) - 1.0).abs() < 1e-12);
        for _ in 0..50 {
            let z = Tensor::randn(vec![16], 5.0, &mut rng);
            let s = head.predict_scale(z.data()).unwrap().get();
            assert!((1.0..=1.000002).contains(&s), "s = {s}");
        }
    }

    #[test]
    fn init_probabilities_match_plain_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = CalibHeadParams::init(8, 8, &mut rng);
        let z = Tensor::randn(vec![8], 1.0, &mut rng);
        let logits = [2.0, -1.0, 0.5, 4.0];
        let s = head.predict_scale(z.data()).unwrap().get();
        let p = calibrate_logits(&logits, s).unwrap();
        let base = softmax_row(&logits);
        for (a, b) in p.iter().zip(&base) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn hand_evaluated_scale() {
        let head = CalibHeadParams {
            w1: Tensor::full(vec![2, 2], 0.5),
            b1: Tensor::zeros(vec![2]),
            w2: Tensor::full(vec![1, 2], 0.5),
            b2: Tensor::scalar(0.5),
        };
        // W1 z = [1, 1]; GELU(1) = Φ(1) = 0.8413447460685429;
        // w2ᵀh + b2 = 0.8413447460685429 + 0.5; softplus by hand.
        let pre: f64 = 0.841_344_746_068_542_9 + 0.5;
        let expected = (1.0 + pre.exp()).ln() + 1e-6;
        let s = head.predict_scale(&[1.0, 1.0]).unwrap().get();
        assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
        assert!((s - 1.573_642_311_884_774).abs() < 1e-12);
    }

    #[test]
    fn scale_never_below_eps() {
        let head = CalibHeadParams {
            w1: Tensor::full(vec![1, 1], 1.0),
            b1: Tensor::zeros(vec![1]),
            w2: Tensor::full(vec![1, 1], -1e6),
            b2: Tensor::scalar(0.0),
        };
        let s = head.predict_scale(&[1e3]).unwrap().get();
        assert!(s >= SCALE_EPS);
        assert!(s < 2.0 * SCALE_EPS);
    }

    #[test]
    fn predict_scale_checks_width() {
        let head = CalibHeadParams::init(4, 3, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(
            head.predict_scale(&[1.0, 2.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn tape_and_eager_scales_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut head = CalibHeadParams::init(6, 5, &mut rng);
        head.w2 = Tensor::randn(vec![1, 5], 0.5, &mut rng);
        head.b1 = Tensor::randn(vec![5], 0.5, &mut rng);
        let feats = Tensor::randn(vec![3, 6], 1.0, &mut rng);
        let mut tape = Tape::new();
        let hv = head.try_map(|_, t| Ok::<_, Error>(tape.constant(t.clone()))).unwrap();
        let f = tape.constant(feats.clone());
        let s = scale_on_tape(&mut tape, &hv, f).unwrap();
        for i in 0..3 {
            let eager = head.predict_scale(feats.row(i)).unwrap().get();
            assert!((tape.value(s).data()[i] - eager).abs() < 1e-14);
        }
    }

    #[test]
    fn calibrate_examples() {
        let p = calibrate_logits(&[2.0, 0.0], 2.0).unwrap();
        let e = 1f64.exp();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.731059).abs() < 1e-6 && (p[1] - 0.268941).abs() < 1e-6);
        for s in [0.1, 1.0, 7.0] {
            let p = calibrate_logits(&[3.0, 1.0, 0.0], s).unwrap();
            assert_eq!(argmax(&p), 0);
            let u = calibrate_logits(&[0.4, 0.4, 0.4], s).unwrap();
            assert!(u.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
        assert!(matches!(
            calibrate_logits(&[1.0], 0.0),
            Err(Error::NonPositiveScale(_))
        ));
        assert!(calibrate_logits(&[1.0], -2.0).is_err());
    }

    #[test]
    fn cooling_and_sharpening() {
        let l = [1.0, 0.2, -0.5];
        let base = softmax_row(&l)[0];
        assert!(calibrate_logits(&l, 2.0).unwrap()[0] < base);
        assert!(calibrate_logits(&l, 0.5).unwrap()[0] > base);
    }

    #[test]
    fn scale_grad_expression_examples() {
        let g0 = scale_grad_ce(&[2.0, 0.0], 1.0, 0);
        let g1 = scale_grad_ce(&[2.0, 0.0], 1.0, 1);
        // ŷ₀ = 0.880797, Σŷℓ = 1.761594
        assert!((g0 + 0.028418).abs() < 1e-6, "{g0}");
        assert!((g1 - 0.209987).abs() < 1e-6, "{g1}");
        assert_eq!(scale_grad_ce(&[0.3, 0.3, 0.3], 1.7, 2), 0.0);
    }

    #[test]
    fn true_ce_derivative_differs_from_expression() {
        // Finite differences of −log ŷ_y: +0.238406 (label 0), −1.761594 (label 1).
        for (label, want) in [(0, 0.238406), (1, -1.761594)] {
            let fd = central_difference(
                |s| combined_loss_at_scale(&[2.0, 0.0], s, label, 0.0),
                1.0,
                1e-6,
            );
            assert!((fd - want).abs() < 1e-6, "{fd}");
            assert!((combined_scale_grad(&[2.0, 0.0], 1.0, label, 0.0) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn combined_grad_lambda_zero_is_ce_term() {
        let l = [1.5, -0.3, 0.8];
        let s = 1.3;
        let p = softmax_row(&l.iter().map(|v| v / s).collect::<Vec<_>>());
        let m: f64 = p.iter().zip(&l).map(|(a, b)| a * b).sum();
        let g = combined_scale_grad(&l, s, 2, 0.0);
        assert!((g - (l[2] - m) / (s * s)).abs() < 1e-15);
        assert_eq!(combined_scale_grad(&[0.7; 4], 2.0, 1, 0.1), 0.0);
    }

    #[test]
    fn diagonal_brier_expression_is_not_the_derivative() {
        let l = [2.0, -1.0, 0.5];
        let fd = central_difference(|s| combined_loss_at_scale(&l, s, 1, 0.1), 1.5, 1e-6);
        assert!((diagonal_brier_scale_grad(&l, 1.5, 1, 0.1) - fd).abs() > 1e-3);
    }

    #[test]
    fn oracle_correct_confident_hits_lower_clamp() {
        let s = optimal_scale_oracle(&[5.0, 0.0], 0, 0.1, ORACLE_DOMAIN);
        assert_eq!(s, ORACLE_DOMAIN.0);
        // dense scan: loss is increasing in s
        let scan: Vec<f64> = (1..=500)
            .map(|i| combined_loss_at_scale(&[5.0, 0.0], i as f64 * 0.1, 0, 0.1))
            .collect();
        assert!(scan.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn oracle_wrong_confident_hits_upper_clamp() {
        let s = optimal_scale_oracle(&[5.0, 0.0], 1, 0.1, ORACLE_DOMAIN);
        assert_eq!(s, ORACLE_DOMAIN.1);
        let scan: Vec<f64> = (1..=500)
            .map(|i| combined_loss_at_scale(&[5.0, 0.0], i as f64 * 0.1, 1, 0.1))
            .collect();
        assert!(scan.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn oracle_flat_logits_returns_midpoint() {
        let s = optimal_scale_oracle(&[1.0, 1.0, 1.0], 0, 0.1, ORACLE_DOMAIN);
        assert_eq!(s, 0.5 * (ORACLE_DOMAIN.0 + ORACLE_DOMAIN.1));
    }

    #[test]
    fn oracle_interior_minimum_is_stationary() {
        let l = [3.0, 2.5, -5.0];
        let s = optimal_scale_oracle(&l, 1, 0.1, ORACLE_DOMAIN);
        assert!(s > ORACLE_DOMAIN.0 && s < ORACLE_DOMAIN.1);
        assert!(combined_scale_grad(&l, s, 1, 0.1).abs() < 1e-4);
        // brute-force scan agrees on the location
        let (best, _) = (1..=50_000)
            .map(|i| i as f64 * 1e-3)
            .map(|s| (s, combined_loss_at_scale(&l, s, 1, 0.1)))
            .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        assert!((best - s).abs() < 2e-3);
    }

    #[test]
    fn param_counts() {
        assert_eq!(head_param_count(64, 128), 8449);
        assert_eq!(head_param_count(1, 1), 4);
        let head = CalibHeadParams::init(64, 128, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(head.param_count(), 8449);
    }

    proptest! {
        #[test]
        fn rank_preserved(
            logits in prop::collection::vec(-20.0f64..20.0, 2..10),
            s in 1e-3f64..100.0,
        ) {
            let p = calibrate_logits(&logits, s).unwrap();
            prop_assert_eq!(argmax(&p), argmax(&logits));
        }

        #[test]
        fn sign_law(
            logits in prop::collection::vec(-5.0f64..5.0, 2..8),
            s in 0.2f64..5.0,
            label_seed in 0usize..100,
        ) {
            let c = argmax(&logits);
            let label = label_seed % logits.len();
            let p = calibrate_logits(&logits, s).unwrap();
            let g = scale_grad_ce(&logits, s, label);
            let spread = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - logits.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-6);
            if label != c && p[c] > 1.0 / logits.len() as f64 {
                prop_assert!(g > 0.0);
            }
            if label == c && p[c] < 1.0 {
                prop_assert!(g < 0.0);
            }
        }
    }
}
