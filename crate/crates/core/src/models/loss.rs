//! Multi-label loss and thresholding.

use crate::error::{Error, Result};
use crate::nn::scalar::Scalar;
use crate::nn::tensor::Tensor;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean sigmoid cross-entropy over a [B, C] logit block with 0/1 labels.
///
/// Computed from logits as max(z,0) - z*y + ln(1 + exp(-|z|)), never from
/// saturated probabilities.
pub fn bce_loss<E: Scalar>(logits: &Tensor<E>, labels: &Tensor<E>) -> Result<f64> {
    if logits.shape() != labels.shape() {
        return Err(Error::shape("bce_loss", logits.shape(), labels.shape()));
    }
    if labels
        .data()
        .iter()
        .any(|&y| y != E::zero() && y != E::one())
    {
        return Err(Error::InvalidInput("bce labels must be 0 or 1".into()));
    }
    let mut acc = 0.0f64;
    for (&z, &y) in logits.data().iter().zip(labels.data()) {
        let z = z.as_f64();
        let y = y.as_f64();
        acc += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    }
    Ok(acc / logits.numel() as f64)
}

/// Threshold logits at zero; ties (logit exactly 0) predict positive.
pub fn predict(logits: &[f64]) -> Vec<bool> {
    logits.iter().map(|&z| z >= 0.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_zero_costs_ln2() {
        let z = Tensor::new(vec![1, 1], vec![0.0f64]).unwrap();
        for y in [0.0, 1.0] {
            let labels = Tensor::new(vec![1, 1], vec![y]).unwrap();
            let loss = bce_loss(&z, &labels).unwrap();
            assert!((loss - (2.0f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_logit_neither_overflows_nor_explodes() {
        let z = Tensor::new(vec![1, 1], vec![1000.0f64]).unwrap();
        let y = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let loss = bce_loss(&z, &y).unwrap();
        assert!(loss.is_finite());
        assert!(loss < 1e-9);
    }

    #[test]
    fn matches_direct_formula_on_random_batch() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let logits = Tensor::from_fn(vec![2, 3], |_| rng.gen_range(-3.0..3.0));
        let labels = Tensor::from_fn(vec![2, 3], |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
        let got = bce_loss(&logits, &labels).unwrap();
        let mut want = 0.0;
        for (&z, &y) in logits.data().iter().zip(labels.data()) {
            let s = sigmoid(z);
            want += -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
        }
        want /= 6.0;
        assert!((got - want).abs() < 1e-6);
    }

    #[test]
    fn non_binary_labels_rejected() {
        let z = Tensor::new(vec![1, 2], vec![0.0f64, 0.0]).unwrap();
        let y = Tensor::new(vec![1, 2], vec![0.3, 1.0]).unwrap();
        assert!(bce_loss(&z, &y).is_err());
    }

    #[test]
    fn predict_thresholds_at_zero_inclusive() {
        assert_eq!(predict(&[0.1, -0.1]), vec![true, false]);
        assert_eq!(predict(&[0.0]), vec![true]);
    }

    #[test]
    fn predict_agrees_with_probability_threshold() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let z: f64 = rng.gen_range(-5.0..5.0);
            assert_eq!(predict(&[z])[0], sigmoid(z) >= 0.5);
        }
    }
}
