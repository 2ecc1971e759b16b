//! Adversarial, perceptual, and total loss evaluators.
//!
//! These are the plain-number forms used for reporting and testing; the
//! training step builds the same expressions on the tape so gradients flow.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::FeatureExtractor;

/// Scores are clamped into [SCORE_EPS, 1 - SCORE_EPS] inside loss code
/// paths only; the raw sigmoid/log primitives are left untouched.
pub const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_gan: f64,
    pub lambda_perceptual: f64,
    /// Optional pixel-L1 content term; 0 disables it.
    pub lambda_content: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_gan: 0.005,
            lambda_perceptual: 1.0,
            lambda_content: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_gan", self.lambda_gan),
            ("lambda_perceptual", self.lambda_perceptual),
            ("lambda_content", self.lambda_content),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Domain("empty score batch".into()));
    }
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("score {s} outside [0,1]")));
        }
    }
    Ok(())
}

fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

/// Mean over the batch of `log d_real + log(1 - d_fake)`: the value the
/// discriminator maximizes.
pub fn adversarial_value(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    check_scores(d_real)?;
    check_scores(d_fake)?;
    if d_real.len() != d_fake.len() {
        return Err(Error::Shape(format!(
            "batch sizes differ: {} real vs {} fake",
            d_real.len(),
            d_fake.len()
        )));
    }
    let n = d_real.len() as f64;
    let sum: f64 = d_real
        .iter()
        .zip(d_fake)
        .map(|(&r, &f)| clamp_score(r).ln() + (1.0 - clamp_score(f)).ln())
        .sum();
    Ok(sum / n)
}

/// Non-saturating generator objective: mean of `-log d_fake`.
pub fn generator_adversarial_loss(d_fake: &[f64]) -> Result<f64> {
    check_scores(d_fake)?;
    let n = d_fake.len() as f64;
    Ok(d_fake.iter().map(|&f| -clamp_score(f).ln()).sum::<f64>() / n)
}

/// The discriminator descends the negation of the adversarial value.
pub fn discriminator_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    Ok(-adversarial_value(d_real, d_fake)?)
}

/// Mean-L1 distance between feature activations; normalized by element
/// count so weights are resolution-independent.
pub fn perceptual_loss(phi: &FeatureExtractor, real: &Tensor, generated: &Tensor) -> Result<f64> {
    if real.shape != generated.shape {
        return Err(Error::Shape(format!(
            "perceptual_loss shapes differ: {:?} vs {:?}",
            real.shape, generated.shape
        )));
    }
    let fa = phi.features(real)?;
    let fb = phi.features(generated)?;
    let n = fa.len() as f64;
    Ok(fa
        .data
        .iter()
        .zip(&fb.data)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// Weighted combination of the loss terms, exactly linear.
pub fn total_loss(w: &LossWeights, l_gan: f64, l_perceptual: f64) -> f64 {
    w.lambda_gan * l_gan + w.lambda_perceptual * l_perceptual
}
