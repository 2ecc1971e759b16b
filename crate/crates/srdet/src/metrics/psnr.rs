//! Peak signal-to-noise ratio between image tensors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR is unbounded for identical inputs, so the lossless case gets its
/// own variant instead of an arbitrary large number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    /// The value in decibels, or `None` for the lossless case.
    pub fn db(&self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(*v),
            Psnr::Infinite => None,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.2}"),
            Psnr::Infinite => write!(f, "inf"),
        }
    }
}

/// `10 * log10(peak^2 / MSE)` over all elements.
pub fn psnr(reference: &Tensor, test: &Tensor, peak: f64) -> Result<Psnr> {
    if reference.shape != test.shape {
        return Err(Error::Shape(format!(
            "psnr shapes differ: {:?} vs {:?}",
            reference.shape, test.shape
        )));
    }
    if !peak.is_finite() || peak <= 0.0 {
        return Err(Error::Domain(format!("psnr peak must be positive, got {peak}")));
    }
    let mse = reference
        .data
        .iter()
        .zip(&test.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Finite(10.0 * (peak * peak / mse).log10()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(f: impl Fn(usize) -> f64) -> Tensor {
        Tensor::new(vec![1, 4, 4], (0..16).map(f).collect()).unwrap()
    }

    #[test]
    fn identical_images_are_lossless() {
        let a = image(|v| v as f64 / 16.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), Psnr::Infinite);
        assert_eq!(psnr(&a, &a, 1.0).unwrap().db(), None);
    }

    #[test]
    fn uniform_tenth_error_is_twenty_db() {
        let a = image(|_| 0.3);
        let b = image(|_| 0.4);
        let p = psnr(&a, &b, 1.0).unwrap().db().unwrap();
        assert!((p - 20.0).abs() < 1e-9);
    }

    #[test]
    fn doubling_the_error_costs_about_six_db() {
        let a = image(|_| 0.0);
        let b = image(|_| 0.1);
        let c = image(|_| 0.2);
        let p1 = psnr(&a, &b, 1.0).unwrap().db().unwrap();
        let p2 = psnr(&a, &c, 1.0).unwrap().db().unwrap();
        assert!((p1 - p2 - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let a = image(|_| 0.0);
        let wrong = Tensor::zeros(&[1, 2, 2]);
        assert!(psnr(&a, &wrong, 1.0).is_err());
        assert!(psnr(&a, &a, 0.0).is_err());
        assert!(psnr(&a, &a, -1.0).is_err());
    }
}
