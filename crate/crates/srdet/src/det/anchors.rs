//! Anchor grid generation over a strided feature map.

use crate::det::boxes::BoundingBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub scales: Vec<f64>,
    pub aspect_ratios: Vec<f64>,
    /// Input pixels per feature-map cell.
    pub feature_stride: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            scales: vec![1.0, 2.0, 4.0],
            aspect_ratios: vec![0.5, 1.0, 2.0],
            feature_stride: 8,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.aspect_ratios.is_empty() {
            return Err(Error::Config("anchor scales and ratios must be non-empty".into()));
        }
        if self.feature_stride == 0 {
            return Err(Error::Config("feature_stride must be positive".into()));
        }
        for &s in &self.scales {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::Config(format!("anchor scale {s} must be positive")));
            }
        }
        for &r in &self.aspect_ratios {
            if !r.is_finite() || r <= 0.0 {
                return Err(Error::Config(format!("aspect ratio {r} must be positive")));
            }
        }
        Ok(())
    }

    pub fn anchors_per_location(&self) -> usize {
        self.scales.len() * self.aspect_ratios.len()
    }
}

/// One anchor per (location, scale, ratio), location row-major over the
/// feature grid, scales outer and ratios inner within a location. Centers sit
/// at cell midpoints `((j + 0.5) * stride, (i + 0.5) * stride)`; an anchor of
/// scale s and ratio r spans `s * stride * sqrt(r)` by `s * stride / sqrt(r)`.
pub fn generate_anchors(cfg: &AnchorConfig, feat_h: usize, feat_w: usize) -> Vec<BoundingBox> {
    let stride = cfg.feature_stride as f64;
    let mut out = Vec::with_capacity(feat_h * feat_w * cfg.anchors_per_location());
    for i in 0..feat_h {
        for j in 0..feat_w {
            let cx = (j as f64 + 0.5) * stride;
            let cy = (i as f64 + 0.5) * stride;
            for &s in &cfg.scales {
                for &r in &cfg.aspect_ratios {
                    let w = s * stride * r.sqrt();
                    let h = s * stride / r.sqrt();
                    out.push(BoundingBox::new(
                        cx - 0.5 * w,
                        cy - 0.5 * h,
                        cx + 0.5 * w,
                        cy + 0.5 * h,
                    ));
                }
            }
        }
    }
    out
}
