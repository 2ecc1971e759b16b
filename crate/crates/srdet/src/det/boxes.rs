//! Axis-aligned boxes in pixel coordinates, IoU, and delta encoding.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn is_valid(&self) -> bool {
        self.x_min <= self.x_max && self.y_min <= self.y_max
    }

    pub fn clip(&self, img_w: f64, img_h: f64) -> Self {
        Self {
            x_min: self.x_min.clamp(0.0, img_w),
            y_min: self.y_min.clamp(0.0, img_h),
            x_max: self.x_max.clamp(0.0, img_w),
            y_max: self.y_max.clamp(0.0, img_h),
        }
    }
}

/// Detected object: box, foreground class (0 is reserved for background),
/// and confidence score in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub class_id: usize,
    pub score: f64,
}

/// Ground-truth object: class id (1-based, 0 means background) and box.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub class_id: usize,
    pub bbox: BoundingBox,
}

/// Intersection over union. Degenerate zero-area boxes yield 0 against
/// anything, including themselves.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Standard box parameterization: center offsets normalized by anchor size,
/// log size ratios.
pub fn encode_box(anchor: &BoundingBox, target: &BoundingBox) -> Result<[f64; 4]> {
    if anchor.width() <= 0.0 || anchor.height() <= 0.0 {
        return Err(Error::Domain(format!(
            "encode_box anchor has non-positive size: {anchor:?}"
        )));
    }
    if target.width() <= 0.0 || target.height() <= 0.0 {
        return Err(Error::Domain(format!(
            "encode_box target has non-positive size: {target:?}"
        )));
    }
    let (cxa, cya) = anchor.center();
    let (cxt, cyt) = target.center();
    Ok([
        (cxt - cxa) / anchor.width(),
        (cyt - cya) / anchor.height(),
        (target.width() / anchor.width()).ln(),
        (target.height() / anchor.height()).ln(),
    ])
}

/// Exact inverse of [`encode_box`], before clipping.
pub fn decode_box_raw(anchor: &BoundingBox, deltas: &[f64; 4]) -> BoundingBox {
    let (cxa, cya) = anchor.center();
    let cx = cxa + deltas[0] * anchor.width();
    let cy = cya + deltas[1] * anchor.height();
    let w = anchor.width() * deltas[2].exp();
    let h = anchor.height() * deltas[3].exp();
    BoundingBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
}

/// Decode and clip to image bounds.
pub fn decode_box(anchor: &BoundingBox, deltas: &[f64; 4], img_w: f64, img_h: f64) -> BoundingBox {
    decode_box_raw(anchor, deltas).clip(img_w, img_h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Counting oracle: for integer-coordinate boxes, IoU equals the ratio
    /// of unit pixel cells covered by both to cells covered by either.
    fn iou_pixel_oracle(a: &BoundingBox, b: &BoundingBox) -> f64 {
        let mut inter = 0u64;
        let mut union = 0u64;
        for y in 0..64 {
            for x in 0..64 {
                let (cx, cy) = (x as f64, y as f64);
                let in_a =
                    cx >= a.x_min && cx + 1.0 <= a.x_max && cy >= a.y_min && cy + 1.0 <= a.y_max;
                let in_b =
                    cx >= b.x_min && cx + 1.0 <= b.x_max && cy >= b.y_min && cy + 1.0 <= b.y_max;
                if in_a && in_b {
                    inter += 1;
                }
                if in_a || in_b {
                    union += 1;
                }
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    #[test]
    fn iou_fixtures() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        let far = BoundingBox::new(20.0, 20.0, 30.0, 30.0);
        assert_eq!(iou(&a, &far), 0.0);
        let b = BoundingBox::new(5.0, 5.0, 15.0, 15.0);
        assert!((iou(&a, &b) - 25.0 / 175.0).abs() < 1e-12);
        let degenerate = BoundingBox::new(3.0, 3.0, 3.0, 3.0);
        assert_eq!(iou(&degenerate, &degenerate), 0.0);
        assert_eq!(iou(&degenerate, &a), 0.0);
    }

    #[test]
    fn iou_matches_pixel_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut coords = |max: i64| {
                let a = rng.gen_range(0..max);
                let b = rng.gen_range(0..max);
                (a.min(b) as f64, (a.max(b) + 1) as f64)
            };
            let (x0, x1) = coords(60);
            let (y0, y1) = coords(60);
            let (u0, u1) = coords(60);
            let (v0, v1) = coords(60);
            let a = BoundingBox::new(x0, y0, x1, y1);
            let b = BoundingBox::new(u0, v0, u1, v1);
            let got = iou(&a, &b);
            let expect = iou_pixel_oracle(&a, &b);
            assert!((got - expect).abs() <= 1e-6, "{a:?} {b:?}: {got} vs {expect}");
            assert!((iou(&b, &a) - got).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn encode_decode_fixture() {
        let anchor = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let target = BoundingBox::new(2.0, 2.0, 14.0, 14.0);
        let d = encode_box(&anchor, &target).unwrap();
        assert!((d[0] - 0.3).abs() < 1e-12);
        assert!((d[1] - 0.3).abs() < 1e-12);
        assert!((d[2] - 1.2f64.ln()).abs() < 1e-12);
        assert!((d[3] - 1.2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_deltas_reproduce_anchor() {
        let anchor = BoundingBox::new(3.0, 4.0, 9.0, 11.0);
        let d = decode_box_raw(&anchor, &[0.0; 4]);
        assert!((d.x_min - 3.0).abs() < 1e-12);
        assert!((d.y_max - 11.0).abs() < 1e-12);
    }

    #[test]
    fn decode_inverts_encode_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let mut boxgen = || {
                let x0 = rng.gen_range(0.0..40.0);
                let y0 = rng.gen_range(0.0..40.0);
                BoundingBox::new(
                    x0,
                    y0,
                    x0 + rng.gen_range(1.0..20.0),
                    y0 + rng.gen_range(1.0..20.0),
                )
            };
            let anchor = boxgen();
            let target = boxgen();
            let d = encode_box(&anchor, &target).unwrap();
            let back = decode_box(&anchor, &d, 64.0, 64.0);
            assert!((back.x_min - target.x_min).abs() < 1e-9);
            assert!((back.y_min - target.y_min).abs() < 1e-9);
            assert!((back.x_max - target.x_max).abs() < 1e-9);
            assert!((back.y_max - target.y_max).abs() < 1e-9);
        }
    }

    #[test]
    fn encode_rejects_degenerate_target() {
        let anchor = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let flat = BoundingBox::new(2.0, 2.0, 2.0, 6.0);
        assert!(encode_box(&anchor, &flat).is_err());
    }
}
