//! Seeded synthetic shapes dataset: HR images with exact annotations and
//! box-filtered LR counterparts.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::det::boxes::{iou, Annotation, BoundingBox};
use crate::error::{Error, Result};
use crate::io::ppm;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 3;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["rect", "disk", "tri"];

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    pub hr_size: usize,
    pub scale_factor: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 16,
            hr_size: 48,
            scale_factor: 4,
            min_shapes: 1,
            max_shapes: 3,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("dataset count must be positive".into()));
        }
        if self.scale_factor == 0 || self.hr_size % self.scale_factor != 0 {
            return Err(Error::Config(format!(
                "hr_size {} must be divisible by scale_factor {}",
                self.hr_size, self.scale_factor
            )));
        }
        if self.hr_size < 16 {
            return Err(Error::Config("hr_size must be at least 16".into()));
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return Err(Error::Config(format!(
                "need 1 <= min_shapes <= max_shapes, got {}..{}",
                self.min_shapes, self.max_shapes
            )));
        }
        Ok(())
    }
}

/// One dataset element; annotations are in HR pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub hr: Tensor,
    pub lr: Tensor,
    pub annotations: Vec<Annotation>,
}

/// Average every `scale` x `scale` block per channel.
pub fn box_downsample(hr: &Tensor, scale: usize) -> Result<Tensor> {
    if hr.rank() != 3 || hr.shape[1] % scale != 0 || hr.shape[2] % scale != 0 {
        return Err(Error::Shape(format!(
            "cannot downsample {:?} by {scale}",
            hr.shape
        )));
    }
    let (c, h, w) = (hr.shape[0], hr.shape[1] / scale, hr.shape[2] / scale);
    let mut lr = Tensor::zeros(&[c, h, w]);
    let norm = (scale * scale) as f64;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in 0..scale {
                    for dx in 0..scale {
                        acc += hr.at3(ch, y * scale + dy, x * scale + dx);
                    }
                }
                lr.set3(ch, y, x, acc / norm);
            }
        }
    }
    Ok(lr)
}

/// Class-correlated color: the class's own channel is bright, the rest dim.
fn shape_color(rng: &mut ChaCha8Rng, class_id: usize) -> [f64; 3] {
    let hi = rng.gen_range(0.7..0.95);
    let lo1 = rng.gen_range(0.05..0.3);
    let lo2 = rng.gen_range(0.05..0.3);
    match class_id {
        1 => [hi, lo1, lo2],
        2 => [lo1, hi, lo2],
        _ => [lo1, lo2, hi],
    }
}

/// Filled-pixel mask for one shape inside its placement box.
fn rasterize(rng: &mut ChaCha8Rng, class_id: usize, w: usize, h: usize) -> Vec<bool> {
    let mut mask = vec![false; w * h];
    match class_id {
        1 => mask.fill(true),
        2 => {
            let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
            let r = cx.min(cy);
            for y in 0..h {
                for x in 0..w {
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cy;
                    mask[y * w + x] = dx * dx + dy * dy <= r * r;
                }
            }
        }
        _ => {
            // isoceles triangle, apex on a random side
            let flip = rng.gen_bool(0.5);
            let cx = w as f64 / 2.0;
            for y in 0..h {
                let ty = if flip { h - 1 - y } else { y };
                let half = (ty as f64 + 1.0) / h as f64 * cx;
                for x in 0..w {
                    mask[y * w + x] = (x as f64 + 0.5 - cx).abs() <= half;
                }
            }
        }
    }
    mask
}

fn textured_background(rng: &mut ChaCha8Rng, size: usize) -> Tensor {
    let mut img = Tensor::zeros(&[3, size, size]);
    let base: Vec<f64> = (0..3).map(|_| rng.gen_range(0.08..0.30)).collect();
    let fx = rng.gen_range(0.02..0.12);
    let fy = rng.gen_range(0.02..0.12);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let wave =
                    0.04 * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + phase).sin();
                let noise = rng.gen_range(-0.03..0.03);
                img.set3(c, y, x, (base[c] + wave + noise).clamp(0.0, 1.0));
            }
        }
    }
    img
}

fn generate_sample(rng: &mut ChaCha8Rng, cfg: &DatasetConfig) -> Result<Sample> {
    let size = cfg.hr_size;
    let mut hr = textured_background(rng, size);
    let n_shapes = rng.gen_range(cfg.min_shapes..=cfg.max_shapes);
    let mut annotations: Vec<Annotation> = Vec::new();
    for _ in 0..n_shapes {
        let mut placed = false;
        for _attempt in 0..1000 {
            let class_id = rng.gen_range(1..=NUM_CLASSES);
            let w = rng.gen_range(size / 6..=size / 3);
            let h = rng.gen_range(size / 6..=size / 3);
            let x0 = rng.gen_range(1..size - w - 1);
            let y0 = rng.gen_range(1..size - h - 1);
            // keep a 2px moat so boxes never touch
            let moat = BoundingBox::new(
                x0 as f64 - 2.0,
                y0 as f64 - 2.0,
                (x0 + w) as f64 + 2.0,
                (y0 + h) as f64 + 2.0,
            );
            if annotations.iter().any(|a| iou(&moat, &a.bbox) > 0.0) {
                continue;
            }
            let color = shape_color(rng, class_id);
            let mask = rasterize(rng, class_id, w, h);
            let (mut min_x, mut min_y, mut max_x, mut max_y) = (usize::MAX, usize::MAX, 0, 0);
            for my in 0..h {
                for mx in 0..w {
                    if !mask[my * w + mx] {
                        continue;
                    }
                    let (px, py) = (x0 + mx, y0 + my);
                    for c in 0..3 {
                        let v = color[c] + rng.gen_range(-0.02..0.02);
                        hr.set3(c, py, px, v.clamp(0.0, 1.0));
                    }
                    min_x = min_x.min(px);
                    min_y = min_y.min(py);
                    max_x = max_x.max(px);
                    max_y = max_y.max(py);
                }
            }
            annotations.push(Annotation {
                class_id,
                // tight box around the pixels actually painted
                bbox: BoundingBox::new(
                    min_x as f64,
                    min_y as f64,
                    (max_x + 1) as f64,
                    (max_y + 1) as f64,
                ),
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place {n_shapes} non-overlapping shapes in a {size}x{size} image"
            )));
        }
    }
    let lr = box_downsample(&hr, cfg.scale_factor)?;
    Ok(Sample {
        hr,
        lr,
        annotations,
    })
}

pub fn make_synthetic_dataset(cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.count).map(|_| generate_sample(&mut rng, cfg)).collect()
}

/// Write one PPM pair plus a text annotation file per sample and a
/// tab-separated manifest (`hr<TAB>lr<TAB>ann` per line) naming them.
/// Returns the manifest path.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let hr_name = format!("{i:04}_hr.ppm");
        let lr_name = format!("{i:04}_lr.ppm");
        let ann_name = format!("{i:04}_ann.txt");
        ppm::write_image(&dir.join(&hr_name), &s.hr)?;
        ppm::write_image(&dir.join(&lr_name), &s.lr)?;
        let mut ann = String::new();
        for a in &s.annotations {
            ann.push_str(&format!(
                "{} {} {} {} {}\n",
                a.class_id, a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max
            ));
        }
        std::fs::write(dir.join(&ann_name), ann)?;
        manifest.push_str(&format!("{hr_name}\t{lr_name}\t{ann_name}\n"));
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest)?;
    Ok(path)
}

fn parse_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || {
            Error::Config(format!(
                "{}:{}: expected `class x_min y_min x_max y_max`",
                path.display(),
                ln + 1
            ))
        };
        if fields.len() != 5 {
            return Err(bad());
        }
        let class_id: usize = fields[0].parse().map_err(|_| bad())?;
        let nums: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        out.push(Annotation {
            class_id,
            bbox: BoundingBox::new(nums[0], nums[1], nums[2], nums[3]),
        });
    }
    Ok(out)
}

/// Load a dataset back from its manifest; paths are manifest-relative.
pub fn load_dataset(manifest: &Path) -> Result<Vec<Sample>> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let text = std::fs::read_to_string(manifest)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Config(format!(
                "{}:{}: expected `hr<TAB>lr<TAB>ann`",
                manifest.display(),
                ln + 1
            )));
        }
        out.push(Sample {
            hr: ppm::read_image(&base.join(fields[0]))?,
            lr: ppm::read_image(&base.join(fields[1]))?,
            annotations: parse_annotations(&base.join(fields[2]))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DatasetConfig {
        DatasetConfig {
            count: 6,
            hr_size: 48,
            scale_factor: 4,
            min_shapes: 1,
            max_shapes: 3,
            seed: 11,
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = make_synthetic_dataset(&small_cfg()).unwrap();
        let b = make_synthetic_dataset(&small_cfg()).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_dataset(&DatasetConfig {
            seed: 12,
            ..small_cfg()
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_shapes_and_annotation_counts() {
        let cfg = small_cfg();
        let data = make_synthetic_dataset(&cfg).unwrap();
        assert_eq!(data.len(), cfg.count);
        for s in &data {
            assert_eq!(s.hr.shape, vec![3, 48, 48]);
            assert_eq!(s.lr.shape, vec![3, 12, 12]);
            assert!((1..=3).contains(&s.annotations.len()));
            for a in &s.annotations {
                assert!((1..=NUM_CLASSES).contains(&a.class_id));
                assert!(a.bbox.x_min >= 0.0 && a.bbox.x_max <= 48.0);
                assert!(a.bbox.area() > 0.0);
            }
        }
    }

    #[test]
    fn shapes_never_overlap() {
        let data = make_synthetic_dataset(&DatasetConfig {
            count: 20,
            ..small_cfg()
        })
        .unwrap();
        for s in &data {
            for i in 0..s.annotations.len() {
                for j in i + 1..s.annotations.len() {
                    assert_eq!(iou(&s.annotations[i].bbox, &s.annotations[j].bbox), 0.0);
                }
            }
        }
    }

    #[test]
    fn boxes_are_pixel_tight_around_class_colored_pixels() {
        let data = make_synthetic_dataset(&small_cfg()).unwrap();
        for s in &data {
            for a in &s.annotations {
                let own = a.class_id - 1;
                let (x0, y0) = (a.bbox.x_min as usize, a.bbox.y_min as usize);
                let (x1, y1) = (a.bbox.x_max as usize, a.bbox.y_max as usize);
                // the shape's bright channel must touch all four box edges
                let filled = |x: usize, y: usize| s.hr.at3(own, y, x) > 0.55;
                assert!((x0..x1).any(|x| filled(x, y0)));
                assert!((x0..x1).any(|x| filled(x, y1 - 1)));
                assert!((y0..y1).any(|y| filled(x0, y)));
                assert!((y0..y1).any(|y| filled(x1 - 1, y)));
                // and nothing bright sits just outside the box
                if x0 > 0 {
                    assert!(!(y0..y1).any(|y| filled(x0 - 1, y)));
                }
                if x1 < 48 {
                    assert!(!(y0..y1).any(|y| filled(x1, y)));
                }
            }
        }
    }

    #[test]
    fn downsample_matches_block_mean_oracle() {
        let data = make_synthetic_dataset(&small_cfg()).unwrap();
        let s = &data[0];
        for c in 0..3 {
            for y in 0..12 {
                for x in 0..12 {
                    let mut acc = 0.0;
                    for dy in 0..4 {
                        for dx in 0..4 {
                            acc += s.hr.at3(c, 4 * y + dy, 4 * x + dx);
                        }
                    }
                    assert!((s.lr.at3(c, y, x) - acc / 16.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad_div = DatasetConfig {
            hr_size: 50,
            scale_factor: 4,
            ..small_cfg()
        };
        assert!(make_synthetic_dataset(&bad_div).is_err());
        let bad_shapes = DatasetConfig {
            min_shapes: 3,
            max_shapes: 2,
            ..small_cfg()
        };
        assert!(make_synthetic_dataset(&bad_shapes).is_err());
    }

    #[test]
    fn impossible_placement_is_a_generation_error() {
        let crowded = DatasetConfig {
            count: 1,
            hr_size: 24,
            scale_factor: 4,
            min_shapes: 30,
            max_shapes: 30,
            seed: 1,
        };
        match make_synthetic_dataset(&crowded) {
            Err(Error::Generation(_)) => {}
            other => panic!("expected generation error, got {other:?}"),
        }
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let samples = make_synthetic_dataset(&small_cfg()).unwrap();
        let manifest = write_dataset(dir.path(), &samples).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(loaded.len(), samples.len());
        for (a, b) in samples.iter().zip(&loaded) {
            assert_eq!(a.annotations, b.annotations);
            // PPM quantizes to bytes
            for (x, y) in a.hr.data.iter().zip(&b.hr.data) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
            for (x, y) in a.lr.data.iter().zip(&b.lr.data) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
