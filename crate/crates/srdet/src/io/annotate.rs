//! Draw detection boxes and labels onto an image copy.

use crate::det::boxes::Detection;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const RED: [f64; 3] = [1.0, 0.0, 0.0];
const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;
/// Glyph width plus one column of spacing.
const ADVANCE: usize = GLYPH_W + 1;

/// 3x5 glyph: five rows of three bits, most significant bit on the left.
fn glyph(ch: char) -> [u8; GLYPH_H] {
    match ch {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b001, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        'a' => [0b111, 0b101, 0b111, 0b101, 0b101],
        'b' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'c' => [0b111, 0b100, 0b100, 0b100, 0b111],
        'd' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'e' => [0b111, 0b100, 0b111, 0b100, 0b111],
        'f' => [0b111, 0b100, 0b111, 0b100, 0b100],
        'g' => [0b111, 0b100, 0b101, 0b101, 0b111],
        'h' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'i' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'j' => [0b001, 0b001, 0b001, 0b101, 0b111],
        'k' => [0b101, 0b101, 0b110, 0b101, 0b101],
        'l' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'm' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'n' => [0b111, 0b101, 0b101, 0b101, 0b101],
        'o' => [0b111, 0b101, 0b101, 0b101, 0b111],
        'p' => [0b111, 0b101, 0b111, 0b100, 0b100],
        'q' => [0b111, 0b101, 0b101, 0b111, 0b001],
        'r' => [0b111, 0b101, 0b110, 0b101, 0b101],
        's' => [0b111, 0b100, 0b111, 0b001, 0b111],
        't' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'u' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'v' => [0b101, 0b101, 0b101, 0b101, 0b010],
        'w' => [0b101, 0b101, 0b111, 0b111, 0b101],
        'x' => [0b101, 0b101, 0b010, 0b101, 0b101],
        'y' => [0b101, 0b101, 0b010, 0b010, 0b010],
        'z' => [0b111, 0b001, 0b010, 0b100, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        _ => [0b000; GLYPH_H],
    }
}

fn put_red(img: &mut Tensor, x: isize, y: isize) {
    let (h, w) = (img.shape[1] as isize, img.shape[2] as isize);
    if x < 0 || y < 0 || x >= w || y >= h {
        return;
    }
    for (c, &v) in RED.iter().enumerate() {
        img.set3(c, y as usize, x as usize, v);
    }
}

fn draw_box(img: &mut Tensor, x0: isize, y0: isize, x1: isize, y1: isize) {
    for x in x0..=x1 {
        put_red(img, x, y0);
        put_red(img, x, y1);
    }
    for y in y0..=y1 {
        put_red(img, x0, y);
        put_red(img, x1, y);
    }
}

fn draw_text(img: &mut Tensor, x: isize, y: isize, text: &str) {
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        let gx = x + (i * ADVANCE) as isize;
        for (ry, bits) in rows.iter().enumerate() {
            for rx in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - rx) & 1 == 1 {
                    put_red(img, gx + rx as isize, y + ry as isize);
                }
            }
        }
    }
}

fn label_for(d: &Detection, class_names: &[&str]) -> String {
    let name = d
        .class_id
        .checked_sub(1)
        .and_then(|i| class_names.get(i))
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("cls{}", d.class_id));
    format!("{name} {:.2}", d.score)
}

/// Return a copy of `image` with each detection outlined in pure red and
/// captioned `name score` just above its box. Detections are painted in
/// ascending score order so the strongest ones end up on top.
/// `class_names[i]` names class id i + 1; ids without a name render as
/// `cls<N>`.
pub fn annotate(image: &Tensor, detections: &[Detection], class_names: &[&str]) -> Result<Tensor> {
    if image.rank() != 3 || image.shape[0] != 3 {
        return Err(Error::Shape(format!(
            "annotate expects a (3,H,W) image, got {:?}",
            image.shape
        )));
    }
    let mut out = image.clone();
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[a]
            .score
            .partial_cmp(&detections[b].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in &order {
        let d = &detections[i];
        let x0 = d.bbox.x_min.round() as isize;
        let y0 = d.bbox.y_min.round() as isize;
        let x1 = (d.bbox.x_max.round() as isize - 1).max(x0);
        let y1 = (d.bbox.y_max.round() as isize - 1).max(y0);
        draw_box(&mut out, x0, y0, x1, y1);
        let label = label_for(d, class_names);
        // sit the label above the box, or inside it at the top edge
        let ty = if y0 >= GLYPH_H as isize + 1 {
            y0 - GLYPH_H as isize - 1
        } else {
            y0 + 1
        };
        draw_text(&mut out, x0, ty, &label);
    }
    Ok(out)
}
