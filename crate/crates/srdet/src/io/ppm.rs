//! Binary PPM (P6) and PGM (P5) codec with maxval 255.
//!
//! Pixels map to [0,1]: bytes divide by 255 on read and round back on
//! write, so byte images round-trip exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Skip whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(b) = self.peek() {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => return,
            }
        }
    }

    fn integer(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("digits are ascii")
            .parse()
            .map_err(|_| self.err(format!("{what} out of range")))
    }
}

/// Decode a P6 (returns shape (3,H,W)) or P5 (shape (1,H,W)) image.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut p = Parser { bytes, pos: 0 };
    let channels = match bytes.get(0..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(p.err("expected P6 or P5 magic")),
    };
    p.pos = 2;
    let width = p.integer("width")?;
    let height = p.integer("height")?;
    if width == 0 || height == 0 {
        return Err(p.err("image dimensions must be positive"));
    }
    let maxval = p.integer("maxval")?;
    if maxval != 255 {
        return Err(p.err(format!("only maxval 255 is supported, got {maxval}")));
    }
    match p.peek() {
        Some(b) if b.is_ascii_whitespace() => p.pos += 1,
        _ => return Err(p.err("expected single whitespace after maxval")),
    }
    let need = width * height * channels;
    let data = &bytes[p.pos.min(bytes.len())..];
    if data.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: format!("pixel data truncated: need {need} bytes, have {}", data.len()),
        });
    }
    // pixel bytes are interleaved per pixel; tensors are channel-planar
    let mut out = Tensor::zeros(&[channels, height, width]);
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let b = data[(y * width + x) * channels + c];
                out.set3(c, y, x, b as f64 / 255.0);
            }
        }
    }
    Ok(out)
}

/// Encode a (3,H,W) tensor as P6 or a (1,H,W) tensor as P5. Values are
/// clamped to [0,1] before quantization.
pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    if t.rank() != 3 || !matches!(t.shape[0], 1 | 3) {
        return Err(Error::Shape(format!(
            "expected a (1,H,W) or (3,H,W) image, got {:?}",
            t.shape
        )));
    }
    let (channels, height, width) = (t.shape[0], t.shape[1], t.shape[2]);
    let magic = if channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let v = t.at3(c, y, x).clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    decode(&std::fs::read(path)?)
}

pub fn write_image(path: &Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode(t)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_round_trip_is_exact_for_all_byte_values() {
        // 16x16 image cycling through every byte value in every channel
        let mut t = Tensor::zeros(&[3, 16, 16]);
        for c in 0..3 {
            for i in 0..256 {
                t.data[c * 256 + i] = ((i + 37 * c) % 256) as f64 / 255.0;
            }
        }
        let back = decode(&encode(&t).unwrap()).unwrap();
        assert_eq!(back.shape, t.shape);
        assert_eq!(back.data, t.data);
    }

    #[test]
    fn gray_round_trip() {
        let t = Tensor::new(vec![1, 2, 3], vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        let bytes = encode(&t).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let back = decode(&bytes).unwrap();
        for (a, b) in t.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
    }

    #[test]
    fn out_of_range_values_clamp() {
        let t = Tensor::new(vec![1, 1, 2], vec![-0.5, 1.5]).unwrap();
        let back = decode(&encode(&t).unwrap()).unwrap();
        assert_eq!(back.data, vec![0.0, 1.0]);
    }

    #[test]
    fn header_comments_and_padding_accepted() {
        let mut bytes = b"P6 # magic\n# a comment line\n 2\t1 # size\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20, 30, 40, 50, 60]);
        let t = decode(&bytes).unwrap();
        assert_eq!(t.shape, vec![3, 1, 2]);
        assert!((t.at3(0, 0, 0) - 10.0 / 255.0).abs() < 1e-12);
        assert!((t.at3(2, 0, 1) - 60.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        match decode(b"P3\n1 1\n255\n...") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_pixel_data_reports_file_end() {
        let bytes = b"P6\n2 2\n255\n\x01\x02\x03".to_vec();
        match decode(&bytes) {
            Err(Error::Parse { offset, msg }) => {
                assert_eq!(offset, bytes.len());
                assert!(msg.contains("truncated"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_maxval_rejected() {
        assert!(decode(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let t = Tensor::new(
            vec![3, 4, 4],
            (0..48).map(|v| (v * 5 % 256) as f64 / 255.0).collect(),
        )
        .unwrap();
        write_image(&path, &t).unwrap();
        assert_eq!(read_image(&path).unwrap().data, t.data);
    }
}
