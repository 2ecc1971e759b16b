//! Binary checkpoint archive.
//!
//! Layout: magic `SRDT`, u8 version, u32 LE tensor count, then per tensor
//! u16 LE name length, UTF-8 name, u8 rank, rank x u32 LE dims, raw little
//! endian f32 data; finally a CRC32 over all preceding bytes. Spec fields
//! are echoed as single-element `spec.*` pseudo tensors so loading into a
//! mismatched network fails atomically.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::{quantize_f32, Tensor};

const MAGIC: &[u8; 4] = b"SRDT";
pub const CHECKPOINT_VERSION: u8 = 1;

fn encode_entry(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    let name_bytes = name.as_bytes();
    buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
    buf.extend_from_slice(name_bytes);
    buf.push(shape.len() as u8);
    for d in shape {
        buf.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub fn save_params(path: &Path, spec_echo: &[(String, f64)], params: &ParamSet) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(CHECKPOINT_VERSION);
    let count = spec_echo.len() + params.len();
    buf.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, value) in spec_echo {
        encode_entry(&mut buf, name, &[1], &[*value]);
    }
    for (name, t) in params.iter() {
        encode_entry(&mut buf, name, &t.shape, &t.data);
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CheckpointTruncated {
                offset: self.buf.len(),
                needed: self.pos + n - self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn parse(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if buf.len() < 4 + 1 + 4 + 4 {
        return Err(Error::CheckpointTruncated {
            offset: buf.len(),
            needed: 13 - buf.len().min(13),
        });
    }
    // CRC covers everything but its own trailing 4 bytes.
    let body = &buf[..buf.len() - 4];
    let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::CheckpointCorrupt("CRC32 mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CheckpointCorrupt("bad magic bytes".into()));
    }
    let version = r.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CheckpointCorrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != body.len() {
        return Err(Error::CheckpointCorrupt(format!(
            "{} trailing bytes after last tensor",
            body.len() - r.pos
        )));
    }
    Ok(entries)
}

/// Load into an existing parameter set, verifying the spec echo first.
/// Nothing is modified unless every check passes.
pub fn load_params(
    path: &Path,
    spec_echo: &[(String, f64)],
    params: &mut ParamSet,
) -> Result<()> {
    let buf = fs::read(path)?;
    let entries = parse(&buf)?;
    let mut file_params = ParamSet::new();
    let mut echo_seen = 0usize;
    for (name, t) in entries {
        if let Some((_, expected)) = spec_echo.iter().find(|(n, _)| n == &name) {
            let found = t.data[0];
            if found != quantize_f32(*expected) {
                return Err(Error::CheckpointCorrupt(format!(
                    "spec mismatch for `{name}`: file has {found}, expected {expected}"
                )));
            }
            echo_seen += 1;
        } else {
            file_params.add(&name, t);
        }
    }
    if echo_seen != spec_echo.len() {
        return Err(Error::CheckpointCorrupt(format!(
            "spec echo incomplete: {echo_seen} of {} fields present",
            spec_echo.len()
        )));
    }
    params.load_from(&file_params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sr::{Generator, GeneratorSpec};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("srdet-ckpt-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let g = Generator::build(GeneratorSpec::default(), 12).unwrap();
        let path = tmp("roundtrip.bin");
        save_params(&path, &g.spec_echo(), &g.params).unwrap();
        let mut g2 = Generator::build(GeneratorSpec::default(), 99).unwrap();
        load_params(&path, &g2.spec_echo(), &mut g2.params).unwrap();
        for ((_, a), (_, b)) in g.params.iter().zip(g2.params.iter()) {
            assert_eq!(a.data, b.data);
        }
        let img = Tensor::filled(&[3, 8, 8], 0.4);
        assert_eq!(g.infer(&img).unwrap().data, g2.infer(&img).unwrap().data);
    }

    #[test]
    fn wrong_spec_rejected_atomically() {
        let g = Generator::build(GeneratorSpec::default(), 12).unwrap();
        let path = tmp("specmismatch.bin");
        save_params(&path, &g.spec_echo(), &g.params).unwrap();
        let other = GeneratorSpec {
            num_rrdb: 2,
            ..Default::default()
        };
        let mut g2 = Generator::build(other, 1).unwrap();
        let before: Vec<Vec<f64>> = g2.params.iter().map(|(_, t)| t.data.clone()).collect();
        assert!(load_params(&path, &g2.spec_echo(), &mut g2.params).is_err());
        for ((_, t), b) in g2.params.iter().zip(&before) {
            assert_eq!(&t.data, b);
        }
    }

    #[test]
    fn truncation_yields_typed_error() {
        let g = Generator::build(GeneratorSpec::default(), 12).unwrap();
        let path = tmp("trunc.bin");
        save_params(&path, &g.spec_echo(), &g.params).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        let short = tmp("trunc-short.bin");
        fs::write(&short, &bytes).unwrap();
        let mut g2 = Generator::build(GeneratorSpec::default(), 1).unwrap();
        let err = load_params(&short, &g2.spec_echo(), &mut g2.params).unwrap_err();
        // dropping the last byte invalidates the CRC trailer
        assert!(matches!(
            err,
            Error::CheckpointCorrupt(_) | Error::CheckpointTruncated { .. }
        ));
    }

    #[test]
    fn corrupted_byte_fails_crc() {
        let g = Generator::build(GeneratorSpec::default(), 12).unwrap();
        let path = tmp("flip.bin");
        save_params(&path, &g.spec_echo(), &g.params).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        let mut g2 = Generator::build(GeneratorSpec::default(), 1).unwrap();
        assert!(matches!(
            load_params(&path, &g2.spec_echo(), &mut g2.params),
            Err(Error::CheckpointCorrupt(_))
        ));
    }

    #[test]
    fn version_mismatch_detected() {
        let g = Generator::build(GeneratorSpec::default(), 12).unwrap();
        let path = tmp("version.bin");
        save_params(&path, &g.spec_echo(), &g.params).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 9;
        let body_len = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let mut g2 = Generator::build(GeneratorSpec::default(), 1).unwrap();
        assert!(matches!(
            load_params(&path, &g2.spec_echo(), &mut g2.params),
            Err(Error::CheckpointVersion { found: 9, .. })
        ));
    }
}
