//! `APWT` tensor container.
//!
//! Little-endian layout: magic `APWT`, version `u32`, tensor count `u32`; per
//! tensor a `u16` name length, UTF-8 name, `u8` rank, `u32` extents and
//! row-major `f32` values; footer `u32` CRC32 over everything after the magic.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{BackboneConfig, BackboneParams};

pub const MAGIC: &[u8; 4] = b"APWT";
pub const VERSION: u32 = 1;
const CONFIG_TENSOR: &str = "meta.config";

pub fn encode_tensors<'a, I>(tensors: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let items: Vec<_> = tensors.into_iter().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, t) in items {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::Format(format!("rank of {name} exceeds 255")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(rank);
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| Error::Format(format!("extent of {name} too large")))?;
            buf.extend_from_slice(&e.to_le_bytes());
        }
        for &v in t.data() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::NonFinite(format!("tensor {name} at f32 precision")));
            }
            buf.extend_from_slice(&f.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf[MAGIC.len()..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated payload: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses and validates a container (magic, CRC, version, structure).
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic (expected APWT)".into()));
    }
    if bytes.len() < MAGIC.len() + 12 {
        return Err(Error::Format(format!("file too short ({} bytes)", bytes.len())));
    }
    let end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[MAGIC.len()..end]);
    if stored != computed {
        return Err(Error::Crc {
            start: MAGIC.len(),
            end,
            stored,
            computed,
        });
    }
    let mut r = Reader {
        bytes: &bytes[..end],
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != end {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tensor",
            end - r.pos
        )));
    }
    Ok(out)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes)
}

impl BackboneParams {
    /// Serialized container with the config embedded as the first tensor.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cfg = Tensor::vector(self.config.to_codes());
        let named = self.named_tensors();
        let items = std::iter::once((CONFIG_TENSOR, &cfg)).chain(named.iter().map(|(n, t)| (n.as_str(), *t)));
        encode_tensors(items)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut tensors = decode_tensors(bytes)?.into_iter();
        let config = match tensors.next() {
            Some((name, t)) if name == CONFIG_TENSOR => BackboneConfig::from_codes(t.data())?,
            _ => return Err(Error::Format(format!("first tensor must be `{CONFIG_TENSOR}`"))),
        };
        let layout = Self::expected_layout(&config);
        let rest: Vec<_> = tensors.collect();
        if rest.len() != layout.len() {
            return Err(Error::Format(format!(
                "expected {} weight tensors for the embedded config, found {}",
                layout.len(),
                rest.len()
            )));
        }
        let mut ordered = Vec::with_capacity(rest.len());
        for ((name, t), (want_name, want_shape)) in rest.into_iter().zip(layout) {
            if name != want_name || t.shape() != want_shape.as_slice() {
                return Err(Error::Format(format!(
                    "tensor `{name}` {:?} does not match expected `{want_name}` {want_shape:?}",
                    t.shape()
                )));
            }
            ordered.push(t);
        }
        Ok(Self::from_ordered(config, ordered))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::*;

    fn tiny() -> BackboneParams {
        BackboneParams::init_random(&tiny_config(), 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = tiny();
        let bytes = p.to_bytes().unwrap();
        let q = BackboneParams::from_bytes(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = tiny().to_bytes().unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(BackboneParams::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn flipped_payload_byte_reports_crc_region() {
        let mut bytes = tiny().to_bytes().unwrap();
        let k = bytes.len() / 3;
        bytes[k] ^= 0x40;
        let end = bytes.len() - 4;
        let recomputed = crc32fast::hash(&bytes[4..end]);
        match BackboneParams::from_bytes(&bytes) {
            Err(Error::Crc { start, end: e, computed, .. }) => {
                assert_eq!((start, e), (4, end));
                assert_eq!(computed, recomputed);
            }
            other => panic!("expected CRC error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = tiny().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(BackboneParams::from_bytes(&bytes), Err(Error::Format(_))));

        let t = Tensor::scalar(1.0);
        let mut raw = encode_tensors([("x", &t)]).unwrap();
        raw[4] = 9;
        let end = raw.len() - 4;
        let crc = crc32fast::hash(&raw[4..end]);
        raw[end..].copy_from_slice(&crc.to_le_bytes());
        let err = decode_tensors(&raw).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn shape_mismatch_against_embedded_config() {
        let p = tiny();
        let mut cfg = p.config.clone();
        cfg.embed_dim += 1;
        let cfg_t = Tensor::vector(cfg.to_codes());
        let named = p.named_tensors();
        let bytes = encode_tensors(
            std::iter::once((CONFIG_TENSOR, &cfg_t)).chain(named.iter().map(|(n, t)| (n.as_str(), *t))),
        )
        .unwrap();
        let err = BackboneParams::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("does not match"), "{err}");
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2], vec![1.5, -2.0]).unwrap();
        let raw = encode_tensors([("ab", &t)]).unwrap();
        assert_eq!(&raw[..4], b"APWT");
        assert_eq!(u32::from_le_bytes(raw[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(raw[8..12].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(raw[12..14].try_into().unwrap()), 2);
        assert_eq!(&raw[14..16], b"ab");
        assert_eq!(raw[16], 1);
        assert_eq!(u32::from_le_bytes(raw[17..21].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(raw[21..25].try_into().unwrap()), 1.5);
        assert_eq!(raw.len(), 29 + 4);
    }
}
