//! `TCNW` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TCNW" | u32 version (=1) | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | u32 dim * rank | f32 payload (row-major)
//! u32 CRC32 (IEEE) over every preceding byte
//! ```

use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"TCNW";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a TCNW file (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    VersionUnsupported(u32),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A named dense tensor. Values are held as `f64` in memory and stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ContainerError> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ContainerError::InvalidTensor(format!(
                "{name}: shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape, data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub fn encode(tensors: &[Tensor]) -> Result<Vec<u8>, ContainerError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(tensors.len()).map_err(too_large)?.to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        out.extend_from_slice(&u16::try_from(name.len()).map_err(too_large)?.to_le_bytes());
        out.extend_from_slice(name);
        out.push(u8::try_from(t.shape.len()).map_err(too_large)?);
        for &d in &t.shape {
            out.extend_from_slice(&u32::try_from(d).map_err(too_large)?.to_le_bytes());
        }
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(ContainerError::InvalidTensor(format!("{}: shape/data mismatch", t.name)));
        }
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn too_large<E>(_: E) -> ContainerError {
    ContainerError::InvalidTensor("field exceeds its on-disk width".into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ContainerError::TruncatedFile(format!("while reading {what} at byte {}", self.pos))),
        }
    }
    fn u8(&mut self, what: &str) -> Result<u8, ContainerError> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Tensor>, ContainerError> {
    if bytes.len() < 4 {
        return Err(ContainerError::TruncatedFile("missing magic".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(ContainerError::TruncatedFile("missing version".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(ContainerError::VersionUnsupported(version));
    }
    if bytes.len() < 16 {
        return Err(ContainerError::TruncatedFile("missing header or checksum".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ContainerError::ChecksumMismatch { stored, computed });
    }

    let mut cur = Cursor { bytes: body, pos: 8 };
    let count = cur.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| ContainerError::InvalidTensor("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u8("rank")? as usize;
        let shape = (0..rank).map(|_| cur.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| ContainerError::InvalidTensor(format!("{name}: shape overflows")))?;
        let payload = cur.take(n.saturating_mul(4), "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    if cur.pos != body.len() {
        return Err(ContainerError::InvalidTensor(format!(
            "{} trailing bytes after the last tensor",
            body.len() - cur.pos
        )));
    }
    Ok(tensors)
}

pub fn write_file(path: impl AsRef<Path>, tensors: &[Tensor]) -> Result<(), ContainerError> {
    std::fs::write(path, encode(tensors)?)?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<Tensor>, ContainerError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Tensor> {
        vec![
            Tensor::new("a", vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-3f32 as f64, 7.0]).unwrap(),
            Tensor::new("scalar", vec![], vec![42.0]).unwrap(),
            Tensor::new("empty", vec![0], vec![]).unwrap(),
        ]
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"TCNW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 1);
        assert_eq!(bytes[14], b'a');
        assert_eq!(bytes[15], 2);
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&bytes[..bytes.len() - 4]));
    }

    #[test]
    fn round_trip() {
        assert_eq!(decode(&encode(&sample()).unwrap()).unwrap(), sample());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&sample()).unwrap();
        let mut flipped = bytes.clone();
        flipped[20] ^= 0x40;
        assert!(matches!(decode(&flipped), Err(ContainerError::ChecksumMismatch { .. })));

        let mut v999 = bytes.clone();
        v999[4..8].copy_from_slice(&999u32.to_le_bytes());
        assert!(matches!(decode(&v999), Err(ContainerError::VersionUnsupported(999))));

        assert!(matches!(decode(&bytes[..10]), Err(ContainerError::TruncatedFile(_))));
        assert!(matches!(decode(b"RIFF0000"), Err(ContainerError::BadMagic)));
    }

    #[test]
    fn truncated_body_with_valid_crc() {
        // Claims 5 tensors but only holds 3; checksum recomputed so parsing must catch it.
        let mut bytes = encode(&sample()).unwrap();
        bytes.truncate(bytes.len() - 4);
        bytes[8..12].copy_from_slice(&5u32.to_le_bytes());
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(ContainerError::TruncatedFile(_))));
    }
}
