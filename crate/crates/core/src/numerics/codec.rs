//! The KSTN tensor file format.
//!
//! ```text
//! magic    4 bytes   "KSTN"
//! version  u32 LE    1
//! dtype    u32 LE    1 = f64, 2 = f32
//! ndim     u32 LE
//! dims     u64 LE x ndim
//! payload  row-major values, little-endian, 8 or 4 bytes each
//! ```
//!
//! Nothing may follow the payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"KSTN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    #[default]
    F64,
    F32,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F64 => 1,
            Dtype::F32 => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::F32),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

pub fn encode(tensor: &Tensor, dtype: Dtype) -> Vec<u8> {
    let dims = tensor.dims();
    let mut out = Vec::with_capacity(16 + 8 * dims.len() + dtype.width() * tensor.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dtype.code().to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        Dtype::F64 => tensor
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => tensor
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corruption(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Tensor, Dtype)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing KSTN magic".into()));
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let version = cur
        .u32("version")
        .map_err(|_| Error::Format("truncated header".into()))?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dtype = Dtype::from_code(
        cur.u32("dtype")
            .map_err(|_| Error::Format("truncated header".into()))?,
    )?;
    let ndim = cur.u32("ndim")? as usize;
    let mut dims = Vec::with_capacity(ndim.min(64));
    for i in 0..ndim {
        let d = cur.u64("dims")?;
        if d == 0 {
            return Err(Error::Corruption(format!("dimension {i} is zero")));
        }
        dims.push(usize::try_from(d).map_err(|_| Error::Corruption("dimension overflow".into()))?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Corruption("element count overflow".into()))?;
    let payload = &bytes[cur.pos..];
    let expected = count
        .checked_mul(dtype.width())
        .ok_or_else(|| Error::Corruption("payload size overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Corruption(format!(
            "dims {dims:?} need {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    let tensor = Tensor::new(dims, data).map_err(|e| Error::Corruption(e.to_string()))?;
    Ok((tensor, dtype))
}

pub fn write_tensor<W: Write>(mut w: W, tensor: &Tensor, dtype: Dtype) -> std::io::Result<()> {
    w.write_all(&encode(tensor, dtype))
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<(Tensor, Dtype)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::io("<reader>", e))?;
    decode(&buf)
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &Tensor, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensor, dtype)).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_normal, Rng};

    #[test]
    fn two_by_two_layout() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode(&t, Dtype::F64);
        // header: magic, version, dtype, ndim, two u64 dims
        let header = 4 + 4 + 4 + 4 + 16;
        assert_eq!(&bytes[..4], b"KSTN");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[2, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bytes.len() - header, 32);
        // 1.0f64 = 0x3FF0000000000000
        assert_eq!(&bytes[header..header + 8], &[0, 0, 0, 0, 0, 0, 0xF0, 0x3F]);
    }

    #[test]
    fn seeded_round_trip_is_bit_exact() {
        let t = seeded_normal(&mut Rng::new(3), &[3, 4], 0.0, 1.0).unwrap();
        let bytes = encode(&t, Dtype::F64);
        let (back, dtype) = decode(&bytes).unwrap();
        assert_eq!(dtype, Dtype::F64);
        assert_eq!(encode(&back, Dtype::F64), bytes);
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn f32_payload_is_stable_after_first_cast() {
        let t = seeded_normal(&mut Rng::new(4), &[5], 0.0, 1.0).unwrap();
        let once = encode(&t, Dtype::F32);
        let (back, dtype) = decode(&once).unwrap();
        assert_eq!(dtype, Dtype::F32);
        assert_eq!(encode(&back, Dtype::F32), once);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode(&Tensor::zeros(&[2]), Dtype::F64);
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_version_and_dtype_are_format_errors() {
        let good = encode(&Tensor::zeros(&[2]), Dtype::F64);
        let mut v = good.clone();
        v[4] = 2;
        assert!(matches!(decode(&v), Err(Error::Format(_))));
        let mut d = good;
        d[8] = 7;
        assert!(matches!(decode(&d), Err(Error::Format(_))));
    }

    #[test]
    fn payload_mismatch_is_corruption() {
        let mut bytes = encode(&Tensor::zeros(&[2, 3]), Dtype::F64);
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(Error::Corruption(_))));
        let mut extra = encode(&Tensor::zeros(&[2]), Dtype::F64);
        extra.push(0);
        assert!(matches!(decode(&extra), Err(Error::Corruption(_))));
    }
}
