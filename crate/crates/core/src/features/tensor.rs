//! Reader and writer for the `FTNS` tensor interchange format.
//!
//! Layout (little-endian): magic `FTNS`, u8 version (1), u8 dtype (1 =
//! float32), u8 ndim, u8 pad (0), `ndim` u64 dimensions, row-major payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 4] = b"FTNS";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;

/// A decoded tensor: shape and row-major payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::TensorFormat(format!(
            "shape {shape:?} needs {expected} values, got {}",
            data.len()
        )));
    }
    if shape.len() > u8::MAX as usize {
        return Err(Error::TensorFormat(format!("too many dimensions: {}", shape.len())));
    }
    let mut out = Vec::with_capacity(8 + shape.len() * 8 + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F32, shape.len() as u8, 0]);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::TensorFormat("bad magic".into()));
    }
    let (version, dtype, ndim) = (bytes[4], bytes[5], bytes[6] as usize);
    if version != VERSION {
        return Err(Error::TensorFormat(format!("unsupported version {version}")));
    }
    if dtype != DTYPE_F32 {
        return Err(Error::TensorFormat(format!("unsupported dtype code {dtype}")));
    }
    let header = 8 + ndim * 8;
    if bytes.len() < header {
        return Err(Error::TensorFormat(format!(
            "expected {header} header bytes, got {}",
            bytes.len()
        )));
    }
    let shape: Vec<usize> = bytes[8..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::TensorFormat(format!("shape {shape:?} overflows")))?;
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| Error::TensorFormat(format!("shape {shape:?} overflows")))?;
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::TensorFormat(format!(
            "expected {expected} bytes, got {}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok(Tensor { shape, data })
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    write_atomic(path, &encode(shape, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_decode() {
        let data = vec![0.25f32; 64 * 8 * 8];
        let t = decode(&encode(&[64, 8, 8], &data).unwrap()).unwrap();
        assert_eq!(t.shape, vec![64, 8, 8]);
        assert_eq!(t.data.len(), 4096);
    }

    #[test]
    fn exact_byte_layout() {
        let bytes = encode(&[2], &[1.0, -2.0]).unwrap();
        let mut expected = b"FTNS".to_vec();
        expected.extend_from_slice(&[1, 1, 1, 0]);
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode(&[4, 2], &[0.0; 8]).unwrap();
        bytes.truncate(bytes.len() - 3);
        let err = decode(&bytes).unwrap_err().to_string();
        assert!(err.contains("expected 32 bytes, got 29"), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&[1], &[0.0]).unwrap();
        bytes[0] = b'X';
        assert!(decode(&bytes).unwrap_err().to_string().contains("bad magic"));
        let mut bytes = encode(&[1], &[0.0]).unwrap();
        bytes[4] = 2;
        assert!(decode(&bytes).unwrap_err().to_string().contains("version"));
        let mut bytes = encode(&[1], &[0.0]).unwrap();
        bytes[5] = 7;
        assert!(decode(&bytes).unwrap_err().to_string().contains("dtype"));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shape in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| {
                    let bits = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 16) as u32;
                    let v = f32::from_bits(bits);
                    if v.is_finite() { v } else { i as f32 }
                })
                .collect();
            let t = decode(&encode(&shape, &data).unwrap()).unwrap();
            prop_assert_eq!(&t.shape, &shape);
            let a: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
