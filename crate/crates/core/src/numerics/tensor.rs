//! `.tnsr` container: `TNSR`, version byte `1`, `u32` LE rank, `rank` × `u32`
//! LE dims, then the row-major `f64` LE payload. Nothing may follow the
//! payload.

use std::path::Path;

use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"TNSR";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                what: "tensor payload".into(),
                expected: vec![expected],
                found: vec![data.len()],
            });
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix<T: Scalar>(m: &Matrix<T>) -> Self {
        Self {
            dims: m.shape().to_vec(),
            data: m.data().iter().map(|v| v.to_f64_lossless()).collect(),
        }
    }

    /// Interprets a rank-2 tensor as a matrix; `what` names it in errors.
    pub fn into_matrix<T: Scalar>(self, what: &str) -> Result<Matrix<T>> {
        if self.dims.len() != 2 {
            return Err(Error::ShapeMismatch {
                what: format!("{what} (rank)"),
                expected: vec![2],
                found: vec![self.dims.len()],
            });
        }
        let data = self.data.into_iter().map(T::from_f64_lossy).collect();
        Matrix::from_vec(self.dims[0], self.dims[1], data)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + 4 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = cur.take(1)?[0];
        if version != VERSION {
            return Err(Error::BadVersion { found: version });
        }
        let rank = cur.u32()? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len.min(bytes.len() / 8));
        for _ in 0..len {
            let raw: [u8; 8] = cur.take(8)?.try_into().expect("8 bytes");
            data.push(f64::from_le_bytes(raw));
        }
        if cur.pos != bytes.len() {
            return Err(Error::TrailingBytes);
        }
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::UnexpectedEof)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::UnexpectedEof)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn write_matrix<T: Scalar>(path: &Path, m: &Matrix<T>) -> Result<()> {
    Tensor::from_matrix(m).write(path)
}

pub fn read_matrix<T: Scalar>(path: &Path, what: &str) -> Result<Matrix<T>> {
    Tensor::read(path)?.into_matrix(what)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout_is_exact() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let mut want = b"TNSR".to_vec();
        want.push(1);
        want.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        want.extend_from_slice(&1.0f64.to_le_bytes());
        want.extend_from_slice(&(-2.5f64).to_le_bytes());
        assert_eq!(t.encode(), want);
    }

    #[test]
    fn decode_errors_are_distinct() {
        let good = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().encode();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(Tensor::decode(&bad), Err(Error::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(Tensor::decode(&bad), Err(Error::BadVersion { found: 2 })));
        let err = Tensor::decode(&good[..good.len() - 3]).unwrap_err();
        assert_eq!(err.to_string(), "unexpected end of tensor payload");
        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(Tensor::decode(&bad), Err(Error::TrailingBytes)));
    }

    #[test]
    fn rank_must_be_two_for_matrices() {
        let t = Tensor::new(vec![2, 1, 1], vec![1.0, 2.0]).unwrap();
        assert!(matches!(t.into_matrix::<f64>("x"), Err(Error::ShapeMismatch { .. })));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            dims in prop::collection::vec(0usize..4, 0..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let mut rng = crate::numerics::Rng::new(seed);
            let data: Vec<f64> = (0..n).map(|_| f64::from_bits(rng.next_u64() >> 2)).collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = Tensor::decode(&t.encode()).unwrap();
            prop_assert_eq!(back.dims, t.dims);
            prop_assert!(back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
