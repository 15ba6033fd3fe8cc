use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const TENSOR_MAGIC: &[u8; 4] = b"HGT1";
pub const MAX_RANK: usize = 4;

/// Row-major `f32` tensor of rank 1 to 4, stored in the HGT1 format:
/// magic, `u32` rank, `u32` dims, `f32` payload, all little-endian.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "HGT1",
        reason: reason.into(),
    }
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::invalid(format!(
                "tensor rank must lie in 1..=4, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| u32::try_from(d).is_err()) {
            return Err(Error::invalid("tensor dimension exceeds u32"));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape("Tensor::new", n, data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &DenseMatrix<f32>) -> Self {
        Self {
            dims: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Rank 2 as is; rank 1 as a column.
    pub fn to_matrix(&self) -> Result<DenseMatrix<f32>> {
        match self.dims[..] {
            [n] => DenseMatrix::from_vec(n, 1, self.data.clone()),
            [r, c] => DenseMatrix::from_vec(r, c, self.data.clone()),
            _ => Err(Error::invalid(format!(
                "expected a rank 1 or 2 tensor, got rank {}",
                self.dims.len()
            ))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
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
        let word = |at: usize, what: &str| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("four bytes")))
                .ok_or_else(|| format_err(format!("file ends inside the {what}")))
        };
        if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
            return Err(format_err("bad magic; expected HGT1"));
        }
        let rank = word(4, "rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(format_err(format!("rank must lie in 1..=4, got {rank}")));
        }
        let dims = (0..rank)
            .map(|i| word(8 + 4 * i, "dimensions").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| format_err("dimensions overflow"))?;
        let payload = &bytes[8 + 4 * rank..];
        if payload.len() < count {
            return Err(Error::Truncated {
                format: "HGT1",
                expected: count,
                actual: payload.len(),
            });
        }
        if payload.len() > count {
            return Err(format_err(format!(
                "{} bytes follow the {count}-byte payload",
                payload.len() - count
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        Ok(Self { dims, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_little_endian() {
        let t = Tensor::new(vec![2], vec![1.0, -2.5]).unwrap();
        let mut expected = b"HGT1".to_vec();
        expected.extend([1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.5f32).to_le_bytes());
        assert_eq!(t.encode(), expected);
        assert_eq!(Tensor::decode(&expected).unwrap(), t);
    }

    #[test]
    fn matrix_conversion() {
        let m = DenseMatrix::from_vec(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let t = Tensor::from_matrix(&m);
        assert_eq!(t.dims(), &[2, 3]);
        assert_eq!(t.to_matrix().unwrap(), m);
        assert_eq!(
            Tensor::new(vec![3], vec![1.0; 3])
                .unwrap()
                .to_matrix()
                .unwrap()
                .shape(),
            (3, 1)
        );
        assert!(Tensor::new(vec![1, 1, 1], vec![1.0])
            .unwrap()
            .to_matrix()
            .is_err());
    }

    #[test]
    fn malformed_files_are_rejected() {
        let good = Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap().encode();
        match Tensor::decode(&good[..good.len() - 3]) {
            Err(Error::Truncated {
                expected, actual, ..
            }) => assert_eq!((expected, actual), (16, 13)),
            other => panic!("{other:?}"),
        }
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(Tensor::decode(&bad), Err(Error::Format { .. })));
        let mut rank5 = good.clone();
        rank5[4] = 5;
        assert!(matches!(Tensor::decode(&rank5), Err(Error::Format { .. })));
        let mut rank0 = good.clone();
        rank0[4] = 0;
        assert!(Tensor::decode(&rank0).is_err());
        assert!(Tensor::decode(&good[..10]).is_err());
        let mut long = good;
        long.push(0);
        assert!(Tensor::decode(&long).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_byte_identical(dims in prop::collection::vec(1usize..4, 1..=4), bits in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| f32::from_bits(bits.wrapping_mul(i as u32 + 1))).collect();
            let bytes = Tensor::new(dims, data).unwrap().encode();
            prop_assert_eq!(Tensor::decode(&bytes).unwrap().encode(), bytes);
        }
    }
}
