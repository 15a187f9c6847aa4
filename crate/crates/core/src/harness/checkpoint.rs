//! Binary weight snapshot.
//!
//! Layout (little-endian): magic `SSNNBPCK`, `u32` version, `u32` number of
//! layer sizes, each size as `u32`, `f64` θ, `u8` winner-take-all flag, then
//! every weight matrix in layer order as row-major `f64` (`n_out × n_in`).

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 8] = b"SSNNBPCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub layer_sizes: Vec<usize>,
    pub theta: f64,
    pub wta_enabled: bool,
    pub weights: Vec<Matrix>,
}

impl Checkpoint {
    pub fn new(layer_sizes: Vec<usize>, theta: f64, wta_enabled: bool, weights: Vec<Matrix>) -> Result<Self> {
        let ck = Self {
            layer_sizes,
            theta,
            wta_enabled,
            weights,
        };
        ck.check()?;
        Ok(ck)
    }

    fn check(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.weights.len() + 1 != self.layer_sizes.len() {
            return Err(Error::Checkpoint("layer sizes and weight count disagree".into()));
        }
        for (l, w) in self.weights.iter().enumerate() {
            if w.shape() != (self.layer_sizes[l + 1], self.layer_sizes[l]) {
                return Err(Error::Checkpoint(format!("layer {l} has shape {:?}", w.shape())));
            }
            if !w.is_finite() {
                return Err(Error::Checkpoint(format!("layer {l} has non-finite weights")));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let n_weights: usize = self.weights.iter().map(|w| w.as_slice().len()).sum();
        let mut out = Vec::with_capacity(8 + 8 + 4 * self.layer_sizes.len() + 9 + 8 * n_weights);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layer_sizes.len() as u32).to_le_bytes());
        for &s in &self.layer_sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.theta.to_le_bytes());
        out.push(self.wta_enabled as u8);
        for w in &self.weights {
            for v in w.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let layer_sizes = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let theta = r.f64()?;
        let wta_enabled = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("bad winner-take-all flag {b}"))),
        };
        let mut weights = Vec::with_capacity(n - 1);
        for w in layer_sizes.windows(2) {
            let (rows, cols) = (w[1], w[0]);
            let raw = r.take(rows.checked_mul(cols).and_then(|c| c.checked_mul(8)).ok_or_else(|| {
                Error::Checkpoint("layer size overflow".into())
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            weights.push(Matrix::from_vec(rows, cols, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Self::new(layer_sizes, theta, wta_enabled, weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Checkpoint(format!("{} not found", path.display())),
            _ => Error::Io(e),
        })?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
