//! Dense row-major tensors and the `LCVT` file format.
//!
//! Layout: magic `LCVT`, version byte, rank byte, each dimension as u32 LE,
//! then the payload as f64 LE in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{LcvError, Result};

const MAGIC: &[u8; 4] = b"LCVT";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(LcvError::DimensionMismatch(format!(
                "tensor dims {dims:?} hold {n} values, got {}",
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize {
            return Err(LcvError::InvalidArgument("tensor rank exceeds 255".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&[VERSION, self.dims.len() as u8])?;
        for &d in &self.dims {
            let d = u32::try_from(d)
                .map_err(|_| LcvError::InvalidArgument(format!("dimension {d} exceeds u32")))?;
            out.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(8 * self.data.len());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let bad = |reason: String| LcvError::Format {
            format: "LCVT",
            reason,
        };
        let mut header = [0u8; 6];
        input
            .read_exact(&mut header)
            .map_err(|e| bad(format!("truncated header: {e}")))?;
        if &header[..4] != MAGIC {
            return Err(bad("bad magic".into()));
        }
        if header[4] != VERSION {
            return Err(bad(format!("unsupported version {}", header[4])));
        }
        let rank = header[5] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut d = [0u8; 4];
            input
                .read_exact(&mut d)
                .map_err(|e| bad(format!("truncated dims: {e}")))?;
            dims.push(u32::from_le_bytes(d) as usize);
        }
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("dimension product overflows".into()))?;
        if n.checked_mul(8) != Some(payload.len()) {
            return Err(bad(format!(
                "payload has {} bytes, dims {dims:?} need {n} f64 values",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
