//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size      field
//! 0       8         magic "GOLFCKPT"
//! 8       4         format version (u32, currently 1)
//! 12      4         vocabulary size V (u32)
//! 16      4         embedding width d_emb (u32)
//! 20      4         hidden width d_h (u32)
//! 24      8·P       parameters (f64), tensors in declaration order:
//!                   embedding [V×d_emb], w_in [d_h×d_emb], w_rec [d_h×d_h],
//!                   b_h [d_h], w_out [V×d_h], b_out [V]; row-major
//! ..      8         optimizer update count (u64)
//! ..      4·8       lr, beta1, beta2, eps (f64)
//! ..      8·P       first moments (f64)
//! ..      8·P       second moments (f64)
//! ..      8         completed training steps (u64)
//! ```
//!
//! P is the parameter count implied by the header. Trailing bytes are an error.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{GolfError, Result};
use crate::policy::{OptimizerState, PolicyDims, PolicyParams};

pub const MAGIC: &[u8; 8] = b"GOLFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub optimizer: OptimizerState,
    pub trainer_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u32,
    pub dims: PolicyDims,
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.params.dims();
        let mut out = Vec::with_capacity(64 + 24 * dims.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [dims.vocab, dims.d_emb, dims.d_h] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        put_f64s(&mut out, self.params.as_slice());
        let o = &self.optimizer;
        out.extend_from_slice(&o.step.to_le_bytes());
        put_f64s(&mut out, &[o.lr, o.beta1, o.beta2, o.eps]);
        put_f64s(&mut out, &o.m);
        put_f64s(&mut out, &o.v);
        out.extend_from_slice(&self.trainer_step.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let header = read_header(&mut r)?;
        let n = header.dims.param_count();
        let params = PolicyParams::from_vec(header.dims, r.f64s(n)?)?;
        let step = r.u64()?;
        let [lr, beta1, beta2, eps]: [f64; 4] = r.f64s(4)?.try_into().expect("four values");
        let m = r.f64s(n)?;
        let v = r.f64s(n)?;
        let trainer_step = r.u64()?;
        if r.pos != bytes.len() {
            return Err(GolfError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            params,
            optimizer: OptimizerState {
                m,
                v,
                step,
                lr,
                beta1,
                beta2,
                eps,
            },
            trainer_step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| GolfError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| GolfError::io(path, e))?;
        f.sync_all().map_err(|e| GolfError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_all(path)?)
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| GolfError::io(path, e))?;
    Ok(buf)
}

pub fn read_header_from(path: &Path) -> Result<Header> {
    let bytes = read_all(path)?;
    read_header(&mut Reader { bytes: &bytes, pos: 0 })
}

fn read_header(r: &mut Reader<'_>) -> Result<Header> {
    if r.take(8)? != MAGIC {
        return Err(GolfError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(GolfError::Checkpoint(format!("unsupported format version {version}")));
    }
    let dims = PolicyDims {
        vocab: r.u32()? as usize,
        d_emb: r.u32()? as usize,
        d_h: r.u32()? as usize,
    };
    Ok(Header { version, dims })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(GolfError::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| GolfError::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
