//! `MFCK1` checkpoint container.
//!
//! All integers are little-endian u64 and all reals little-endian f64:
//!
//! ```text
//! "MFCK1"
//! metadata length, metadata (UTF-8 JSON)
//! iteration
//! parameter count
//! per parameter: name length, name, trainable (u8), rows, cols, values
//! has_adam (u8)
//! if present: step, beta1, beta2, eps, then per parameter m values, v values
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::optim::AdamState;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"MFCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub iteration: u64,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s<'a>(out: &mut Vec<u8>, vals: impl IntoIterator<Item = &'a f64>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u64(&mut out, self.metadata.len() as u64);
        out.extend_from_slice(self.metadata.as_bytes());
        put_u64(&mut out, self.iteration);
        put_u64(&mut out, self.params.len() as u64);
        for p in self.params.iter() {
            put_u64(&mut out, p.name.len() as u64);
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.trainable as u8);
            put_u64(&mut out, p.value.nrows() as u64);
            put_u64(&mut out, p.value.ncols() as u64);
            put_f64s(&mut out, p.value.iter());
        }
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                put_u64(&mut out, a.step);
                put_f64s(&mut out, [a.beta1, a.beta2, a.eps].iter());
                for (m, v) in a.m.iter().zip(&a.v) {
                    put_f64s(&mut out, m.iter());
                    put_f64s(&mut out, v.iter());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, at: 0 };
        if r.take(5)? != MAGIC {
            return Err(Error::Format("missing MFCK1 header".into()));
        }
        let len = r.u64()? as usize;
        let metadata = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let iteration = r.u64()?;
        let count = r.u64()? as usize;
        let mut params = ParamStore::new();
        let mut shapes = Vec::new();
        for _ in 0..count {
            let len = r.u64()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let trainable = r.take(1)?[0] != 0;
            let (rows, cols) = (r.u64()? as usize, r.u64()? as usize);
            let value = r.matrix(rows, cols)?;
            params
                .add(name, value, trainable)
                .map_err(|e| Error::Format(e.to_string()))?;
            shapes.push((rows, cols));
        }
        let adam = match r.take(1)?[0] {
            0 => None,
            _ => {
                let step = r.u64()?;
                let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
                let mut m = Vec::new();
                let mut v = Vec::new();
                for &(rows, cols) in &shapes {
                    m.push(r.matrix(rows, cols)?);
                    v.push(r.matrix(rows, cols)?);
                }
                Some(AdamState { beta1, beta2, eps, step, m, v })
            }
        };
        if r.at != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            metadata,
            iteration,
            params,
            adam,
        })
    }

    /// Writes through a temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("tensor shape overflows".into()))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let vals = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), vals).expect("length matches shape"))
    }
}
