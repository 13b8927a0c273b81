//! Versioned little-endian binary format for [`CsfmStore`].
//!
//! ```text
//! "CSFM"  u32 version  u32 grid_count
//! per grid:
//!   u32 id  f64[4] bounds (x0, y0, x1, y1)  u32 M
//!   f64[2M] mean  f64[2M²] covariance (row-major)
//!   u32 component_count
//!   per component: f64 weight  f64[2M] mean  f64[2M²] covariance
//!   u32 sample_count
//!   per sample: f64 x  f64 y  f64 z  f64[2M] channel
//! ```
//!
//! Complex values are stored as interleaved (real, imaginary) pairs.

use std::path::Path;

use num_complex::Complex64;

use super::{CsfmGrid, CsfmStore, StoredSample};
use crate::error::{Error, FormatError, Result};
use crate::linalg::{CMatrix, CVector};
use crate::prior::{GmmComponent, GmmPrior};
use crate::scene::UeLocation;

pub const MAGIC: [u8; 4] = *b"CSFM";
pub const FORMAT_VERSION: u32 = 1;

/// Serializes a store to bytes.
pub fn encode(store: &CsfmStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, store.grids.len() as u32);
    for g in &store.grids {
        put_u32(&mut out, g.grid_id);
        for b in g.bounds {
            put_f64(&mut out, b);
        }
        put_u32(&mut out, g.dim() as u32);
        put_vector(&mut out, &g.mean);
        put_matrix(&mut out, &g.cov);
        put_u32(&mut out, g.gmm.components().len() as u32);
        for c in g.gmm.components() {
            put_f64(&mut out, c.weight);
            put_vector(&mut out, &c.mean);
            put_matrix(&mut out, &c.cov);
        }
        put_u32(&mut out, g.samples.len() as u32);
        for s in &g.samples {
            put_f64(&mut out, s.location.x);
            put_f64(&mut out, s.location.y);
            put_f64(&mut out, s.location.z);
            put_vector(&mut out, &s.h);
        }
    }
    out
}

pub fn save_csfm(store: &CsfmStore, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

pub fn load_csfm(path: &Path) -> Result<CsfmStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_vector(out: &mut Vec<u8>, v: &CVector) {
    for z in v.iter() {
        put_f64(out, z.re);
        put_f64(out, z.im);
    }
}

fn put_matrix(out: &mut Vec<u8>, a: &CMatrix) {
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            put_f64(out, a[(i, j)].re);
            put_f64(out, a[(i, j)].im);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated { what }),
        }
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, FormatError> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn complex(&mut self, what: &'static str) -> Result<Complex64, FormatError> {
        Ok(Complex64::new(self.f64(what)?, self.f64(what)?))
    }

    fn vector(&mut self, m: usize, what: &'static str) -> Result<CVector, FormatError> {
        let mut v = CVector::zeros(m);
        for z in v.iter_mut() {
            *z = self.complex(what)?;
        }
        Ok(v)
    }

    fn matrix(&mut self, m: usize, what: &'static str) -> Result<CMatrix, FormatError> {
        let mut a = CMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                a[(i, j)] = self.complex(what)?;
            }
        }
        Ok(a)
    }

    /// Rejects counts that cannot fit in the remaining bytes before allocating.
    fn check_room(&self, count: usize, unit: usize, what: &'static str) -> Result<(), FormatError> {
        match count.checked_mul(unit) {
            Some(n) if n <= self.bytes.len() - self.pos => Ok(()),
            _ => Err(FormatError::Truncated { what }),
        }
    }
}

/// Parses a store from bytes.
pub fn decode(bytes: &[u8]) -> Result<CsfmStore> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(magic);
        return Err(FormatError::MagicMismatch { found }.into());
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        }
        .into());
    }
    let n_grids = r.u32("grid count")? as usize;
    r.check_room(n_grids, 4 + 32 + 4, "grid table")?;
    let mut grids = Vec::with_capacity(n_grids);
    for _ in 0..n_grids {
        let grid_id = r.u32("grid id")?;
        let mut bounds = [0.0; 4];
        for b in bounds.iter_mut() {
            *b = r.f64("grid bounds")?;
        }
        let m = r.u32("dimension")? as usize;
        r.check_room(m, 16, "grid mean")?;
        let mean = r.vector(m, "grid mean")?;
        r.check_room(m * m, 16, "grid covariance")?;
        let cov = r.matrix(m, "grid covariance")?;
        let n_comp = r.u32("component count")? as usize;
        r.check_room(n_comp, 8 + 16 * m * (m + 1), "mixture components")?;
        let mut comps = Vec::with_capacity(n_comp);
        for _ in 0..n_comp {
            comps.push(GmmComponent {
                weight: r.f64("component weight")?,
                mean: r.vector(m, "component mean")?,
                cov: r.matrix(m, "component covariance")?,
            });
        }
        let gmm = GmmPrior::new(comps)
            .map_err(|e| FormatError::Corrupt(format!("grid {grid_id} mixture: {e}")))?;
        let n_samples = r.u32("sample count")? as usize;
        r.check_room(n_samples, 24 + 16 * m, "samples")?;
        let mut samples = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let location = UeLocation::new(r.f64("sample")?, r.f64("sample")?, r.f64("sample")?);
            let h = r.vector(m, "sample channel")?;
            samples.push(StoredSample { location, h });
        }
        grids.push(CsfmGrid {
            grid_id,
            bounds,
            mean,
            cov,
            gmm,
            samples,
        });
    }
    if r.pos != bytes.len() {
        return Err(FormatError::Corrupt(format!(
            "{} trailing bytes after the last grid",
            bytes.len() - r.pos
        ))
        .into());
    }
    Ok(CsfmStore { grids })
}
