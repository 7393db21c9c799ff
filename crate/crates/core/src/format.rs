//! Binary model file.
//!
//! ```text
//! "EPTM"                      4 bytes
//! version = 1                 u32
//! rows, cols, C, K, R, L      u32 each
//! lambda                      f64
//! yiq mu      rows*cols*C     f64, row-major, channels interleaved
//! yiq phi     rows*cols*C     f64
//! desc mu     L*8R²           f64, one row per mapping
//! desc phi    L*8R²           f64
//! log prior   L               f64
//! ```
//!
//! Everything is little-endian. Loading checks the magic, the version, the
//! declared sizes against the byte count, and the model invariants.

use std::path::Path;

use crate::dsift::descriptor_len;
use crate::epitome::{DescriptorEpitome, DualEpitome, Epitome, MappingPrior};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EPTM";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 7 + 8;

pub fn encode(model: &DualEpitome) -> Vec<u8> {
    let epi = &model.yiq;
    let de = &model.dsift;
    let n_f64 = epi.mu().len() * 2 + de.mu().len() * 2 + model.prior.len();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n_f64);
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        epi.rows() as u32,
        epi.cols() as u32,
        epi.channels() as u32,
        model.patch_size as u32,
        model.grid as u32,
        epi.mappings() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&model.lambda.to_le_bytes());
    for block in [epi.mu(), epi.phi(), de.mu(), de.phi(), model.prior.log_pi()] {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptModel("file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::CorruptModel("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<DualEpitome> {
    let corrupt = |m: String| Error::CorruptModel(m);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(corrupt("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let [rows, cols, ch, k, grid, l] = [(); 6].map(|_| r.u32().map(|v| v as usize));
    let (rows, cols, ch, k, grid, l) = (rows?, cols?, ch?, k?, grid?, l?);
    let lambda = r.f64()?;
    if rows == 0 || cols == 0 || ch != 3 || k == 0 || grid == 0 {
        return Err(corrupt(format!(
            "bad dimensions rows={rows} cols={cols} channels={ch} K={k} R={grid}"
        )));
    }
    if rows.checked_mul(cols) != Some(l) {
        return Err(corrupt(format!("L = {l} but epitome is {rows}x{cols}")));
    }
    let dim = descriptor_len(grid);
    let cells = l * ch;
    let expected = HEADER_LEN as u128 + 8 * (2 * cells as u128 + 2 * (l * dim) as u128 + l as u128);
    if bytes.len() as u128 != expected {
        return Err(corrupt(format!(
            "file is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mu = r.f64s(cells)?;
    let phi = r.f64s(cells)?;
    let mu_d = r.f64s(l * dim)?;
    let phi_d = r.f64s(l * dim)?;
    let log_pi = r.f64s(l)?;
    let wrap = |e: Error| match e {
        Error::InvalidInput(m) => Error::CorruptModel(m),
        other => other,
    };
    DualEpitome::new(
        Epitome::new(rows, cols, ch, mu, phi).map_err(wrap)?,
        DescriptorEpitome::new(l, dim, mu_d, phi_d).map_err(wrap)?,
        MappingPrior::from_log(log_pi).map_err(wrap)?,
        k,
        grid,
        lambda,
    )
    .map_err(wrap)
}

pub fn save(model: &DualEpitome, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<DualEpitome> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
