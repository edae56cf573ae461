//! NHF1 snapshots: a little-endian binary payload plus a JSON sidecar.
//!
//! Layout: b"NHF1", rank u32, dims u32 × rank, lengths f64 × rank,
//! component count u32, then each component's values (last axis fastest).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::FlowState;
use crate::forms::TwoForm;
use crate::grid::{PeriodicGrid, ScalarField};

pub const MAGIC: &[u8; 4] = b"NHF1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub scheme: String,
    pub t: f64,
    pub step: u64,
    pub dt: f64,
    pub config_digest: String,
    pub periods: [f64; 6],
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode(grid: &PeriodicGrid, components: &[&[f64]]) -> Vec<u8> {
    let n: usize = components.iter().map(|c| c.len()).sum();
    let mut out = Vec::with_capacity(16 + 12 * grid.rank() + 8 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(grid.rank() as u32).to_le_bytes());
    for &d in grid.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &l in grid.lengths() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out.extend_from_slice(&(components.len() as u32).to_le_bytes());
    for c in components {
        for v in *c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated at byte {} (need {n} more)", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<(PeriodicGrid, Vec<Vec<f64>>)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let rank = r.u32()? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Format(format!("implausible rank {rank}")));
    }
    let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let lengths = (0..rank).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let grid = PeriodicGrid::new(&dims, &lengths).map_err(|e| Error::Format(e.to_string()))?;
    let count = r.u32()? as usize;
    let n = grid.len();
    if (buf.len() - r.pos) != count * n * 8 {
        return Err(Error::Format(format!(
            "payload has {} bytes, header implies {}",
            buf.len() - r.pos,
            count * n * 8
        )));
    }
    let comps = (0..count).map(|_| (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()?;
    Ok((grid, comps))
}

pub fn write_two_form(rho: &TwoForm, path: &Path) -> Result<()> {
    let comps: Vec<&[f64]> = rho.c.iter().map(|f| f.values()).collect();
    std::fs::write(path, encode(rho.grid(), &comps))?;
    Ok(())
}

pub fn read_two_form(path: &Path) -> Result<TwoForm> {
    let (grid, comps) = decode(&std::fs::read(path)?)?;
    if grid.rank() != 4 || comps.len() != 6 {
        return Err(Error::Format(format!(
            "expected a rank-4 grid with 6 components, got rank {} with {}",
            grid.rank(),
            comps.len()
        )));
    }
    let fields: Vec<ScalarField> =
        comps.into_iter().map(|c| ScalarField::new(&grid, c)).collect::<Result<_>>().map_err(|e| Error::Format(e.to_string()))?;
    let c: [ScalarField; 6] = fields.try_into().expect("six components");
    TwoForm::new(c)
}

pub fn snapshot_write(state: &FlowState, path: &Path, meta: &SnapshotMeta) -> Result<()> {
    write_two_form(&state.rho, path)?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Reads the field and, when present, the sidecar's t, step and dt.
pub fn snapshot_read(path: &Path) -> Result<(FlowState, Option<SnapshotMeta>)> {
    let rho = read_two_form(path)?;
    let side = sidecar_path(path);
    let meta = if side.exists() {
        let text = std::fs::read_to_string(&side)?;
        Some(serde_json::from_str::<SnapshotMeta>(&text).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?)
    } else {
        None
    };
    let mut state = FlowState::new(rho);
    if let Some(m) = &meta {
        state.t = m.t;
        state.step = m.step;
        state.dt = m.dt;
    }
    Ok((state, meta))
}
