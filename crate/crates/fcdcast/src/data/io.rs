//! Panel persistence: the `FCD1` binary cache and the CSV ingest formats.
//!
//! Cache layout, little-endian:
//!
//! ```text
//! magic "FCD1"
//! u32 n_edges, u32 n_slots, u32 slots_per_day
//! n_edges * n_slots  f64 values, edge-major
//! n_edges * n_slots  u8 mask (1 = valid)
//! ```
//!
//! Free-flow speeds travel in a sidecar CSV (`edge_id,ffs_kph`), not in the
//! cache; loading a cache without one assumes the default 65 kph on every
//! edge, which only matters for kph-denominated reporting.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::Deserialize;

use crate::error::{Error, Result};

use super::{RawObservation, SpeedPanel, DEFAULT_FREE_FLOW_KPH};

const MAGIC: &[u8; 4] = b"FCD1";

pub fn write_panel(panel: &SpeedPanel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(panel.n_edges() as u32)?;
    w.write_u32::<LittleEndian>(panel.n_slots() as u32)?;
    w.write_u32::<LittleEndian>(panel.slots_per_day() as u32)?;
    for &v in panel.values() {
        w.write_f64::<LittleEndian>(v)?;
    }
    for &m in panel.valid_mask() {
        w.write_u8(u8::from(m))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_panel(path: &Path) -> Result<SpeedPanel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::structure(format!(
            "{}: bad panel magic {:?}",
            path.display(),
            magic
        )));
    }
    let n_edges = r.read_u32::<LittleEndian>()? as usize;
    let n_slots = r.read_u32::<LittleEndian>()? as usize;
    let slots_per_day = r.read_u32::<LittleEndian>()? as usize;
    let len = n_edges * n_slots;
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        values.push(r.read_f64::<LittleEndian>()?);
    }
    let mut mask_bytes = vec![0u8; len];
    r.read_exact(&mut mask_bytes)?;
    let valid = mask_bytes.iter().map(|&b| b != 0).collect();
    SpeedPanel::from_parts(
        values,
        valid,
        n_edges,
        n_slots,
        slots_per_day,
        vec![DEFAULT_FREE_FLOW_KPH; n_edges],
    )
}

#[derive(Debug, Deserialize)]
struct SpeedRow {
    edge_id: usize,
    slot: usize,
    speed_kph: f64,
}

#[derive(Debug, Deserialize)]
struct FfsRow {
    edge_id: usize,
    ffs_kph: f64,
}

/// Read raw observations from a `edge_id,slot,speed_kph` CSV.
pub fn read_speeds_csv(path: &Path) -> Result<Vec<RawObservation>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let row: SpeedRow = row.map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        out.push(RawObservation {
            edge_id: row.edge_id,
            slot: row.slot,
            speed_kph: row.speed_kph,
        });
    }
    Ok(out)
}

/// Read per-edge free-flow speeds from a `edge_id,ffs_kph` CSV. Every edge
/// id in `0..max_edge_id` must be present exactly once.
pub fn read_ffs_csv(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<FfsRow> = Vec::new();
    for row in reader.deserialize() {
        rows.push(row.map_err(|e| Error::format(format!("{}: {e}", path.display())))?);
    }
    if rows.is_empty() {
        return Err(Error::validation(format!(
            "{}: free-flow file is empty",
            path.display()
        )));
    }
    let n = rows.iter().map(|r| r.edge_id).max().unwrap() + 1;
    let mut ffs = vec![f64::NAN; n];
    for row in rows {
        if !ffs[row.edge_id].is_nan() {
            return Err(Error::validation(format!(
                "duplicate free-flow entry for edge {}",
                row.edge_id
            )));
        }
        ffs[row.edge_id] = row.ffs_kph;
    }
    if let Some(missing) = ffs.iter().position(|v| v.is_nan()) {
        return Err(Error::validation(format!(
            "free-flow file has no entry for edge {missing}"
        )));
    }
    Ok(ffs)
}
