//! Sample cache (`FCS1`): a shapes header followed by per-sample `f64`
//! payloads.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic "FCS1"
//! u8  mode (0 = full, 1 = reduced)
//! u32 n_samples, u32 input_len, u32 n_edges_out, u32 horizon, u32 pre_len
//! per sample:
//!   u32 anchor_edge, u32 anchor_slot
//!   input_len x f64, (n_edges_out*horizon) x f64, pre_len x f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

use super::Sample;

const MAGIC: &[u8; 4] = b"FCS1";

pub fn write_samples(samples: &[Sample], mode: &str, path: &Path) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::validation("no samples to write"));
    }
    let first = &samples[0];
    let mode_byte = match mode {
        "full" => 0u8,
        "reduced" => 1u8,
        other => return Err(Error::config(format!("unknown mode '{other}'"))),
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u8(mode_byte)?;
    w.write_u32::<LittleEndian>(samples.len() as u32)?;
    w.write_u32::<LittleEndian>(first.input.len() as u32)?;
    w.write_u32::<LittleEndian>(first.n_edges_out as u32)?;
    w.write_u32::<LittleEndian>(first.horizon as u32)?;
    w.write_u32::<LittleEndian>(first.pre_anchor.len() as u32)?;
    for s in samples {
        w.write_u32::<LittleEndian>(s.anchor_edge as u32)?;
        w.write_u32::<LittleEndian>(s.anchor_slot as u32)?;
        for &v in s.input.iter().chain(&s.target).chain(&s.pre_anchor) {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<(Vec<Sample>, String)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::structure(format!(
            "{}: bad sample-cache magic {:?}",
            path.display(),
            magic
        )));
    }
    let mode = match r.read_u8()? {
        0 => "full",
        1 => "reduced",
        other => {
            return Err(Error::structure(format!(
                "unknown sample-cache mode byte {other}"
            )))
        }
    };
    let n = r.read_u32::<LittleEndian>()? as usize;
    let input_len = r.read_u32::<LittleEndian>()? as usize;
    let n_edges_out = r.read_u32::<LittleEndian>()? as usize;
    let horizon = r.read_u32::<LittleEndian>()? as usize;
    let pre_len = r.read_u32::<LittleEndian>()? as usize;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let anchor_edge = r.read_u32::<LittleEndian>()? as usize;
        let anchor_slot = r.read_u32::<LittleEndian>()? as usize;
        let mut read_block = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                out.push(r.read_f64::<LittleEndian>()?);
            }
            Ok(out)
        };
        let input = read_block(input_len)?;
        let target = read_block(n_edges_out * horizon)?;
        let pre_anchor = read_block(pre_len)?;
        samples.push(Sample {
            anchor_edge,
            anchor_slot,
            input,
            target,
            n_edges_out,
            horizon,
            pre_anchor,
        });
    }
    Ok((samples, mode.to_string()))
}
