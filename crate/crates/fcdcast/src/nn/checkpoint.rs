//! Parameter checkpoint container (`FCW1`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "FCW1"
//! u32  meta_len,  meta JSON (model config, iteration, optimizer settings)
//! u32  n_entries
//! per entry:
//!   u16 name_len, name (UTF-8)
//!   u8  ndim, ndim x u32 dims
//!   prod(dims) x f64 payload
//! ```
//!
//! Entries carry the weight tensors plus batch-norm running statistics and
//! Adam moments, so training can resume exactly where it stopped. Writes go
//! through a temp file and rename so a crash never leaves a torn checkpoint.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FCW1";

#[derive(Debug, Clone)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl CheckpointEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        let expected: usize = shape.iter().product();
        assert_eq!(expected, data.len(), "entry shape/payload mismatch");
        CheckpointEntry {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        CheckpointEntry::new(name, vec![1], vec![value])
    }
}

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub meta: String,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn entry(&self, name: &str) -> Result<&CheckpointEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::format(format!("checkpoint is missing entry '{name}'")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.entry(name)?.data[0])
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        std::fs::create_dir_all(dir)?;
        let tmp = path.with_extension("fcw.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(MAGIC)?;
            let meta = self.meta.as_bytes();
            w.write_u32::<LittleEndian>(meta.len() as u32)?;
            w.write_all(meta)?;
            w.write_u32::<LittleEndian>(self.entries.len() as u32)?;
            for e in &self.entries {
                let name = e.name.as_bytes();
                w.write_u16::<LittleEndian>(name.len() as u16)?;
                w.write_all(name)?;
                w.write_u8(e.shape.len() as u8)?;
                for &d in &e.shape {
                    w.write_u32::<LittleEndian>(d as u32)?;
                }
                for &v in &e.data {
                    w.write_f64::<LittleEndian>(v)?;
                }
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::structure(format!(
                "{}: bad checkpoint magic {:?}",
                path.display(),
                magic
            )));
        }
        let meta_len = r.read_u32::<LittleEndian>()? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        r.read_exact(&mut meta_bytes)?;
        let meta = String::from_utf8(meta_bytes)
            .map_err(|_| Error::format("checkpoint meta is not UTF-8".to_string()))?;
        let n = r.read_u32::<LittleEndian>()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = r.read_u16::<LittleEndian>()? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::format("checkpoint entry name is not UTF-8".to_string()))?;
            let ndim = r.read_u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.read_u32::<LittleEndian>()? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(r.read_f64::<LittleEndian>()?);
            }
            entries.push(CheckpointEntry { name, shape, data });
        }
        Ok(Checkpoint {
            meta,
            entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fcw");
        let ckpt = Checkpoint {
            meta: r#"{"arch":"fnn1"}"#.to_string(),
            entries: vec![
                CheckpointEntry::new("w0", vec![2, 3], vec![1.0, -2.5, 0.0, 3.5, 4.0, 1e-9]),
                CheckpointEntry::scalar("eta", 0.004),
            ],
        };
        ckpt.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(back.meta, ckpt.meta);
        assert_eq!(back.entries.len(), 2);
        assert_eq!(back.entry("w0").unwrap().shape, vec![2, 3]);
        assert_eq!(back.entry("w0").unwrap().data, ckpt.entries[0].data);
        assert_eq!(back.scalar("eta").unwrap(), 0.004);
    }

    #[test]
    fn bad_magic_is_a_structural_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.fcw");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(
            Checkpoint::read(&path),
            Err(Error::Structure(_))
        ));
    }
}
