//! Checkpoint format: one binary blob with a versioned header and an
//! ordered table of named float-64 arrays, little-endian throughout so
//! files are identical across platforms.
//!
//! Layout:
//!   magic  8 bytes  "TBRUSH01"
//!   count  u32
//!   entry* count times:
//!     name_len u16, name bytes (UTF-8)
//!     ndim u8, dims u32 * ndim
//!     values f64 * prod(dims)

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"TBRUSH01";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Entry {
    pub fn from_tensor(name: &str, t: &Tensor) -> Entry {
        Entry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.to_vec(),
        }
    }

    pub fn scalar(name: &str, value: f64) -> Entry {
        Entry { name: name.to_string(), shape: vec![1], data: vec![value] }
    }
}

pub fn save(path: &Path, entries: &[Entry]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        let name = e.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Checkpoint(format!("parameter name too long: {}", e.name)));
        }
        let numel: usize = e.shape.iter().product();
        if numel != e.data.len() {
            return Err(Error::Checkpoint(format!(
                "entry {} shape {:?} does not match {} values",
                e.name,
                e.shape,
                e.data.len()
            )));
        }
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[e.shape.len() as u8])?;
        for &d in &e.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated at byte {}",
                path.display(),
                *pos
            )));
        }
        let out = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(out)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic; not a checkpoint file",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| Error::Checkpoint("non-UTF8 parameter name".into()))?
            .to_string();
        let ndim = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(Entry { name, shape, data });
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - pos
        )));
    }
    Ok(entries)
}

/// Copy loaded entries into an existing named parameter list, matching
/// by name and shape. Every parameter must be present.
pub fn restore_params(params: &[(String, Tensor)], entries: &[Entry]) -> Result<()> {
    for (name, tensor) in params {
        let entry = entries
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if entry.shape != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: checkpoint shape {:?} vs model shape {:?}",
                entry.shape,
                tensor.shape()
            )));
        }
        tensor.data_mut().copy_from_slice(&entry.data);
    }
    Ok(())
}

/// Find a scalar entry (for counters stored alongside parameters).
pub fn scalar_entry(entries: &[Entry], name: &str) -> Result<f64> {
    entries
        .iter()
        .find(|e| e.name == name)
        .filter(|e| e.data.len() == 1)
        .map(|e| e.data[0])
        .ok_or_else(|| Error::Checkpoint(format!("missing scalar entry {name}")))
}
