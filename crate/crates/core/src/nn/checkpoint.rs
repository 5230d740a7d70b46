//! Binary parameter checkpoints.
//!
//! Layout: the 8-byte magic `MCTSNET1`, then for every parameter in
//! lexicographic name order: name length (u64 LE), UTF-8 name bytes, rank
//! (u64 LE), each dimension (u64 LE), and the values as f64 LE.
//! The optimizer step counter travels as the reserved one-element entry
//! `meta.step`.

use std::io::{Read, Write};
use std::path::Path;

use super::{NnError, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"MCTSNET1";
pub const STEP_ENTRY: &str = "meta.step";

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> Result<(), NnError> {
    let mut entries: Vec<(&str, Tensor)> = store
        .indexed_names()
        .map(|(i, n)| (n, store.value(i).clone()))
        .collect();
    entries.push((STEP_ENTRY, Tensor::scalar(store.step() as f64)));
    entries.sort_by(|a, b| a.0.cmp(b.0));

    out.write_all(MAGIC)?;
    for (name, value) in entries {
        out.write_all(&(name.len() as u64).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(value.rank() as u64).to_le_bytes())?;
        for &d in value.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamStore, NnError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cursor = Cursor { bytes: &bytes, pos: 0 };
    if cursor.take(8)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let mut store = ParamStore::new();
    while cursor.pos < bytes.len() {
        let len = cursor.u64()? as usize;
        let name = std::str::from_utf8(cursor.take(len)?)
            .map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = cursor.u64()? as usize;
        if rank > 8 {
            return Err(NnError::Checkpoint(format!("`{name}` has implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| cursor.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count: usize = shape.iter().product();
        let raw = cursor.take(count * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(shape, data)
            .map_err(|e| NnError::Checkpoint(format!("`{name}`: {e}")))?;
        if name == STEP_ENTRY {
            store.set_step(tensor.data()[0] as u64);
        } else {
            store.insert(&name, tensor);
        }
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<(), NnError> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(store, std::io::BufWriter::new(file))
}

pub fn load(path: &Path) -> Result<ParamStore, NnError> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

/// Overwrites the values in `target` with those from a checkpointed store,
/// requiring identical names and shapes.
pub fn restore_into(target: &mut ParamStore, loaded: &ParamStore) -> Result<(), NnError> {
    for (i, name) in target.indexed_names().map(|(i, n)| (i, n.to_string())).collect::<Vec<_>>() {
        let Some(value) = loaded.get(&name) else {
            return Err(NnError::Checkpoint(format!("checkpoint has no parameter `{name}`")));
        };
        if value.shape() != target.value(i).shape() {
            return Err(NnError::Checkpoint(format!(
                "parameter `{name}`: model expects shape {:?}, checkpoint has {:?}",
                target.value(i).shape(),
                value.shape()
            )));
        }
        *target.value_mut(i) = value.clone();
    }
    if let Some(extra) = loaded.names().find(|n| !target.contains(n)) {
        return Err(NnError::Checkpoint(format!("checkpoint parameter `{extra}` is not part of the model")));
    }
    target.set_step(loaded.step());
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
