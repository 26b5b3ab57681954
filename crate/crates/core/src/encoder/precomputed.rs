//! Hidden states exported by an external encoder, keyed by record id.
//!
//! Layout (little endian): the 12-byte magic `OPFUSE-ENC-1`, a `u64` record
//! count, then per record: `u32` id length, id bytes (UTF-8), `u32` width d,
//! `u32` token count T, T pairs of `u32` byte offsets, `T*d` row-major `f64`
//! hidden values, `d` `f64` pooled values.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tokenize::ByteSpan;
use super::EncoderOutput;

pub const ENC_MAGIC: &[u8; 12] = b"OPFUSE-ENC-1";

#[derive(Clone, Debug, PartialEq)]
pub struct PrecomputedEntry {
    pub offsets: Vec<ByteSpan>,
    pub output: EncoderOutput,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrecomputedStore {
    order: Vec<String>,
    entries: HashMap<String, PrecomputedEntry>,
    width: Option<usize>,
}

impl PrecomputedStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, offsets: Vec<ByteSpan>, output: EncoderOutput) -> Result<()> {
        let id = id.into();
        let (t, d) = output.hidden.dims2("precomputed")?;
        if t != offsets.len() || output.pooled.len() != d {
            return Err(Error::InvalidArgument {
                op: "PrecomputedStore::insert",
                msg: format!(
                    "record {id}: {t} hidden rows, {} offsets, pooled width {} vs {d}",
                    offsets.len(),
                    output.pooled.len()
                ),
            });
        }
        match self.width {
            Some(w) if w != d => {
                return Err(Error::dim("PrecomputedStore::insert", &[w], &[d]));
            }
            _ => self.width = Some(d),
        }
        if self.entries.insert(id.clone(), PrecomputedEntry { offsets, output }).is_none() {
            self.order.push(id);
        }
        Ok(())
    }

    pub fn width(&self) -> Option<usize> {
        self.width
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Stored states for `id`, checked against the configured width.
    pub fn get(&self, id: &str, expected_width: usize) -> Result<&PrecomputedEntry> {
        let entry = self
            .entries
            .get(id)
            .ok_or_else(|| Error::MissingId(id.to_string()))?;
        let d = entry.output.pooled.len();
        if d != expected_width {
            return Err(Error::dim("load_precomputed", &[d], &[expected_width]));
        }
        Ok(entry)
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(ENC_MAGIC)?;
        w.write_all(&(self.order.len() as u64).to_le_bytes())?;
        for id in &self.order {
            let e = &self.entries[id];
            let d = e.output.pooled.len();
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            w.write_all(&(d as u32).to_le_bytes())?;
            w.write_all(&(e.offsets.len() as u32).to_le_bytes())?;
            for s in &e.offsets {
                w.write_all(&(s.start as u32).to_le_bytes())?;
                w.write_all(&(s.end as u32).to_le_bytes())?;
            }
            for v in e.output.hidden.data().iter().chain(e.output.pooled.data()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::Format {
            path: path.to_path_buf(),
            msg,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = bytes;
        let mut magic = [0u8; 12];
        r.read_exact(&mut magic).map_err(|_| "truncated header".to_string())?;
        if &magic != ENC_MAGIC {
            return Err("bad magic".into());
        }
        let count = read_u64(&mut r)?;
        let mut store = Self::new();
        for _ in 0..count {
            let id_len = read_u32(&mut r)? as usize;
            let mut id = vec![0u8; id_len];
            r.read_exact(&mut id).map_err(|_| "truncated id".to_string())?;
            let id = String::from_utf8(id).map_err(|_| "id is not UTF-8".to_string())?;
            let d = read_u32(&mut r)? as usize;
            let t = read_u32(&mut r)? as usize;
            let mut offsets = Vec::with_capacity(t);
            for _ in 0..t {
                let start = read_u32(&mut r)? as usize;
                let end = read_u32(&mut r)? as usize;
                offsets.push(ByteSpan { start, end });
            }
            let hidden = read_f64s(&mut r, t * d)?;
            let pooled = read_f64s(&mut r, d)?;
            let output = EncoderOutput {
                hidden: Tensor::new(vec![t, d], hidden).map_err(|e| e.to_string())?,
                pooled: Tensor::new(vec![1, d], pooled).map_err(|e| e.to_string())?,
            };
            store
                .insert(id, offsets, output)
                .map_err(|e| e.to_string())?;
        }
        if !r.is_empty() {
            return Err(format!("{} trailing bytes", r.len()));
        }
        Ok(store)
    }
}

fn read_u32(r: &mut &[u8]) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| "truncated record".to_string())?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> std::result::Result<u64, String> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| "truncated record".to_string())?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut &[u8], n: usize) -> std::result::Result<Vec<f64>, String> {
    if r.len() < n * 8 {
        return Err("truncated values".into());
    }
    let (head, tail) = r.split_at(n * 8);
    *r = tail;
    Ok(head
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}
