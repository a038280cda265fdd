//! Checkpoint container.
//!
//! Layout: the 8-byte magic `FFCKPT01`, a little-endian `u64` manifest length,
//! the manifest, then raw little-endian array bytes. The manifest is a `u32`
//! entry count followed by, per entry: `u16` name length, UTF-8 name, `u8`
//! dtype tag (0 f32, 1 f64, 2 u8, 3 u64), `u8` rank, one `u64` per extent and
//! the `u64` byte offset of the entry within the data section.

use std::path::Path;

use crate::error::{Error, Result};
use crate::real::{DType, Real};
use crate::tensor::DenseArray;

use super::{AdamConfig, AdamState, Model, TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FFCKPT01";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl Entry {
    pub fn array<R: Real>(name: impl Into<String>, a: &DenseArray<R>) -> Self {
        let mut bytes = Vec::with_capacity(a.len() * R::DTYPE.size());
        a.data().iter().for_each(|v| v.write_le(&mut bytes));
        Self {
            name: name.into(),
            dtype: R::DTYPE,
            shape: a.shape().to_vec(),
            bytes,
        }
    }

    pub fn u64(name: impl Into<String>, v: u64) -> Self {
        Self {
            name: name.into(),
            dtype: DType::U64,
            shape: vec![1],
            bytes: v.to_le_bytes().to_vec(),
        }
    }

    pub fn bytes(name: impl Into<String>, b: &[u8]) -> Self {
        Self {
            name: name.into(),
            dtype: DType::U8,
            shape: vec![b.len()],
            bytes: b.to_vec(),
        }
    }
}

fn format_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "checkpoint",
        offset,
        message: message.into(),
    }
}

pub fn encode_entries(entries: &[Entry]) -> Vec<u8> {
    let mut manifest = Vec::new();
    manifest.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for e in entries {
        manifest.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        manifest.extend_from_slice(e.name.as_bytes());
        manifest.push(e.dtype.tag());
        manifest.push(e.shape.len() as u8);
        for &d in &e.shape {
            manifest.extend_from_slice(&(d as u64).to_le_bytes());
        }
        manifest.extend_from_slice(&offset.to_le_bytes());
        offset += e.bytes.len() as u64;
    }
    let mut out = Vec::with_capacity(16 + manifest.len() + offset as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for e in entries {
        out.extend_from_slice(&e.bytes);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| format_error(self.pos, "truncated manifest"))?;
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_entries(bytes: &[u8]) -> Result<Vec<Entry>> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(format_error(0, "expected magic FFCKPT01"));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16usize
        .checked_add(manifest_len)
        .filter(|&s| s <= bytes.len())
        .ok_or_else(|| format_error(8, "manifest length exceeds file"))?;
    let mut cur = Cursor {
        bytes: &bytes[..data_start],
        pos: 16,
    };
    let count = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
        let name_at = cur.pos;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| format_error(name_at, "entry name is not UTF-8"))?
            .to_string();
        let tag_at = cur.pos;
        let tag = cur.take(1)?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| format_error(tag_at, format!("unknown dtype tag {tag}")))?;
        let rank = cur.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = cur.u64()? as usize;
        let len = shape.iter().product::<usize>() * dtype.size();
        let start = data_start + offset;
        let body = bytes
            .get(start..start + len)
            .ok_or_else(|| format_error(start, format!("data for '{name}' out of bounds")))?;
        entries.push(Entry {
            name,
            dtype,
            shape,
            bytes: body.to_vec(),
        });
    }
    Ok(entries)
}

fn find<'e>(entries: &'e [Entry], name: &str) -> Result<&'e Entry> {
    entries
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| format_error(0, format!("missing entry '{name}'")))
}

fn read_array<R: Real>(e: &Entry, target: &mut DenseArray<R>) -> Result<()> {
    if e.dtype != R::DTYPE {
        return Err(format_error(
            0,
            format!("'{}' stored as {:?}, expected {:?}", e.name, e.dtype, R::DTYPE),
        ));
    }
    if e.shape != target.shape() {
        return Err(Error::shape(
            e.name.clone(),
            format!("{:?}", target.shape()),
            format!("{:?}", e.shape),
        ));
    }
    let size = R::DTYPE.size();
    for (v, chunk) in target.data_mut().iter_mut().zip(e.bytes.chunks_exact(size)) {
        *v = R::read_le(chunk);
    }
    Ok(())
}

fn read_u64(entries: &[Entry], name: &str) -> Result<u64> {
    let e = find(entries, name)?;
    if e.dtype != DType::U64 || e.bytes.len() != 8 {
        return Err(format_error(0, format!("'{name}' is not a u64 scalar")));
    }
    Ok(u64::from_le_bytes(e.bytes[..8].try_into().expect("8 bytes")))
}

pub fn state_entries<R: Real>(state: &TrainState<R>) -> Vec<Entry> {
    let mut entries = vec![
        Entry::bytes("meta.config", state.config.to_text().as_bytes()),
        Entry::bytes("meta.config_digest", &state.config.digest()),
        Entry::u64("meta.iteration", state.iteration),
        Entry::u64("meta.adam_step", state.adam.step),
    ];
    let params = state.model.named_params();
    for (name, p) in &params {
        entries.push(Entry::array(name.clone(), *p));
    }
    for ((name, _), (m, v)) in params.iter().zip(state.adam.m.iter().zip(&state.adam.v)) {
        entries.push(Entry::array(format!("adam.m.{name}"), m));
        entries.push(Entry::array(format!("adam.v.{name}"), v));
    }
    entries
}

/// The stored training configuration, readable without knowing the precision.
pub fn checkpoint_config(bytes: &[u8]) -> Result<TrainConfig> {
    let entries = decode_entries(bytes)?;
    let text = std::str::from_utf8(&find(&entries, "meta.config")?.bytes)
        .map_err(|_| format_error(0, "configuration is not UTF-8"))?;
    TrainConfig::parse(text)
}

pub fn decode_state<R: Real>(bytes: &[u8]) -> Result<TrainState<R>> {
    let entries = decode_entries(bytes)?;
    let config = checkpoint_config(bytes)?;
    if find(&entries, "meta.config_digest")?.bytes != config.digest() {
        return Err(format_error(0, "configuration digest mismatch"));
    }
    let mut model = Model::<R>::new(&config, 0)?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    for (name, p) in model.named_params_mut() {
        read_array(find(&entries, &name)?, p)?;
    }
    let mut adam = AdamState::new(model.named_params().into_iter().map(|(_, p)| p), AdamConfig::default());
    for (i, name) in names.iter().enumerate() {
        read_array(find(&entries, &format!("adam.m.{name}"))?, &mut adam.m[i])?;
        read_array(find(&entries, &format!("adam.v.{name}"))?, &mut adam.v[i])?;
    }
    adam.step = read_u64(&entries, "meta.adam_step")?;
    Ok(TrainState {
        iteration: read_u64(&entries, "meta.iteration")?,
        config,
        model,
        adam,
    })
}

pub fn save_checkpoint<R: Real>(state: &TrainState<R>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_entries(&state_entries(state))).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<R: Real>(path: impl AsRef<Path>) -> Result<TrainState<R>> {
    let path = path.as_ref();
    decode_state(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
