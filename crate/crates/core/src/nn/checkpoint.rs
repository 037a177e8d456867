//! Binary checkpoint format.
//!
//! ```text
//! "CCF1"                      magic
//! u32 little-endian           manifest length in bytes
//! manifest (UTF-8 lines):
//!   version 1
//!   meta <key> <value>        zero or more
//!   tensor <name> <shape> f32 <offset> <nbytes>
//! blob                        concatenated little-endian f32 values
//! ```
//!
//! `<shape>` is the dimensions joined by `x` (e.g. `403x128`); offsets are
//! relative to the start of the blob.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CCF1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore<f32>,
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    nbytes: usize,
}

pub fn encode_checkpoint(
    params: &ParamStore<f32>,
    meta: &BTreeMap<String, String>,
) -> Result<Vec<u8>> {
    let mut manifest = format!("version {VERSION}\n");
    for (k, v) in meta {
        if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(Error::Checkpoint(format!("invalid metadata entry {k:?}")));
        }
        manifest.push_str(&format!("meta {k} {v}\n"));
    }
    let mut offset = 0usize;
    for (name, t) in params.iter() {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("invalid tensor name {name:?}")));
        }
        let shape = t
            .shape()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("x");
        let nbytes = t.len() * 4;
        manifest.push_str(&format!("tensor {name} {shape} f32 {offset} {nbytes}\n"));
        offset += nbytes;
    }
    let mut out = Vec::with_capacity(8 + manifest.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let manifest_end = 8usize
        .checked_add(mlen)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated manifest".into()))?;
    let manifest = std::str::from_utf8(&bytes[8..manifest_end])
        .map_err(|_| Error::Checkpoint("corrupt manifest: not UTF-8".into()))?;
    let blob = &bytes[manifest_end..];

    let mut lines = manifest.lines();
    match lines
        .next()
        .map(|l| l.split_whitespace().collect::<Vec<_>>())
    {
        Some(parts) if parts.len() == 2 && parts[0] == "version" => {
            let v: u32 = parts[1]
                .parse()
                .map_err(|_| Error::Checkpoint("corrupt manifest: bad version".into()))?;
            if v != VERSION {
                return Err(Error::Checkpoint(format!(
                    "version mismatch: file has {v}, expected {VERSION}"
                )));
            }
        }
        _ => {
            return Err(Error::Checkpoint(
                "corrupt manifest: missing version".into(),
            ))
        }
    }

    let mut meta = BTreeMap::new();
    let mut entries = Vec::new();
    for line in lines {
        let corrupt = || Error::Checkpoint(format!("corrupt manifest line {line:?}"));
        let (kind, rest) = line.split_once(' ').ok_or_else(corrupt)?;
        match kind {
            "meta" => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
            }
            "tensor" => {
                let parts: Vec<&str> = rest.split(' ').collect();
                if parts.len() != 5 || parts[2] != "f32" {
                    return Err(corrupt());
                }
                let shape = parts[1]
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| corrupt())?;
                let offset: usize = parts[3].parse().map_err(|_| corrupt())?;
                let nbytes: usize = parts[4].parse().map_err(|_| corrupt())?;
                if nbytes != shape.iter().product::<usize>() * 4 {
                    return Err(corrupt());
                }
                entries.push(Entry {
                    name: parts[0].to_string(),
                    shape,
                    offset,
                    nbytes,
                });
            }
            _ => return Err(corrupt()),
        }
    }

    let mut spans: Vec<(usize, usize)> = entries
        .iter()
        .map(|e| (e.offset, e.offset + e.nbytes))
        .collect();
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[0].1 > w[1].0 {
            return Err(Error::Checkpoint("overlapping tensors in manifest".into()));
        }
    }
    let needed = spans.last().map_or(0, |s| s.1);
    if blob.len() < needed {
        return Err(Error::Checkpoint(format!(
            "truncated blob: {} bytes present, {} required",
            blob.len(),
            needed
        )));
    }

    let mut params = ParamStore::new();
    for e in entries {
        let data = blob[e.offset..e.offset + e.nbytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params
            .insert(e.name, Tensor::new(e.shape, data)?)
            .map_err(|err| Error::Checkpoint(err.to_string()))?;
    }
    Ok(Checkpoint { meta, params })
}

pub fn save_checkpoint(
    path: &Path,
    params: &ParamStore<f32>,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let bytes = encode_checkpoint(params, meta)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
