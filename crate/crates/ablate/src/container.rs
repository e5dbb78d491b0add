//! Single-file model container.
//!
//! Layout: the 8-byte magic `ABLATEv1`, a little-endian `u32` manifest
//! length, the UTF-8 JSON manifest, the parameter blob (little-endian `f32`,
//! row-major), and a trailing little-endian `u64` FNV-1a checksum of the blob.

use std::fs;
use std::path::Path;

use ablate_core::rng::fnv1a64;
use ablate_core::{Architecture, LayerParams, Network, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ABLATEv1";

/// One named parameter tensor within the blob. Offsets and lengths are bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub architecture: Architecture,
    pub params: Vec<ParamEntry>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn to_bytes(network: &Network) -> Result<Vec<u8>> {
    let mut blob = Vec::with_capacity(network.parameter_count() * 4);
    let mut params = Vec::new();
    for (layer, p) in network.param_layers() {
        for (suffix, t) in [("W", &p.weights), ("b", &p.biases)] {
            params.push(ParamEntry {
                name: format!("{}_{}", layer.name, suffix),
                shape: t.shape().to_vec(),
                offset: blob.len(),
                length: t.len() * 4,
            });
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let manifest = Manifest { architecture: network.architecture().clone(), params };
    let json = serde_json::to_vec(&manifest)?;
    let json_len = u32::try_from(json.len()).map_err(|_| format_err("manifest exceeds 4 GiB"))?;
    let mut out = Vec::with_capacity(8 + 4 + json.len() + blob.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    out.extend_from_slice(&fnv1a64(&blob).to_le_bytes());
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(format_err("bad magic, not an ABLATEv1 container"));
    }
    let len_bytes = bytes.get(8..12).ok_or_else(|| format_err("truncated before manifest length"))?;
    let json_len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
    let json_end = 12usize
        .checked_add(json_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| format_err(format!("manifest length {} runs past end of file", json_len)))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[12..json_end])?;
    if bytes.len() < json_end + 8 {
        return Err(format_err("truncated, checksum missing"));
    }
    let blob = &bytes[json_end..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let actual = fnv1a64(blob);
    if stored != actual {
        return Err(Error::Checksum { stored, actual });
    }

    let expected = manifest.architecture.param_shapes()?;
    if manifest.params.len() != 2 * expected.len() {
        return Err(format_err(format!(
            "manifest lists {} parameter tensors, architecture needs {}",
            manifest.params.len(),
            2 * expected.len()
        )));
    }
    check_tiling(&manifest.params, blob.len())?;
    let mut params = Vec::with_capacity(expected.len());
    for ((i, wshape, bshape), entries) in expected.into_iter().zip(manifest.params.chunks(2)) {
        let layer = &manifest.architecture.layers[i].name;
        let weights = read_tensor(blob, &entries[0], &format!("{}_W", layer), &wshape)?;
        let biases = read_tensor(blob, &entries[1], &format!("{}_b", layer), &bshape)?;
        params.push(LayerParams { weights, biases });
    }
    Ok(Network::from_parts(manifest.architecture, params)?)
}

/// Entries must cover the blob exactly once, in any order.
fn check_tiling(entries: &[ParamEntry], blob_len: usize) -> Result<()> {
    let mut spans: Vec<(usize, usize, &str)> = entries.iter().map(|e| (e.offset, e.length, e.name.as_str())).collect();
    spans.sort_unstable();
    let mut cursor = 0usize;
    for (offset, length, name) in spans {
        if offset.checked_add(length).map_or(true, |end| end > blob_len) {
            return Err(format_err(format!(
                "parameter `{}` at offset {} (+{}) runs past end of {}-byte blob",
                name, offset, length, blob_len
            )));
        }
        if offset != cursor {
            return Err(format_err(format!(
                "parameter `{}` at offset {} leaves a gap or overlap at byte {}",
                name, offset, cursor
            )));
        }
        cursor = offset + length;
    }
    if cursor != blob_len {
        return Err(format_err(format!("parameters span {} bytes, blob holds {}", cursor, blob_len)));
    }
    Ok(())
}

fn read_tensor(blob: &[u8], entry: &ParamEntry, name: &str, shape: &[usize]) -> Result<Tensor> {
    if entry.name != name {
        return Err(format_err(format!("expected parameter `{}`, manifest has `{}`", name, entry.name)));
    }
    if entry.shape != shape {
        return Err(format_err(format!(
            "parameter `{}` declared with shape {:?}, architecture implies {:?}",
            name, entry.shape, shape
        )));
    }
    let count: usize = shape.iter().product();
    if entry.length != count * 4 {
        return Err(format_err(format!(
            "parameter `{}` declares {} bytes, shape needs {}",
            name,
            entry.length,
            count * 4
        )));
    }
    // bounds were established by check_tiling
    let bytes = &blob[entry.offset..entry.offset + entry.length];
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Tensor::new(shape.to_vec(), data)?)
}

pub fn save(network: &Network, path: &Path) -> Result<()> {
    let bytes = to_bytes(network)?;
    fs::write(path, bytes).map_err(|e| Error::write(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
    from_bytes(&bytes)
}
