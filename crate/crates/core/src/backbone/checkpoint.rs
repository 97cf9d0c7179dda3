//! Encoder checkpoints: `manifest.json` + `params.bin`.
//!
//! `params.bin` is every tensor as raw little-endian `f32`, concatenated in
//! manifest order. The manifest records the architecture, the layer chain and
//! each tensor's name, shape and byte offset.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, EncoderArch};
use super::network::{Layer, LayerSpec, Sequential};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into `params.bin`.
    pub offset: usize,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub architecture: EncoderArch,
    pub stride: usize,
    pub latent_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub tensors: Vec<TensorEntry>,
    pub total_bytes: usize,
    /// FNV-1a 64 of `params.bin`, hex.
    pub checkpoint_id: String,
}

/// Loaded encoder with the id of the bytes it came from.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub encoder: Encoder<f32>,
    pub manifest: CheckpointManifest,
}

/// FNV-1a, 64 bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn slots(net: &mut Sequential<f32>) -> Vec<(String, Vec<usize>, &mut Vec<f32>)> {
    let mut out = Vec::new();
    for (i, layer) in net.layers.iter_mut().enumerate() {
        match layer {
            Layer::Conv(c) => out.push((
                format!("layers.{i}.weight"),
                vec![c.out_channels, c.in_channels, c.kernel.0, c.kernel.1],
                &mut c.weight.value,
            )),
            Layer::Depthwise(d) => out.push((
                format!("layers.{i}.weight"),
                vec![d.channels, 1, d.kernel.0, d.kernel.1],
                &mut d.weight.value,
            )),
            Layer::Pointwise(p) => out.push((
                format!("layers.{i}.weight"),
                vec![p.out_channels, p.in_channels, 1, 1],
                &mut p.weight.value,
            )),
            Layer::BatchNorm(b) => {
                let c = b.channels;
                out.push((format!("layers.{i}.gamma"), vec![c], &mut b.gamma.value));
                out.push((format!("layers.{i}.beta"), vec![c], &mut b.beta.value));
                out.push((format!("layers.{i}.running_mean"), vec![c], &mut b.running_mean));
                out.push((format!("layers.{i}.running_var"), vec![c], &mut b.running_var));
            }
            Layer::MaxPool(_) | Layer::Relu { .. } => {}
        }
    }
    out
}

/// Serializes an encoder to `(manifest, params.bin bytes)`.
pub fn encode_checkpoint(encoder: &Encoder<f32>) -> (CheckpointManifest, Vec<u8>) {
    let mut net = encoder.net.clone();
    let mut tensors = Vec::new();
    let mut bytes = Vec::new();
    for (name, shape, values) in slots(&mut net) {
        tensors.push(TensorEntry {
            name,
            shape,
            dtype: "f32".into(),
            offset: bytes.len(),
        });
        for v in values.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        architecture: encoder.arch.clone(),
        stride: encoder.stride(),
        latent_channels: encoder.latent_channels(),
        layers: encoder.layer_specs(),
        tensors,
        total_bytes: bytes.len(),
        checkpoint_id: format!("{:016x}", fnv1a64(&bytes)),
    };
    (manifest, bytes)
}

pub fn save_checkpoint(encoder: &Encoder<f32>, dir: &Path) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let (manifest, bytes) = encode_checkpoint(encoder);
    let mpath = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("encoding manifest", e))?;
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(format!("writing {}", mpath.display()), e))?;
    let ppath = dir.join(PARAMS_FILE);
    fs::write(&ppath, &bytes).map_err(|e| Error::io(format!("writing {}", ppath.display()), e))?;
    Ok(manifest)
}

/// Rebuilds an encoder from manifest + raw tensor bytes.
pub fn decode_checkpoint(manifest: &CheckpointManifest, bytes: &[u8], origin: &Path) -> Result<Encoder<f32>> {
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported checkpoint version {}", manifest.format_version),
        ));
    }
    if bytes.len() != manifest.total_bytes {
        return Err(Error::format(
            origin,
            format!(
                "params.bin has {} bytes, manifest expects {}",
                bytes.len(),
                manifest.total_bytes
            ),
        ));
    }
    let id = format!("{:016x}", fnv1a64(bytes));
    if id != manifest.checkpoint_id {
        return Err(Error::format(
            origin,
            format!("params.bin hash {id} does not match checkpoint_id {}", manifest.checkpoint_id),
        ));
    }
    // values are overwritten below; the seed only fixes allocation shapes
    let mut net = manifest
        .architecture
        .build::<f32>(&mut ChaCha8Rng::seed_from_u64(0))?;
    if net.specs() != manifest.layers {
        return Err(Error::format(
            origin,
            "layer chain does not match the recorded architecture",
        ));
    }
    let slots = slots(&mut net);
    if slots.len() != manifest.tensors.len() {
        return Err(Error::format(
            origin,
            format!(
                "manifest lists {} tensors, architecture has {}",
                manifest.tensors.len(),
                slots.len()
            ),
        ));
    }
    for ((name, shape, values), entry) in slots.into_iter().zip(&manifest.tensors) {
        if entry.name != name || entry.shape != shape || entry.dtype != "f32" {
            return Err(Error::format(
                origin,
                format!(
                    "tensor '{}' {:?} {} does not match expected '{name}' {shape:?} f32",
                    entry.name, entry.shape, entry.dtype
                ),
            ));
        }
        let end = entry.offset + 4 * entry.numel();
        let raw = bytes.get(entry.offset..end).ok_or_else(|| {
            Error::format(origin, format!("tensor '{name}' runs past end of params.bin"))
        })?;
        for (v, chunk) in values.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }
    Ok(Encoder {
        arch: manifest.architecture.clone(),
        net,
    })
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(format!("reading {}", mpath.display()), e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", mpath.display()), e))?;
    let ppath = dir.join(PARAMS_FILE);
    let bytes = fs::read(&ppath).map_err(|e| Error::io(format!("reading {}", ppath.display()), e))?;
    let encoder = decode_checkpoint(&manifest, &bytes, dir)?;
    Ok(Checkpoint { encoder, manifest })
}
