//! Frozen-encoder embeddings and their on-disk cache.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{global_average_pool, Encoder, Mode};
use crate::error::{Error, Result};
use crate::grid::{upsample_antennas, GridTensor, IqSample, Labels};
use crate::synthdata::{LabelNames, Task};

pub const EMBED_HEADER_FILE: &str = "header.json";
pub const EMBED_DATA_FILE: &str = "embeddings.bin";
pub const EMBED_LABELS_FILE: &str = "labels.bin";
pub const THREADS_ENV: &str = "WJEPA_THREADS";
/// Samples per forward batch during extraction.
pub const EXTRACT_BATCH: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    /// Row-major `N × D`.
    pub vectors: Vec<f32>,
    pub dim: usize,
    pub labels: Vec<Labels>,
    pub label_names: LabelNames,
    pub checkpoint_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingHeader {
    pub checkpoint_id: String,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "N")]
    pub count: usize,
    pub label_names: LabelNames,
}

/// Embeddings of one task: `x[i]` has label `y[i] < classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledVectors {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl LabeledVectors {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<usize>, classes: usize) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Shape(format!("{} vectors but {} labels", x.len(), y.len())));
        }
        if let Some(d) = x.first().map(Vec::len) {
            if x.iter().any(|v| v.len() != d) {
                return Err(Error::Shape("vectors differ in dimension".into()));
            }
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..{classes}")));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("embedding contains non-finite values".into()));
        }
        Ok(Self { x, y, classes })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Indices of each class, in order.
    pub fn by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes];
        for (i, &c) in self.y.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes,
        }
    }
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows labelled for `task`.
    pub fn task(&self, task: Task) -> Result<LabeledVectors> {
        let classes = match task {
            Task::Modulation => self.label_names.modulation.len(),
            Task::Aoa => self.label_names.aoa.len(),
        };
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = task.label(l) {
                x.push(self.row(i).iter().map(|&v| v as f64).collect());
                y.push(c as usize);
            }
        }
        LabeledVectors::new(x, y, classes)
    }
}

/// Worker count: `WJEPA_THREADS` if set, else all available cores.
pub fn worker_threads() -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(avail)
}

/// Grid → dense eval-mode forward → global average pool, for every sample.
pub fn extract_embeddings(
    encoder: &Encoder<f32>,
    samples: &[IqSample],
    upsample: usize,
    label_names: &LabelNames,
    checkpoint_id: &str,
) -> Result<EmbeddingSet> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples to embed".into()));
    }
    let first = upsample_antennas(&samples[0], upsample)?;
    encoder
        .latent_dims(first.rows(), first.cols())
        .map_err(|e| Error::Shape(format!("dataset incompatible with encoder: {e}")))?;
    if encoder.arch.in_channels != crate::grid::IQ_CHANNELS {
        return Err(Error::Shape(format!(
            "encoder expects {} input channels",
            encoder.arch.in_channels
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let chunks: Vec<Vec<Vec<f32>>> = pool.install(|| {
        samples
            .par_chunks(EXTRACT_BATCH)
            .map(|chunk| {
                let grids = chunk
                    .iter()
                    .map(|s| upsample_antennas(s, upsample))
                    .collect::<Result<Vec<GridTensor>>>()?;
                let x = GridTensor::batch::<f32>(&grids)?;
                let mut enc = encoder.clone();
                let h = enc.dense_forward(x, Mode::Eval)?;
                Ok(global_average_pool(&h))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let dim = encoder.latent_channels();
    let vectors: Vec<f32> = chunks.into_iter().flatten().flatten().collect();
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("encoder produced non-finite embeddings".into()));
    }
    Ok(EmbeddingSet {
        vectors,
        dim,
        labels: samples.iter().map(|s| s.labels).collect(),
        label_names: label_names.clone(),
        checkpoint_id: checkpoint_id.to_string(),
    })
}

pub fn write_embeddings(dir: &Path, set: &EmbeddingSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let header = EmbeddingHeader {
        checkpoint_id: set.checkpoint_id.clone(),
        dim: set.dim,
        count: set.len(),
        label_names: set.label_names.clone(),
    };
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::json("encoding embedding header", e))?;
    let mut data = Vec::with_capacity(set.vectors.len() * 4);
    for v in &set.vectors {
        data.extend_from_slice(&v.to_le_bytes());
    }
    let mut labels = Vec::with_capacity(set.len() * 4);
    for l in &set.labels {
        for v in [l.modulation, l.aoa] {
            labels.extend_from_slice(&v.unwrap_or(crate::synthdata::dataset::UNLABELED).to_le_bytes());
        }
    }
    for (name, bytes) in [
        (EMBED_HEADER_FILE, (json + "\n").into_bytes()),
        (EMBED_DATA_FILE, data),
        (EMBED_LABELS_FILE, labels),
    ] {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
    }
    Ok(())
}

pub fn read_embeddings(dir: &Path) -> Result<EmbeddingSet> {
    let hp = dir.join(EMBED_HEADER_FILE);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(format!("reading {}", hp.display()), e))?;
    let header: EmbeddingHeader =
        serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", hp.display()), e))?;
    let dp = dir.join(EMBED_DATA_FILE);
    let data = fs::read(&dp).map_err(|e| Error::io(format!("reading {}", dp.display()), e))?;
    if data.len() != header.count * header.dim * 4 {
        return Err(Error::format(
            &dp,
            format!("{} bytes, expected {}", data.len(), header.count * header.dim * 4),
        ));
    }
    let lp = dir.join(EMBED_LABELS_FILE);
    let raw = fs::read(&lp).map_err(|e| Error::io(format!("reading {}", lp.display()), e))?;
    if raw.len() != header.count * 4 {
        return Err(Error::format(&lp, format!("{} bytes, expected {}", raw.len(), header.count * 4)));
    }
    let vectors: Vec<f32> = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
        .collect();
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(&dp, "non-finite embedding values"));
    }
    let decode = |v: u16| (v != crate::synthdata::dataset::UNLABELED).then_some(v);
    let labels: Vec<Labels> = raw
        .chunks_exact(4)
        .map(|b| Labels {
            modulation: decode(u16::from_le_bytes([b[0], b[1]])),
            aoa: decode(u16::from_le_bytes([b[2], b[3]])),
        })
        .collect();
    let (nm, na) = (header.label_names.modulation.len(), header.label_names.aoa.len());
    if labels
        .iter()
        .any(|l| matches!(l.modulation, Some(m) if m as usize >= nm) || matches!(l.aoa, Some(a) if a as usize >= na))
    {
        return Err(Error::format(&lp, "label id out of range"));
    }
    Ok(EmbeddingSet {
        vectors,
        dim: header.dim,
        labels,
        label_names: header.label_names,
        checkpoint_id: header.checkpoint_id,
    })
}
