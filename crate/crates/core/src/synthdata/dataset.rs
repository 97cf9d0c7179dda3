//! On-disk dataset: `header.json` + `data.bin` + `labels.bin`.
//!
//! `data.bin` holds each sample as little-endian `f32`, channel-major (all I
//! rows, then all Q rows), row-major inside a channel. `labels.bin` holds two
//! little-endian `u16` per sample (modulation, AoA); `0xFFFF` = unlabeled.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{IqSample, Labels, IQ_CHANNELS};

pub const HEADER_FILE: &str = "header.json";
pub const DATA_FILE: &str = "data.bin";
pub const LABELS_FILE: &str = "labels.bin";
pub const DATASET_VERSION: u32 = 1;
pub const UNLABELED: u16 = 0xFFFF;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelNames {
    pub modulation: Vec<String>,
    pub aoa: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub count: usize,
    pub channels: usize,
    pub antennas: usize,
    pub window: usize,
    pub label_names: LabelNames,
    /// Set when single-antenna input was tiled across rows (`"tiled:1->4"`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<IqSample>,
}

impl Dataset {
    /// Wraps samples that all share one `(antennas, window)` shape.
    pub fn new(samples: Vec<IqSample>, label_names: LabelNames) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InsufficientData("dataset has no samples".into()))?;
        let (a, t) = (first.antennas(), first.window());
        if let Some(s) = samples.iter().find(|s| (s.antennas(), s.window()) != (a, t)) {
            return Err(Error::Shape(format!(
                "dataset mixes {a}x{t} and {}x{} samples",
                s.antennas(),
                s.window()
            )));
        }
        let header = DatasetHeader {
            version: DATASET_VERSION,
            count: samples.len(),
            channels: IQ_CHANNELS,
            antennas: a,
            window: t,
            label_names,
            provenance: None,
        };
        let ds = Self { header, samples };
        ds.check_labels(Path::new("<memory>"))?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn check_labels(&self, origin: &Path) -> Result<()> {
        let nm = self.header.label_names.modulation.len();
        let na = self.header.label_names.aoa.len();
        for (i, s) in self.samples.iter().enumerate() {
            if matches!(s.labels.modulation, Some(m) if m as usize >= nm) {
                return Err(Error::format(origin, format!("sample {i}: modulation label out of range 0..{nm}")));
            }
            if matches!(s.labels.aoa, Some(a) if a as usize >= na) {
                return Err(Error::format(origin, format!("sample {i}: AoA label out of range 0..{na}")));
            }
        }
        Ok(())
    }

    /// Samples whose label for `task` is present, with that label.
    pub fn labelled(&self, task: Task) -> Vec<(&IqSample, u16)> {
        self.samples
            .iter()
            .filter_map(|s| task.label(&s.labels).map(|l| (s, l)))
            .collect()
    }

    pub fn class_names(&self, task: Task) -> &[String] {
        match task {
            Task::Modulation => &self.header.label_names.modulation,
            Task::Aoa => &self.header.label_names.aoa,
        }
    }
}

/// Which label a downstream task reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Modulation,
    Aoa,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Modulation, Task::Aoa];

    pub fn name(self) -> &'static str {
        match self {
            Task::Modulation => "modulation",
            Task::Aoa => "aoa",
        }
    }

    pub fn label(self, l: &Labels) -> Option<u16> {
        match self {
            Task::Modulation => l.modulation,
            Task::Aoa => l.aoa,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "modulation" | "mod" => Ok(Task::Modulation),
            "aoa" => Ok(Task::Aoa),
            _ => Err(Error::InvalidArgument(format!("unknown task '{s}' (modulation|aoa)"))),
        }
    }
}

fn encode_label(l: Option<u16>) -> u16 {
    l.unwrap_or(UNLABELED)
}

fn decode_label(v: u16) -> Option<u16> {
    (v != UNLABELED).then_some(v)
}

/// Returns `(header.json text, data.bin, labels.bin)`.
pub fn encode_dataset(ds: &Dataset) -> Result<(String, Vec<u8>, Vec<u8>)> {
    let header = serde_json::to_string_pretty(&ds.header).map_err(|e| Error::json("encoding dataset header", e))?;
    let per = IQ_CHANNELS * ds.header.antennas * ds.header.window;
    let mut data = Vec::with_capacity(ds.len() * per * 4);
    let mut labels = Vec::with_capacity(ds.len() * 4);
    for s in &ds.samples {
        for v in s.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        labels.extend_from_slice(&encode_label(s.labels.modulation).to_le_bytes());
        labels.extend_from_slice(&encode_label(s.labels.aoa).to_le_bytes());
    }
    Ok((header + "\n", data, labels))
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let (header, data, labels) = encode_dataset(ds)?;
    for (name, bytes) in [
        (HEADER_FILE, header.as_bytes()),
        (DATA_FILE, &data[..]),
        (LABELS_FILE, &labels[..]),
    ] {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let hp = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(format!("reading {}", hp.display()), e))?;
    let header: DatasetHeader =
        serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", hp.display()), e))?;
    if header.version != DATASET_VERSION {
        return Err(Error::format(&hp, format!("unsupported dataset version {}", header.version)));
    }
    if header.channels != IQ_CHANNELS {
        return Err(Error::format(&hp, format!("expected {IQ_CHANNELS} channels, header says {}", header.channels)));
    }
    if header.antennas == 0 || header.window == 0 {
        return Err(Error::format(&hp, "antennas and window must be positive"));
    }
    let dp = dir.join(DATA_FILE);
    let data = fs::read(&dp).map_err(|e| Error::io(format!("reading {}", dp.display()), e))?;
    let lp = dir.join(LABELS_FILE);
    let labels = fs::read(&lp).map_err(|e| Error::io(format!("reading {}", lp.display()), e))?;
    let per = IQ_CHANNELS * header.antennas * header.window;
    if data.len() != header.count * per * 4 {
        return Err(Error::format(
            &dp,
            format!("{} bytes, expected {} for {} samples", data.len(), header.count * per * 4, header.count),
        ));
    }
    if labels.len() != header.count * 4 {
        return Err(Error::format(&lp, format!("{} bytes, expected {}", labels.len(), header.count * 4)));
    }
    let mut samples = Vec::with_capacity(header.count);
    for (chunk, lab) in data.chunks_exact(per * 4).zip(labels.chunks_exact(4)) {
        let values: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
            .collect();
        let l = Labels {
            modulation: decode_label(u16::from_le_bytes([lab[0], lab[1]])),
            aoa: decode_label(u16::from_le_bytes([lab[2], lab[3]])),
        };
        let s = IqSample::new(header.antennas, header.window, values, l)
            .map_err(|e| Error::format(&dp, e.to_string()))?;
        samples.push(s);
    }
    let ds = Dataset { header, samples };
    ds.check_labels(dir)?;
    Ok(ds)
}
