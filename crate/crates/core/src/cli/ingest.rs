//! Raw interleaved little-endian `f32` I/Q captures → internal dataset.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::{IngestParams, Sidecar};
use super::CliError;
use crate::grid::{segment_recording, unit_max_normalize, IqRecording, Labels};
use crate::synthdata::{Dataset, LabelNames};

pub fn read_sidecar(path: &Path) -> Result<Sidecar, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("reading {}: {e}", path.display())))?;
    let meta: Sidecar = serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if meta.antennas == 0 {
        return Err(CliError::data(format!("{}: antennas must be at least 1", path.display())));
    }
    if !(meta.sample_rate > 0.0 && meta.sample_rate.is_finite()) {
        return Err(CliError::data(format!("{}: invalid sample_rate {}", path.display(), meta.sample_rate)));
    }
    Ok(meta)
}

fn read_f32s(path: &Path) -> Result<Vec<f32>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("reading {}: {e}", path.display())))?;
    if bytes.len() % 8 != 0 {
        return Err(CliError::data(format!(
            "{} is truncated: {} bytes is not a whole number of complex f32 samples",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

fn pairs(v: &[f32]) -> Vec<(f32, f32)> {
    v.chunks_exact(2).map(|p| (p[0], p[1])).collect()
}

/// Per-antenna `(i, q)` streams from one back-to-back file or one file per antenna.
pub fn read_streams(inputs: &[PathBuf], antennas: usize) -> Result<Vec<Vec<(f32, f32)>>, CliError> {
    match inputs {
        [] => Err(CliError::usage("no input files given")),
        [one] => {
            let v = read_f32s(one)?;
            let complex = v.len() / 2;
            if complex % antennas != 0 {
                return Err(CliError::data(format!(
                    "{} holds {complex} complex samples, not divisible across {antennas} antennas (truncated?)",
                    one.display()
                )));
            }
            let n = complex / antennas;
            Ok(v.chunks_exact(2 * n.max(1)).take(antennas).map(pairs).collect())
        }
        many => {
            if many.len() != antennas {
                return Err(CliError::data(format!(
                    "{} input files for {antennas} antennas",
                    many.len()
                )));
            }
            let streams = many.iter().map(|p| read_f32s(p).map(|v| pairs(&v))).collect::<Result<Vec<_>, _>>()?;
            let n = streams[0].len();
            if let Some((a, s)) = streams.iter().enumerate().find(|(_, s)| s.len() != n) {
                return Err(CliError::data(format!(
                    "inconsistent antenna lengths: {} has {} samples, {} has {n}",
                    many[a].display(),
                    s.len(),
                    many[0].display()
                )));
            }
            Ok(streams)
        }
    }
}

fn names_for(meta: &Sidecar, labels: &Labels) -> LabelNames {
    if let Some(n) = &meta.label_names {
        return n.clone();
    }
    let gen = |l: Option<u16>| l.map_or(Vec::new(), |k| (0..=k).map(|c| format!("class{c}")).collect());
    LabelNames {
        modulation: gen(labels.modulation),
        aoa: gen(labels.aoa),
    }
}

/// Segments, normalizes and (for single-antenna input) tiles a capture.
pub fn ingest(params: &IngestParams) -> Result<Dataset, CliError> {
    let meta = read_sidecar(&params.meta)?;
    if params.window == 0 || params.stride == 0 {
        return Err(CliError::usage("window and stride must be at least 1"));
    }
    let mut streams = read_streams(&params.inputs, meta.antennas)?;
    let mut provenance = None;
    if let Some(t) = params.tile_antennas {
        if meta.antennas != 1 {
            return Err(CliError::usage(format!(
                "--tile-antennas applies to single-antenna input, this capture has {}",
                meta.antennas
            )));
        }
        if t == 0 {
            return Err(CliError::usage("--tile-antennas must be at least 1"));
        }
        streams = vec![streams[0].clone(); t];
        provenance = Some(format!("tiled:1->{t}"));
    }
    let labels = meta.labels.map_or(Labels::default(), |l| Labels {
        modulation: l.modulation,
        aoa: l.aoa,
    });
    let rec = IqRecording::from_antenna_streams(&streams, meta.sample_rate, labels)?;
    let samples = segment_recording(&rec, params.window, params.stride)?
        .iter()
        .map(unit_max_normalize)
        .collect::<crate::Result<Vec<_>>>()?;
    let mut ds = Dataset::new(samples, names_for(&meta, &labels))?;
    ds.header.provenance = provenance;
    Ok(ds)
}
