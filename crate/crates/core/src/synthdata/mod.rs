//! Labelled synthetic multi-antenna corpora.
//!
//! Every `(waveform, AoA, replica)` cell is generated independently from its
//! own derived seed: modulate → steer onto a half-wavelength ULA → common
//! phase / CFO and per-antenna AWGN → window → unit-max normalize.

pub mod channel;
pub mod dataset;
pub mod waveform;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use channel::{apply_channel, apply_impairments, apply_steering, ChannelConfig, Impairments};
pub use dataset::{
    read_dataset, write_dataset, Dataset, DatasetHeader, LabelNames, Task, DATA_FILE, HEADER_FILE, LABELS_FILE,
};
pub use waveform::{modulate, WaveformClass};

use crate::error::{Error, Result};
use crate::grid::{segment_recording, unit_max_normalize, IqRecording, IqSample, Labels};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_DIR: &str = "train";
pub const TEST_DIR: &str = "test";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDatasetSpec {
    pub waveforms: Vec<WaveformClass>,
    pub aoa_classes: usize,
    /// Samples per `(waveform, AoA)` cell.
    pub replicas: usize,
    pub window: usize,
    pub sps: usize,
    pub rolloff: f64,
    pub channel: ChannelConfig,
    pub seed: u64,
    /// Fraction of replicas (by index) assigned to the train split.
    pub train_fraction: f64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            waveforms: WaveformClass::ALL.to_vec(),
            aoa_classes: 19,
            replicas: 10,
            window: 256,
            sps: waveform::DEFAULT_SPS,
            rolloff: waveform::DEFAULT_ROLLOFF,
            channel: ChannelConfig::default(),
            seed: 0,
            train_fraction: 0.8,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.waveforms.is_empty() {
            return Err(Error::InvalidArgument("at least one waveform class is required".into()));
        }
        let mut seen = self.waveforms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.waveforms.len() {
            return Err(Error::InvalidArgument("waveform classes must be distinct".into()));
        }
        if self.aoa_classes == 0 || self.replicas == 0 {
            return Err(Error::InvalidArgument("AoA classes and replicas must be at least 1".into()));
        }
        if self.sps == 0 || self.window < self.sps {
            return Err(Error::InvalidArgument(format!(
                "window {} shorter than one symbol ({} samples)",
                self.window, self.sps
            )));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::InvalidArgument(format!(
                "train fraction {} outside [0, 1]",
                self.train_fraction
            )));
        }
        self.channel.validate()
    }

    /// Class angles in degrees, evenly spaced over `[-90, 90]` inclusive.
    pub fn aoa_grid(&self) -> Vec<f64> {
        aoa_grid(self.aoa_classes)
    }

    /// Replicas `0..n` go to train, the rest to test.
    pub fn train_replicas(&self) -> usize {
        let r = self.replicas;
        let n = (self.train_fraction * r as f64).round() as usize;
        if self.train_fraction > 0.0 && self.train_fraction < 1.0 && r >= 2 {
            n.clamp(1, r - 1)
        } else {
            n.min(r)
        }
    }

    pub fn label_names(&self) -> LabelNames {
        LabelNames {
            modulation: self.waveforms.iter().map(|w| w.name().to_string()).collect(),
            aoa: self.aoa_grid().iter().map(|a| format!("{a}deg")).collect(),
        }
    }

    pub fn total_samples(&self) -> usize {
        self.waveforms.len() * self.aoa_classes * self.replicas
    }
}

pub fn aoa_grid(k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..k).map(|i| -90.0 + 180.0 * i as f64 / (k - 1) as f64).collect(),
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one `(waveform, AoA, replica)` cell.
pub fn cell_seed(seed: u64, waveform: usize, aoa: usize, replica: usize) -> u64 {
    let mut h = splitmix64(seed);
    for v in [waveform, aoa, replica] {
        h = splitmix64(h ^ v as u64);
    }
    h
}

/// Generates a single labelled window.
pub fn generate_cell(spec: &SyntheticDatasetSpec, waveform: usize, aoa: usize, replica: usize) -> Result<IqSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(spec.seed, waveform, aoa, replica));
    let class = spec.waveforms[waveform];
    let angle = spec.aoa_grid()[aoa];
    let bb = modulate(class, spec.window, spec.sps, spec.rolloff, &mut rng)?;
    let steered = apply_steering(&bb, angle, spec.channel.antennas)?;
    let rx = apply_channel(&steered, &spec.channel, &mut rng)?;
    let streams: Vec<Vec<(f32, f32)>> = rx
        .iter()
        .map(|a| a.iter().map(|v| (v.re as f32, v.im as f32)).collect())
        .collect();
    let labels = Labels {
        modulation: Some(waveform as u16),
        aoa: Some(aoa as u16),
    };
    let rec = IqRecording::from_antenna_streams(&streams, 1.0, labels)?;
    let window = segment_recording(&rec, spec.window, spec.window)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Numerical("generated window is all zero".into()))?;
    unit_max_normalize(&window)
}

/// Train and test samples, ordered by `(waveform, AoA, replica)`.
pub fn generate_corpus(spec: &SyntheticDatasetSpec) -> Result<(Vec<IqSample>, Vec<IqSample>)> {
    spec.validate()?;
    let n_train = spec.train_replicas();
    let cells: Vec<(usize, usize, usize)> = (0..spec.waveforms.len())
        .flat_map(|w| (0..spec.aoa_classes).flat_map(move |a| (0..spec.replicas).map(move |r| (w, a, r))))
        .collect();
    let samples = cells
        .par_iter()
        .map(|&(w, a, r)| generate_cell(spec, w, a, r).map(|s| (r < n_train, s)))
        .collect::<Result<Vec<_>>>()?;
    let (train, test): (Vec<_>, Vec<_>) = samples.into_iter().partition(|(is_train, _)| *is_train);
    Ok((
        train.into_iter().map(|(_, s)| s).collect(),
        test.into_iter().map(|(_, s)| s).collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub count: usize,
    pub modulation_counts: BTreeMap<String, usize>,
    pub aoa_counts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildManifest {
    pub total: usize,
    pub train: SplitSummary,
    pub test: SplitSummary,
    pub label_names: LabelNames,
}

fn summarize(samples: &[IqSample], names: &LabelNames) -> SplitSummary {
    let mut modulation_counts: BTreeMap<String, usize> = names.modulation.iter().map(|n| (n.clone(), 0)).collect();
    let mut aoa_counts: BTreeMap<String, usize> = names.aoa.iter().map(|n| (n.clone(), 0)).collect();
    for s in samples {
        if let Some(m) = s.labels.modulation {
            *modulation_counts.get_mut(&names.modulation[m as usize]).expect("known class") += 1;
        }
        if let Some(a) = s.labels.aoa {
            *aoa_counts.get_mut(&names.aoa[a as usize]).expect("known class") += 1;
        }
    }
    SplitSummary {
        count: samples.len(),
        modulation_counts,
        aoa_counts,
    }
}

/// Writes `out/train`, `out/test` (when non-empty) and `out/manifest.json`.
pub fn build_dataset(spec: &SyntheticDatasetSpec, out: &Path) -> Result<BuildManifest> {
    let (train, test) = generate_corpus(spec)?;
    let names = spec.label_names();
    let manifest = BuildManifest {
        total: train.len() + test.len(),
        train: summarize(&train, &names),
        test: summarize(&test, &names),
        label_names: names.clone(),
    };
    for (dir, samples) in [(TRAIN_DIR, train), (TEST_DIR, test)] {
        if !samples.is_empty() {
            write_dataset(&out.join(dir), &Dataset::new(samples, names.clone())?)?;
        }
    }
    let p = out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("encoding manifest", e))?;
    fs::write(&p, json + "\n").map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
    Ok(manifest)
}

/// Conventional AoA estimate from the phase of `Σ_t x₁ x̄₀`, snapped to the grid.
///
/// `±90°` produce identical array responses on a half-wavelength ULA, so
/// those two classes are only separable by chance.
pub fn estimate_aoa_class(sample: &IqSample, grid: &[f64]) -> usize {
    let t = sample.window();
    let (mut re, mut im) = (0.0f64, 0.0f64);
    for k in 0..t {
        let (i0, q0) = (sample.at(0, 0, k) as f64, sample.at(1, 0, k) as f64);
        let (i1, q1) = (sample.at(0, 1, k) as f64, sample.at(1, 1, k) as f64);
        re += i1 * i0 + q1 * q0;
        im += q1 * i0 - i1 * q0;
    }
    let s = (im.atan2(re) / std::f64::consts::PI).clamp(-1.0, 1.0);
    let angle = s.asin().to_degrees();
    grid.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - angle).abs().total_cmp(&(b.1 - angle).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Normalized envelope variance `var(|x|²) / mean(|x|²)²` on antenna 0.
pub fn envelope_variance(sample: &IqSample) -> f64 {
    let p: Vec<f64> = (0..sample.window())
        .map(|k| {
            let (i, q) = (sample.at(0, 0, k) as f64, sample.at(1, 0, k) as f64);
            i * i + q * q
        })
        .collect();
    let m = p.iter().sum::<f64>() / p.len() as f64;
    p.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / p.len() as f64 / (m * m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            waveforms: vec![WaveformClass::Bpsk, WaveformClass::Tone],
            aoa_classes: 3,
            replicas: 4,
            window: 64,
            seed: 5,
            train_fraction: 0.75,
            ..Default::default()
        }
    }

    #[test]
    fn default_corpus_size() {
        assert_eq!(SyntheticDatasetSpec::default().total_samples(), 1330);
        let g = aoa_grid(19);
        assert_eq!(g.len(), 19);
        assert_eq!(g[0], -90.0);
        assert_eq!(g[18], 90.0);
        assert!((g[1] - g[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn corpus_counts_split_and_normalization() {
        let spec = small_spec();
        let (train, test) = generate_corpus(&spec).unwrap();
        assert_eq!(train.len(), 2 * 3 * 3);
        assert_eq!(test.len(), 2 * 3);
        for s in train.iter().chain(&test) {
            assert_eq!(s.max_abs(), 1.0);
            assert_eq!((s.antennas(), s.window()), (4, 64));
        }
    }

    #[test]
    fn build_is_deterministic_and_splits_disjoint() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let m = build_dataset(&spec, a.path()).unwrap();
        build_dataset(&spec, b.path()).unwrap();
        for f in ["train/data.bin", "train/labels.bin", "test/data.bin", "manifest.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        assert_eq!(m.total, 24);
        assert!(m.train.modulation_counts.values().all(|&c| c == 9));
        let tr = read_dataset(&a.path().join(TRAIN_DIR)).unwrap();
        let te = read_dataset(&a.path().join(TEST_DIR)).unwrap();
        for s in &te.samples {
            assert!(tr.samples.iter().all(|t| t.data() != s.data()));
        }
    }

    #[test]
    fn seeds_differ_per_cell() {
        let mut seen = std::collections::HashSet::new();
        for w in 0..7 {
            for a in 0..19 {
                for r in 0..10 {
                    assert!(seen.insert(cell_seed(1, w, a, r)));
                }
            }
        }
    }

    fn clean_spec(snr: f64) -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            replicas: 6,
            channel: ChannelConfig {
                snr_db: (snr, snr),
                ..ChannelConfig::default()
            },
            seed: 11,
            train_fraction: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn aoa_recoverable_at_20_db() {
        let spec = clean_spec(20.0);
        let grid = spec.aoa_grid();
        let (samples, _) = generate_corpus(&spec).unwrap();
        let last = grid.len() - 1;
        let mut strict = 0;
        let mut alias_aware = 0;
        for s in &samples {
            let truth = s.labels.aoa.unwrap() as usize;
            let est = estimate_aoa_class(s, &grid);
            strict += (est == truth) as usize;
            let endfire = |c: usize| c == 0 || c == last;
            alias_aware += (est == truth || (endfire(est) && endfire(truth))) as usize;
        }
        let n = samples.len() as f64;
        // the two endfire classes share one array response
        assert!(strict as f64 / n >= 17.0 / 19.0, "strict {}", strict as f64 / n);
        assert!(alias_aware as f64 / n >= 0.95, "alias-aware {}", alias_aware as f64 / n);
    }

    #[test]
    fn steering_phase_consistent_at_20_db() {
        let spec = clean_spec(20.0);
        let grid = spec.aoa_grid();
        let (samples, _) = generate_corpus(&spec).unwrap();
        for s in &samples {
            let want = std::f64::consts::PI * grid[s.labels.aoa.unwrap() as usize].to_radians().sin();
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for k in 0..s.window() {
                let (i0, q0) = (s.at(0, 0, k) as f64, s.at(1, 0, k) as f64);
                let (i1, q1) = (s.at(0, 1, k) as f64, s.at(1, 1, k) as f64);
                re += i1 * i0 + q1 * q0;
                im += q1 * i0 - i1 * q0;
            }
            let got = im.atan2(re);
            let d = (got - want + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
            assert!(d.abs() < 0.05, "aoa {}: phase error {d}", grid[s.labels.aoa.unwrap() as usize]);
        }
    }

    #[test]
    fn tone_vs_qam64_separable_by_moments() {
        let spec = SyntheticDatasetSpec {
            waveforms: vec![WaveformClass::Tone, WaveformClass::Qam64],
            ..clean_spec(20.0)
        };
        let (samples, _) = generate_corpus(&spec).unwrap();
        let correct = samples
            .iter()
            .filter(|s| {
                let is_tone = envelope_variance(s) < 0.15;
                is_tone == (s.labels.modulation == Some(0))
            })
            .count();
        assert!(correct as f64 / samples.len() as f64 >= 0.95);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(SyntheticDatasetSpec { replicas: 0, ..small_spec() }.validate().is_err());
        assert!(SyntheticDatasetSpec { waveforms: vec![], ..small_spec() }.validate().is_err());
        assert!(SyntheticDatasetSpec { train_fraction: 1.5, ..small_spec() }.validate().is_err());
    }
}
