//! Class-balanced N-shot evaluation over several sampling seeds.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::LabeledVectors;
use super::probe::{knn_classify, linear_probe, ProbeConfig};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;
pub const RESULTS_HEADER: &str = "task,method,shots,seed,accuracy";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Linear(ProbeConfig),
    Knn { k: usize },
}

impl Method {
    pub fn linear() -> Self {
        Method::Linear(ProbeConfig::default())
    }

    pub fn knn() -> Self {
        Method::Knn { k: DEFAULT_K }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Linear(_) => "linear",
            Method::Knn { .. } => "knn",
        }
    }

    pub fn run(&self, train: &LabeledVectors, test: &LabeledVectors) -> Result<f64> {
        match self {
            Method::Linear(cfg) => linear_probe(train, test, cfg),
            Method::Knn { k } => knn_classify(train, test, (*k).min(train.len())),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "probe" => Ok(Method::linear()),
            "knn" => Ok(Method::knn()),
            _ => Err(Error::InvalidArgument(format!("unknown method '{s}' (linear|knn)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotProtocol {
    pub shots: usize,
    pub seeds: Vec<u64>,
}

impl ShotProtocol {
    /// Seeds `0..count`.
    pub fn new(shots: usize, count: usize) -> Self {
        Self {
            shots,
            seeds: (0..count as u64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FewShotResult {
    pub shots: usize,
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for one seed).
    pub std: f64,
}

/// `shots` indices per class, drawn without replacement, sorted.
pub fn sample_shots(pool: &LabeledVectors, shots: usize, seed: u64, class_names: &[String]) -> Result<Vec<usize>> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be at least 1".into()));
    }
    let groups = pool.by_class();
    let deficient: Vec<String> = groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.len() < shots)
        .map(|(c, g)| {
            let name = class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
            format!("{name} ({})", g.len())
        })
        .collect();
    if !deficient.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{shots}-shot sampling needs {shots} examples per class; short: {}",
            deficient.join(", ")
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(shots * groups.len());
    for g in &groups {
        out.extend(sample(&mut rng, g.len(), shots).into_iter().map(|i| g[i]));
    }
    out.sort_unstable();
    Ok(out)
}

pub fn few_shot_eval(
    pool: &LabeledVectors,
    test: &LabeledVectors,
    protocol: &ShotProtocol,
    method: &Method,
    class_names: &[String],
) -> Result<FewShotResult> {
    if protocol.seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let mut per_seed = Vec::with_capacity(protocol.seeds.len());
    for &seed in &protocol.seeds {
        let idx = sample_shots(pool, protocol.shots, seed, class_names)?;
        let acc = method.run(&pool.subset(&idx), test)?;
        per_seed.push((seed, acc));
    }
    let n = per_seed.len() as f64;
    let mean = per_seed.iter().map(|p| p.1).sum::<f64>() / n;
    let std = if per_seed.len() > 1 {
        (per_seed.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(FewShotResult {
        shots: protocol.shots,
        per_seed,
        mean,
        std,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub task: String,
    pub method: String,
    pub shots: usize,
    pub seed: u64,
    pub accuracy: f64,
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let f = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "{RESULTS_HEADER}").map_err(|e| Error::io(ctx(), e))?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.task, r.method, r.shots, r.seed, r.accuracy).map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}
