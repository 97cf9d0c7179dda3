//! `iqjepa` subcommands: synth, pretrain, eval, mask-viz, ingest.
//!
//! Every flag is optional on top of `--config <json>`; the merged result is
//! validated and echoed as `config.json` next to the command's outputs.
//! Exit codes: 0 ok, 2 usage / config, 3 data / I/O, 4 numerical failure.

pub mod commands;
pub mod config;
pub mod ingest;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_eval, cmd_ingest, cmd_mask_viz, cmd_pretrain, cmd_synth, read_header, resolve_split};
pub use config::{
    load_config, EvalParams, IngestParams, Init, MaskVizParams, MethodChoice, PretrainParams, Run, RunConfig,
    Sidecar, SynthParams, CONFIG_FILE,
};

use crate::backbone::EncoderArch;
use crate::error::Error;
use crate::eval::{fewshot::DEFAULT_K, worker_threads, ProbeConfig};
use crate::grid::square_factor;
use crate::jepa::{Precision, TrainConfig};
use crate::masks::{Geometry, MaskSpec};
use crate::synthdata::{SyntheticDatasetSpec, WaveformClass, TRAIN_DIR};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::Mask(_) => EXIT_USAGE,
            Error::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "iqjepa", version, about = "Masked latent prediction pretraining for multi-antenna IQ")]
pub struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labelled synthetic corpus (train/ and test/ splits).
    Synth(SynthArgs),
    /// Pretrain an encoder on a dataset; writes a checkpoint and metrics.csv.
    Pretrain(PretrainArgs),
    /// Few-shot linear probe and k-NN evaluation of a frozen encoder.
    Eval(EvalArgs),
    /// Write one PGM per mask geometry at input resolution.
    MaskViz(MaskVizArgs),
    /// Convert raw interleaved f32 IQ plus a JSON sidecar into a dataset.
    Ingest(IngestArgs),
}

#[derive(Args, Debug, Default)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// A class count (first N of BPSK,QPSK,PSK8,QAM16,QAM64,FSK2,TONE) or a comma list.
    #[arg(long)]
    pub waveforms: Option<String>,
    #[arg(long)]
    pub aoa_classes: Option<usize>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub antennas: Option<usize>,
    /// `LO,HI` in dB, or one value for a fixed SNR.
    #[arg(long)]
    pub snr_db: Option<String>,
    #[arg(long)]
    pub noiseless: bool,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory, or a synth output directory (its train/ split is used).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<Geometry>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub mask_seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// wj-cnn or tiny.
    #[arg(long)]
    pub arch: Option<String>,
    /// f32 or f64.
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    /// Antenna upsampling factor (default: the one giving a square grid).
    #[arg(long)]
    pub upsample: Option<usize>,
    /// Write wall_ms = 0 so reruns produce byte-identical metrics.
    #[arg(long)]
    pub deterministic_timing: bool,
}

#[derive(Args, Debug, Default)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labelled pool dataset, or a synth output directory with train/ and test/.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Held-out dataset when --dataset has no test split.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub init: Option<Init>,
    /// Architecture for --init random.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub shots: Option<Vec<usize>>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<MethodChoice>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub upsample: Option<usize>,
    #[arg(long)]
    pub save_embeddings: bool,
}

#[derive(Args, Debug, Default)]
pub struct MaskVizArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub geometry: Option<Vec<Geometry>>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub antennas: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct IngestArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Raw capture(s); repeat for one file per antenna.
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
    /// JSON sidecar (default: first input with `.json` appended).
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Hop between windows (default: the window length).
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub tile_antennas: Option<usize>,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown precision '{s}' (f32 or f64)"))
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::usage(format!("missing required --{flag}")))
}

fn base<P>(config: &Option<PathBuf>, command: &str, pick: impl Fn(Run) -> Option<P>) -> Result<Option<P>, CliError> {
    match config {
        Some(path) => Ok(pick(load_config(path, command)?)),
        None => Ok(None),
    }
}

fn parse_waveforms(s: &str) -> Result<Vec<WaveformClass>, CliError> {
    if let Ok(n) = s.trim().parse::<usize>() {
        if n == 0 || n > WaveformClass::ALL.len() {
            return Err(CliError::usage(format!(
                "--waveforms {n}: expected 1..={}",
                WaveformClass::ALL.len()
            )));
        }
        return Ok(WaveformClass::ALL[..n].to_vec());
    }
    s.split(',')
        .map(|w| w.trim().parse::<WaveformClass>().map_err(|e| CliError::usage(e.to_string())))
        .collect()
}

pub fn resolve_synth(a: &SynthArgs) -> Result<SynthParams, CliError> {
    let b = base(&a.config, "synth", |r| match r {
        Run::Synth(p) => Some(p),
        _ => None,
    })?;
    let out = required(a.out.clone().or(b.as_ref().map(|p| p.out.clone())), "out")?;
    let mut spec = b.map_or_else(SyntheticDatasetSpec::default, |p| p.spec);
    if let Some(w) = &a.waveforms {
        spec.waveforms = parse_waveforms(w)?;
    }
    if let Some(v) = a.aoa_classes {
        spec.aoa_classes = v;
    }
    if let Some(v) = a.replicas {
        spec.replicas = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.window {
        spec.window = v;
    }
    if let Some(v) = a.antennas {
        spec.channel.antennas = v;
    }
    if let Some(s) = &a.snr_db {
        let v: Vec<f64> = s
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::usage(format!("--snr-db {s}: {e}")))?;
        spec.channel.snr_db = match v[..] {
            [x] => (x, x),
            [lo, hi] => (lo, hi),
            _ => return Err(CliError::usage(format!("--snr-db {s}: expected LO,HI"))),
        };
    }
    if a.noiseless {
        spec.channel.noise = false;
    }
    if let Some(v) = a.train_fraction {
        spec.train_fraction = v;
    }
    spec.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(SynthParams { out, spec })
}

pub fn resolve_pretrain(a: &PretrainArgs) -> Result<PretrainParams, CliError> {
    let b = base(&a.config, "pretrain", |r| match r {
        Run::Pretrain(p) => Some(p),
        _ => None,
    })?;
    let dataset = required(a.dataset.clone().or(b.as_ref().map(|p| p.dataset.clone())), "dataset")?;
    let out = required(a.out.clone().or(b.as_ref().map(|p| p.out.clone())), "out")?;
    let from_file = b.is_some();
    let mut t = b.map_or_else(TrainConfig::default, |p| p.train);
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.base_lr = v;
    }
    if let Some(v) = a.weight_decay {
        t.weight_decay = v;
    }
    if a.grad_clip.is_some() {
        t.grad_clip = a.grad_clip;
    }
    if let Some(v) = &a.arch {
        t.arch = EncoderArch::by_name(v).map_err(|e| CliError::usage(e.to_string()))?;
    }
    if let Some(v) = a.precision {
        t.precision = v;
    }
    if a.deterministic_timing {
        t.record_wall_time = false;
    }
    let header = read_header(&resolve_split(&dataset, TRAIN_DIR))?;
    if let Some(v) = a.upsample {
        t.upsample = v;
    } else if !from_file {
        t.upsample = square_factor(header.antennas, header.window)?;
    }
    if a.mask.is_some() || !from_file {
        let geometry = a.mask.unwrap_or(Geometry::Time);
        let s = t.arch.stride();
        let latent = (header.antennas * t.upsample / s, header.window / s);
        let seed = t.mask.seed;
        let fraction = t.mask.target_fraction;
        t.mask = MaskSpec::for_grid(geometry, latent, t.upsample / s)
            .with_fraction(fraction)
            .with_seed(seed);
    }
    if let Some(v) = a.fraction {
        t.mask.target_fraction = v;
    }
    if let Some(v) = a.mask_seed {
        t.mask.seed = v;
    }
    t.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(PretrainParams {
        dataset,
        out,
        train: t,
    })
}

pub fn resolve_eval(a: &EvalArgs) -> Result<EvalParams, CliError> {
    let b = base(&a.config, "eval", |r| match r {
        Run::Eval(p) => Some(p),
        _ => None,
    })?;
    let dataset = required(a.dataset.clone().or(b.as_ref().map(|p| p.dataset.clone())), "dataset")?;
    let out = required(a.out.clone().or(b.as_ref().map(|p| p.out.clone())), "out")?;
    let mut p = b.unwrap_or(EvalParams {
        dataset: dataset.clone(),
        test: None,
        checkpoint: None,
        init: Init::Checkpoint,
        arch: "wj-cnn".into(),
        init_seed: 0,
        out: out.clone(),
        shots: vec![1, 100, 500],
        seeds: 3,
        method: MethodChoice::Both,
        k: DEFAULT_K,
        probe: ProbeConfig::default(),
        upsample: None,
        save_embeddings: false,
    });
    p.dataset = dataset;
    p.out = out;
    if a.test.is_some() {
        p.test = a.test.clone();
    }
    if a.checkpoint.is_some() {
        p.checkpoint = a.checkpoint.clone();
    }
    if let Some(v) = a.init {
        p.init = v;
    }
    if let Some(v) = &a.arch {
        p.arch = v.clone();
    }
    if let Some(v) = a.init_seed {
        p.init_seed = v;
    }
    if let Some(v) = &a.shots {
        p.shots = v.clone();
    }
    if let Some(v) = a.seeds {
        p.seeds = v;
    }
    if let Some(v) = a.method {
        p.method = v;
    }
    if let Some(v) = a.k {
        p.k = v;
        // `--k` alone selects the k-NN rows
        if a.method.is_none() {
            p.method = MethodChoice::Knn;
        }
    }
    if a.upsample.is_some() {
        p.upsample = a.upsample;
    }
    if a.save_embeddings {
        p.save_embeddings = true;
    }
    if p.init == Init::Checkpoint && p.checkpoint.is_none() {
        return Err(CliError::usage("missing required --checkpoint (or --init random)"));
    }
    Ok(p)
}

pub fn resolve_mask_viz(a: &MaskVizArgs) -> Result<MaskVizParams, CliError> {
    let b = base(&a.config, "mask-viz", |r| match r {
        Run::MaskViz(p) => Some(p),
        _ => None,
    })?;
    let out = required(a.out.clone().or(b.as_ref().map(|p| p.out.clone())), "out")?;
    let mut p = b.unwrap_or(MaskVizParams {
        out: out.clone(),
        geometries: Geometry::ALL.to_vec(),
        fraction: crate::masks::DEFAULT_TARGET_FRACTION,
        seed: 0,
        antennas: 4,
        size: 256,
        stride: 32,
    });
    p.out = out;
    if let Some(v) = &a.geometry {
        p.geometries = v.clone();
    }
    if let Some(v) = a.fraction {
        p.fraction = v;
    }
    if let Some(v) = a.seed {
        p.seed = v;
    }
    if let Some(v) = a.antennas {
        p.antennas = v;
    }
    if let Some(v) = a.size {
        p.size = v;
    }
    if let Some(v) = a.stride {
        p.stride = v;
    }
    Ok(p)
}

pub fn resolve_ingest(a: &IngestArgs) -> Result<IngestParams, CliError> {
    let b = base(&a.config, "ingest", |r| match r {
        Run::Ingest(p) => Some(p),
        _ => None,
    })?;
    let inputs = if a.inputs.is_empty() {
        b.as_ref().map(|p| p.inputs.clone()).unwrap_or_default()
    } else {
        a.inputs.clone()
    };
    if inputs.is_empty() {
        return Err(CliError::usage("missing required --input"));
    }
    let out = required(a.out.clone().or(b.as_ref().map(|p| p.out.clone())), "out")?;
    let meta = a.meta.clone().or(b.as_ref().map(|p| p.meta.clone())).unwrap_or_else(|| {
        let mut s = inputs[0].clone().into_os_string();
        s.push(".json");
        s.into()
    });
    let window = a.window.or(b.as_ref().map(|p| p.window)).unwrap_or(256);
    let stride = a.stride.or(b.as_ref().map(|p| p.stride)).unwrap_or(window);
    let tile_antennas = a.tile_antennas.or(b.and_then(|p| p.tile_antennas));
    Ok(IngestParams {
        inputs,
        meta,
        out,
        window,
        stride,
        tile_antennas,
    })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => {
            let p = resolve_synth(&a)?;
            let m = cmd_synth(&p)?;
            println!(
                "{}: {} samples ({} train, {} test), {} modulation x {} AoA classes",
                p.out.display(),
                m.total,
                m.train.count,
                m.test.count,
                m.label_names.modulation.len(),
                m.label_names.aoa.len()
            );
        }
        Command::Pretrain(a) => {
            let p = resolve_pretrain(&a)?;
            let o = cmd_pretrain(&p)?;
            let last = o.reports.last().map_or(f64::NAN, |r| r.loss);
            println!(
                "{}: checkpoint {} after {} steps, final loss {last:.6}",
                o.checkpoint_dir.display(),
                o.manifest.checkpoint_id,
                o.reports.len()
            );
        }
        Command::Eval(a) => {
            let p = resolve_eval(&a)?;
            let rows = cmd_eval(&p)?;
            println!("{}: {} result rows", p.out.join(commands::RESULTS_FILE).display(), rows.len());
        }
        Command::MaskViz(a) => {
            let p = resolve_mask_viz(&a)?;
            for path in cmd_mask_viz(&p)? {
                println!("{}", path.display());
            }
        }
        Command::Ingest(a) => {
            let p = resolve_ingest(&a)?;
            let h = cmd_ingest(&p)?;
            println!(
                "{}: {} samples of {} antennas x {}{}",
                p.out.display(),
                h.count,
                h.antennas,
                h.window,
                h.provenance.map_or(String::new(), |s| format!(" ({s})"))
            );
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let _ = rayon::ThreadPoolBuilder::new().num_threads(worker_threads()).build_global();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(CliError::from(Error::InvalidArgument("x".into())).code, 2);
        assert_eq!(CliError::from(Error::Numerical("nan".into())).code, 4);
        assert_eq!(CliError::from(Error::Shape("x".into())).code, 3);
        assert_eq!(CliError::from(Error::format("f", "bad")).code, 3);
    }

    #[test]
    fn waveform_flag_accepts_count_or_list() {
        assert_eq!(parse_waveforms("7").unwrap(), WaveformClass::ALL.to_vec());
        assert_eq!(parse_waveforms("2").unwrap(), WaveformClass::ALL[..2].to_vec());
        assert_eq!(
            parse_waveforms("QPSK,TONE").unwrap(),
            vec![WaveformClass::Qpsk, WaveformClass::Tone]
        );
        assert!(parse_waveforms("0").is_err());
        assert!(parse_waveforms("OOK").is_err());
    }

    #[test]
    fn missing_out_is_a_usage_error() {
        let e = resolve_synth(&SynthArgs::default()).unwrap_err();
        assert_eq!(e.code, 2);
        assert_eq!(main_with_args(["iqjepa", "synth", "--replicas", "2"]), 2);
        assert_eq!(main_with_args(["iqjepa", "synth", "--bogus"]), 2);
    }

    #[test]
    fn knn_flag_restricts_method() {
        let a = EvalArgs {
            dataset: Some("d".into()),
            out: Some("o".into()),
            init: Some(Init::Random),
            k: Some(3),
            ..Default::default()
        };
        let p = resolve_eval(&a).unwrap();
        assert_eq!((p.method, p.k), (MethodChoice::Knn, 3));
        assert_eq!(p.shots, vec![1, 100, 500]);
    }
}
