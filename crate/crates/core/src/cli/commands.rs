use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{
    write_config, EvalParams, IngestParams, Init, MaskVizParams, MethodChoice, OutputLock, PretrainParams, Run,
    SynthParams,
};
use super::ingest::ingest;
use super::CliError;
use crate::backbone::{load_checkpoint, Encoder, EncoderArch};
use crate::eval::{
    extract_embeddings, few_shot_eval, write_embeddings, write_results_csv, Method, ResultRow, ShotProtocol,
};
use crate::grid::square_factor;
use crate::jepa::{pretrain, PretrainOutcome};
use crate::masks::{generate_mask, upsample_mask, MaskSpec};
use crate::synthdata::{
    build_dataset, read_dataset, write_dataset, BuildManifest, Dataset, DatasetHeader, Task, HEADER_FILE, TEST_DIR,
    TRAIN_DIR,
};

pub const RESULTS_FILE: &str = "results.csv";
pub const EMBEDDINGS_DIR: &str = "embeddings";

pub fn read_header(dir: &Path) -> Result<DatasetHeader, CliError> {
    let p = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&p).map_err(|e| CliError::data(format!("reading {}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
}

/// A dataset directory, or the given split of a `synth` output directory.
pub fn resolve_split(dir: &Path, split: &str) -> PathBuf {
    if dir.join(HEADER_FILE).exists() {
        dir.to_path_buf()
    } else {
        dir.join(split)
    }
}

pub fn cmd_synth(p: &SynthParams) -> Result<BuildManifest, CliError> {
    p.spec.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let _lock = OutputLock::acquire(&p.out)?;
    let manifest = build_dataset(&p.spec, &p.out)?;
    write_config(&p.out, &Run::Synth(p.clone()))?;
    Ok(manifest)
}

pub fn cmd_pretrain(p: &PretrainParams) -> Result<PretrainOutcome, CliError> {
    p.train.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let dir = resolve_split(&p.dataset, TRAIN_DIR);
    let ds = read_dataset(&dir)?;
    let arch = &p.train.arch;
    let (h, w) = (ds.header.antennas * p.train.upsample, ds.header.window);
    let s = arch.stride();
    if h % s != 0 || w % s != 0 {
        return Err(CliError::data(format!(
            "dataset grid {h}x{w} (antennas {} x upsampling {}) is not divisible by the {} stride {s}",
            ds.header.antennas, p.train.upsample, arch.id
        )));
    }
    let mut probe = p.train.mask.rng();
    generate_mask(&p.train.mask, (h / s, w / s), &mut probe)
        .map_err(|e| CliError::data(format!("mask does not fit the {}x{} latent grid: {e}", h / s, w / s)))?;
    let _lock = OutputLock::acquire(&p.out)?;
    write_config(&p.out, &Run::Pretrain(p.clone()))?;
    Ok(pretrain(&p.train, &ds.samples, &p.out)?)
}

fn eval_datasets(p: &EvalParams) -> Result<(Dataset, Dataset), CliError> {
    let (train_dir, test_dir) = match &p.test {
        Some(t) => (resolve_split(&p.dataset, TRAIN_DIR), resolve_split(t, TEST_DIR)),
        None if p.dataset.join(TRAIN_DIR).exists() && p.dataset.join(TEST_DIR).exists() => {
            (p.dataset.join(TRAIN_DIR), p.dataset.join(TEST_DIR))
        }
        None => {
            return Err(CliError::usage(format!(
                "{} has no train/test split; pass --test",
                p.dataset.display()
            )))
        }
    };
    let train = read_dataset(&train_dir)?;
    let test = read_dataset(&test_dir)?;
    let (a, b) = (&train.header, &test.header);
    if (a.antennas, a.window) != (b.antennas, b.window) || a.label_names != b.label_names {
        return Err(CliError::data(format!(
            "{} and {} differ in shape or label names",
            train_dir.display(),
            test_dir.display()
        )));
    }
    Ok((train, test))
}

fn eval_encoder(p: &EvalParams) -> Result<(Encoder<f32>, String), CliError> {
    match p.init {
        Init::Checkpoint => {
            let dir = p
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::usage("--checkpoint is required unless --init random"))?;
            let ck = load_checkpoint(dir)?;
            Ok((ck.encoder, ck.manifest.checkpoint_id))
        }
        Init::Random => {
            let arch = EncoderArch::by_name(&p.arch).map_err(|e| CliError::usage(e.to_string()))?;
            let enc = Encoder::new(arch, &mut ChaCha8Rng::seed_from_u64(p.init_seed))?;
            Ok((enc, format!("random:{}:{}", p.arch, p.init_seed)))
        }
    }
}

pub fn cmd_eval(p: &EvalParams) -> Result<Vec<ResultRow>, CliError> {
    if p.shots.is_empty() || p.shots.contains(&0) {
        return Err(CliError::usage("--shots needs one or more positive counts"));
    }
    if p.seeds == 0 || p.k == 0 {
        return Err(CliError::usage("--seeds and --k must be at least 1"));
    }
    let methods = match p.method {
        MethodChoice::Linear => vec![Method::Linear(p.probe.clone())],
        MethodChoice::Knn => vec![Method::Knn { k: p.k }],
        MethodChoice::Both => vec![Method::Linear(p.probe.clone()), Method::Knn { k: p.k }],
    };
    let (train, test) = eval_datasets(p)?;
    let (encoder, id) = eval_encoder(p)?;
    let up = match p.upsample {
        Some(u) => u,
        None => square_factor(train.header.antennas, train.header.window)?,
    };
    let _lock = OutputLock::acquire(&p.out)?;
    write_config(&p.out, &Run::Eval(p.clone()))?;
    let names = &train.header.label_names;
    let e_train = extract_embeddings(&encoder, &train.samples, up, names, &id)?;
    let e_test = extract_embeddings(&encoder, &test.samples, up, names, &id)?;
    if p.save_embeddings {
        write_embeddings(&p.out.join(EMBEDDINGS_DIR).join(TRAIN_DIR), &e_train)?;
        write_embeddings(&p.out.join(EMBEDDINGS_DIR).join(TEST_DIR), &e_test)?;
    }
    let mut rows = Vec::new();
    for task in Task::ALL {
        if train.labelled(task).is_empty() || test.labelled(task).is_empty() {
            log::warn!("skipping {task}: no labels");
            continue;
        }
        let pool = e_train.task(task)?;
        let held_out = e_test.task(task)?;
        for method in &methods {
            for &shots in &p.shots {
                let protocol = ShotProtocol::new(shots, p.seeds);
                let r = few_shot_eval(&pool, &held_out, &protocol, method, train.class_names(task))?;
                log::info!("{task} {method} {shots}-shot: {:.4} +- {:.4}", r.mean, r.std);
                rows.extend(r.per_seed.iter().map(|&(seed, accuracy)| ResultRow {
                    task: task.name().into(),
                    method: method.name().into(),
                    shots,
                    seed,
                    accuracy,
                }));
            }
        }
    }
    write_results_csv(&p.out.join(RESULTS_FILE), &rows)?;
    Ok(rows)
}

pub fn cmd_mask_viz(p: &MaskVizParams) -> Result<Vec<PathBuf>, CliError> {
    let s = p.stride;
    if s == 0 || p.antennas == 0 || !p.size.is_multiple_of(s) || !p.size.is_multiple_of(p.antennas) {
        return Err(CliError::usage(format!(
            "grid side {} must be divisible by the stride {s} and by {} antennas",
            p.size, p.antennas
        )));
    }
    let latent = (p.size / s, p.size / s);
    let band = (p.size / p.antennas / s).max(1);
    let _lock = OutputLock::acquire(&p.out)?;
    let mut written = Vec::new();
    for &g in &p.geometries {
        let spec = MaskSpec::for_grid(g, latent, band).with_fraction(p.fraction).with_seed(p.seed);
        let m = generate_mask(&spec, latent, &mut spec.rng()).map_err(|e| CliError::usage(e.to_string()))?;
        let img = upsample_mask(&m, s)?;
        let path = p.out.join(format!("{g}.pgm"));
        fs::write(&path, img.to_pgm()).map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))?;
        written.push(path);
    }
    write_config(&p.out, &Run::MaskViz(p.clone()))?;
    Ok(written)
}

pub fn cmd_ingest(p: &IngestParams) -> Result<DatasetHeader, CliError> {
    let ds = ingest(p)?;
    let _lock = OutputLock::acquire(&p.out)?;
    write_dataset(&p.out, &ds)?;
    write_config(&p.out, &Run::Ingest(p.clone()))?;
    Ok(ds.header)
}
