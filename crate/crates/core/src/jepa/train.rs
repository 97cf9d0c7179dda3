use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ema::ema_update;
use super::loss::masked_l2_loss_grad;
use super::optim::AdamW;
use super::schedule::{lr_schedule, momentum_schedule};
use crate::backbone::checkpoint::{save_checkpoint, CheckpointManifest};
use crate::backbone::{
    insert_mask_token, insert_mask_token_backward, Encoder, EncoderArch, MaskToken, Mode, Param,
    Predictor, Tape, TeacherState,
};
use crate::error::{Error, Result};
use crate::grid::{upsample_antennas, GridTensor, IqSample};
use crate::masks::{generate_mask, sample_seed, upsample_mask, LatentMask, MaskSpec};
use crate::tensor::{Scalar, Tensor4};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "step,epoch,loss,masked_cells,tau,lr,wall_ms";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    /// Must fit the latent grid of the data being trained on.
    pub mask: MaskSpec,
    pub seed: u64,
    pub precision: Precision,
    pub grad_clip: Option<f64>,
    pub arch: EncoderArch,
    pub predictor_blocks: usize,
    /// Antenna upsampling factor applied to each sample before training.
    pub upsample: usize,
    /// When false the `wall_ms` column is written as 0, making metrics files
    /// byte-comparable across runs.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            base_lr: 1e-3,
            weight_decay: 0.05,
            tau_start: 0.996,
            tau_end: 1.0,
            mask: MaskSpec::default_for(crate::masks::Geometry::Time),
            seed: 0,
            precision: Precision::F32,
            grad_clip: None,
            arch: EncoderArch::wj_cnn(),
            predictor_blocks: crate::backbone::encoder::PREDICTOR_BLOCKS,
            upsample: 64,
            record_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        for (name, t) in [("tau_start", self.tau_start), ("tau_end", self.tau_end)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidArgument(format!("{name} = {t} outside [0, 1]")));
            }
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid learning rate {}", self.base_lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid weight decay {}", self.weight_decay)));
        }
        if self.upsample == 0 {
            return Err(Error::InvalidArgument("upsampling factor must be at least 1".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::InvalidArgument("gradient clip must be positive".into()));
        }
        self.arch.validate()
    }
}

/// Student encoder θ, predictor φ, mask token z and EMA teacher θ̄.
#[derive(Clone, Debug)]
pub struct JepaModel<T> {
    pub student: Encoder<T>,
    pub predictor: Predictor<T>,
    pub token: MaskToken<T>,
    pub teacher: TeacherState<T>,
}

impl<T: Scalar> JepaModel<T> {
    pub fn new(arch: EncoderArch, predictor_blocks: usize, tau: f64, rng: &mut impl Rng) -> Result<Self> {
        let student = Encoder::new(arch, rng)?;
        let d = student.latent_channels();
        let predictor = Predictor::with_blocks(d, predictor_blocks, rng);
        let token = MaskToken::new(d, rng);
        let teacher = TeacherState::from_student(&student, tau);
        Ok(Self {
            student,
            predictor,
            token,
            teacher,
        })
    }

    pub fn from_parts(student: Encoder<T>, predictor: Predictor<T>, token: MaskToken<T>, tau: f64) -> Self {
        let teacher = TeacherState::from_student(&student, tau);
        Self {
            student,
            predictor,
            token,
            teacher,
        }
    }

    /// Trainable tensors in optimizer order: θ, φ, z.
    pub fn trainable_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.student.net.params_mut();
        v.extend(self.predictor.net.params_mut());
        v.push(&mut self.token.z);
        v
    }

    pub fn zero_grad(&mut self) {
        self.student.net.zero_grad();
        self.predictor.net.zero_grad();
        self.token.z.zero_grad();
    }

    /// Student / predictor / teacher passes and the loss, without backward.
    pub fn loss(&mut self, x: &Tensor4<T>, masks: &[LatentMask]) -> Result<f64> {
        let (pred, target) = self.predict(x, masks, None, None)?;
        super::loss::masked_l2_loss(&pred, &target, masks)
    }

    /// Loss plus gradients for θ, φ and z (overwriting any previous gradients).
    pub fn loss_and_grads(&mut self, x: &Tensor4<T>, masks: &[LatentMask]) -> Result<f64> {
        let mut enc_tape = Tape::new();
        let mut pred_tape = Tape::new();
        let (pred, target) = self.predict(x, masks, Some(&mut enc_tape), Some(&mut pred_tape))?;
        let (loss, dy) = masked_l2_loss_grad(&pred, &target, masks)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss is {loss}")));
        }
        self.zero_grad();
        let dh_tilde = self.predictor.net.backward(&mut pred_tape, dy)?;
        let dh = insert_mask_token_backward(dh_tilde, masks, &mut self.token)?;
        self.student.net.backward_params(&mut enc_tape, dh)?;
        Ok(loss)
    }

    fn predict(
        &mut self,
        x: &Tensor4<T>,
        masks: &[LatentMask],
        enc_tape: Option<&mut Tape<T>>,
        pred_tape: Option<&mut Tape<T>>,
    ) -> Result<(Tensor4<T>, Tensor4<T>)> {
        let x_masked = construct_masked_input(x, masks, self.student.stride())?;
        let h = self.student.sparse_forward(x_masked, masks, Mode::Train, enc_tape)?;
        let h_tilde = insert_mask_token(h, masks, &self.token)?;
        let pred = self.predictor.forward(h_tilde, Mode::Train, pred_tape)?;
        let target = self.teacher.encoder.dense_forward(x.clone(), Mode::Train)?;
        Ok((pred, target))
    }
}

/// `x ⊙ M` with the latent masks expanded to input resolution.
pub fn construct_masked_input<T: Scalar>(x: &Tensor4<T>, masks: &[LatentMask], stride: usize) -> Result<Tensor4<T>> {
    if masks.len() != x.n() {
        return Err(Error::Shape(format!("{} masks for batch of {}", masks.len(), x.n())));
    }
    let mut out = x.clone();
    for (n, m) in masks.iter().enumerate() {
        let full = upsample_mask(m, stride)?;
        if full.dims() != (x.h(), x.w()) {
            return Err(Error::Shape(format!(
                "mask {:?} at stride {stride} does not cover a {}x{} input",
                m.dims(),
                x.h(),
                x.w()
            )));
        }
        let mult = full.multipliers::<T>();
        for c in 0..x.c() {
            for (v, &k) in out.plane_mut(n, c).iter_mut().zip(&mult) {
                *v *= k;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    /// 1-based.
    pub step: u64,
    pub loss: f64,
    /// Masked latent cells summed over the batch.
    pub masked_cells: usize,
    pub tau: f64,
    pub lr: f64,
}

/// Model plus optimizer and schedule position.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub model: JepaModel<T>,
    pub optimizer: AdamW<T>,
    pub step: u64,
    pub total_steps: u64,
    pub base_lr: f64,
    pub tau_start: f64,
    pub tau_end: f64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: JepaModel<T>, cfg: &TrainConfig, total_steps: u64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::InvalidArgument("total steps must be at least 1".into()));
        }
        let mut optimizer = AdamW::new(cfg.weight_decay);
        optimizer.clip_norm = cfg.grad_clip;
        Ok(Self {
            model,
            optimizer,
            step: 0,
            total_steps,
            base_lr: cfg.base_lr,
            tau_start: cfg.tau_start,
            tau_end: cfg.tau_end,
        })
    }
}

/// Draws one latent mask per sample; sample `i` uses seed `base ^ i`.
pub fn draw_masks(spec: &MaskSpec, dims: (usize, usize), count: usize, base: u64) -> Result<Vec<LatentMask>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(base, i as u64));
            generate_mask(spec, dims, &mut rng)
        })
        .collect()
}

/// One iteration: masks → masked input → student → token → predictor →
/// teacher → loss → AdamW on θ, φ, z → τ → EMA.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &Tensor4<T>,
    spec: &MaskSpec,
    rng: &mut impl RngCore,
) -> Result<LossReport> {
    if batch.n() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if state.step >= state.total_steps {
        return Err(Error::InvalidArgument(format!(
            "schedule exhausted after {} steps",
            state.total_steps
        )));
    }
    let dims = state.model.student.latent_dims(batch.h(), batch.w())?;
    let masks = draw_masks(spec, dims, batch.n(), rng.next_u64())?;
    let masked_cells = masks.iter().map(|m| m.masked_count()).sum();

    let loss = state.model.loss_and_grads(batch, &masks)?;

    let lr = lr_schedule(state.step, state.total_steps, state.base_lr)?;
    let mut params = state.model.trainable_mut();
    state.optimizer.step(&mut params, lr)?;
    state.step += 1;

    let tau = momentum_schedule(state.step, state.total_steps, state.tau_start, state.tau_end)?;
    let JepaModel { student, teacher, .. } = &mut state.model;
    ema_update(teacher, student, tau)?;

    Ok(LossReport {
        step: state.step,
        loss,
        masked_cells,
        tau,
        lr,
    })
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoint_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub manifest: CheckpointManifest,
    pub reports: Vec<LossReport>,
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(epoch as u64 + 1)));
    idx.shuffle(&mut rng);
    idx
}

fn assemble<T: Scalar>(samples: &[IqSample], idx: &[usize], factor: usize) -> Result<Tensor4<T>> {
    let grids = idx
        .iter()
        .map(|&i| upsample_antennas(&samples[i], factor))
        .collect::<Result<Vec<GridTensor>>>()?;
    GridTensor::batch(&grids)
}

/// Runs `epochs × ⌈N / batch⌉` train steps, writes the student encoder to
/// `out` and one metrics row per step to `out/metrics.csv`.
pub fn pretrain(cfg: &TrainConfig, samples: &[IqSample], out: &Path) -> Result<PretrainOutcome> {
    match cfg.precision {
        Precision::F32 => pretrain_as::<f32>(cfg, samples, out),
        Precision::F64 => pretrain_as::<f64>(cfg, samples, out),
    }
}

fn pretrain_as<T: Scalar>(cfg: &TrainConfig, samples: &[IqSample], out: &Path) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InsufficientData("pretraining dataset is empty".into()));
    }
    let batches = samples.len().div_ceil(cfg.batch_size);
    let total = (cfg.epochs * batches) as u64;

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = JepaModel::<T>::new(cfg.arch.clone(), cfg.predictor_blocks, cfg.tau_start, &mut init_rng)?;
    let mut state = TrainState::new(model, cfg, total)?;
    let mut mask_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ cfg.mask.seed.rotate_left(32) ^ 0x6d61_736b);

    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let metrics_path = out.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| Error::io(format!("creating {}", metrics_path.display()), e))?;
    let mut csv = BufWriter::new(file);
    let wctx = || format!("writing {}", metrics_path.display());
    writeln!(csv, "{METRICS_HEADER}").map_err(|e| Error::io(wctx(), e))?;

    log::info!(
        "pretraining {} on {} samples: {} epochs x {} batches, mask {}",
        cfg.arch.id,
        samples.len(),
        cfg.epochs,
        batches,
        cfg.mask.geometry
    );
    let start = Instant::now();
    let mut reports = Vec::with_capacity(total as usize);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(samples.len(), cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = assemble::<T>(samples, chunk, cfg.upsample)?;
            let report = match train_step(&mut state, &x, &cfg.mask, &mut mask_rng) {
                Ok(r) => r,
                Err(e) => {
                    let _ = csv.flush();
                    return Err(e);
                }
            };
            let wall = if cfg.record_wall_time {
                start.elapsed().as_millis()
            } else {
                0
            };
            writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                report.step,
                epoch + 1,
                report.loss,
                report.masked_cells,
                report.tau,
                report.lr,
                wall
            )
            .map_err(|e| Error::io(wctx(), e))?;
            epoch_loss += report.loss;
            reports.push(report);
        }
        log::info!(
            "epoch {}/{}: mean loss {:.6} ({:.1}s)",
            epoch + 1,
            cfg.epochs,
            epoch_loss / batches as f64,
            start.elapsed().as_secs_f64()
        );
    }
    csv.flush().map_err(|e| Error::io(wctx(), e))?;
    let manifest = save_checkpoint(&state.model.student.cast::<f32>(), out)?;
    Ok(PretrainOutcome {
        checkpoint_dir: out.to_path_buf(),
        metrics_path,
        manifest,
        reports,
    })
}
