//! The compact stride-32 encoder, its tiny test variant, the depthwise
//! separable predictor and the learnable mask token.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv2d, DepthwiseConv, MaxPool, Param, PointwiseConv};
use super::network::{Layer, LayerSpec, Mode, Sequential, Tape};
use crate::error::{Error, Result};
use crate::masks::LatentMask;
use crate::tensor::{Scalar, Tensor4};

/// Encoder layout.
///
/// A 3×3 stride-2 stem convolution (+ norm, ReLU, optional 3×3 stride-2 max
/// pool) followed by stages of depthwise-separable blocks. Each stage opens
/// with a stride-2 block; every block is
/// `dw3×3 → norm → pw1×1 → norm → ReLU`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderArch {
    pub id: String,
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_maxpool: bool,
    pub stages: Vec<usize>,
    pub blocks_per_stage: usize,
}

impl EncoderArch {
    /// Default stride-32 encoder: `2 → 24` stem + pool, stages `48, 96, 192`.
    pub fn wj_cnn() -> Self {
        Self {
            id: "wj-cnn".into(),
            in_channels: 2,
            stem_channels: 24,
            stem_maxpool: true,
            stages: vec![48, 96, 192],
            blocks_per_stage: 2,
        }
    }

    /// Stride-4, 8-channel variant for fast tests.
    pub fn tiny() -> Self {
        Self::tiny_with_latent(8)
    }

    pub fn tiny_with_latent(latent_channels: usize) -> Self {
        Self {
            id: "tiny".into(),
            in_channels: 2,
            stem_channels: 4,
            stem_maxpool: false,
            stages: vec![latent_channels],
            blocks_per_stage: 1,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "wj-cnn" => Ok(Self::wj_cnn()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::InvalidArgument(format!(
                "unknown encoder architecture '{other}' (expected wj-cnn or tiny)"
            ))),
        }
    }

    pub fn stride(&self) -> usize {
        let stem = if self.stem_maxpool { 4 } else { 2 };
        stem << self.stages.len()
    }

    pub fn latent_channels(&self) -> usize {
        *self.stages.last().unwrap_or(&self.stem_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.stem_channels == 0 || self.stages.contains(&0) {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::InvalidArgument("each stage needs at least one block".into()));
        }
        Ok(())
    }

    pub fn build<T: Scalar>(&self, rng: &mut impl Rng) -> Result<Sequential<T>> {
        self.validate()?;
        let mut layers = vec![
            Layer::Conv(Conv2d::new(self.in_channels, self.stem_channels, (3, 3), 2, 1, rng)),
            Layer::BatchNorm(BatchNorm::new(self.stem_channels)),
            Layer::Relu {
                channels: self.stem_channels,
            },
        ];
        if self.stem_maxpool {
            layers.push(Layer::MaxPool(MaxPool {
                channels: self.stem_channels,
                kernel: 3,
                stride: 2,
                padding: 1,
            }));
        }
        let mut c = self.stem_channels;
        for &out in &self.stages {
            for b in 0..self.blocks_per_stage {
                let stride = if b == 0 { 2 } else { 1 };
                layers.push(Layer::Depthwise(DepthwiseConv::new(c, (3, 3), stride, 1, rng)));
                layers.push(Layer::BatchNorm(BatchNorm::new(c)));
                layers.push(Layer::Pointwise(PointwiseConv::new(c, out, rng)));
                layers.push(Layer::BatchNorm(BatchNorm::new(out)));
                layers.push(Layer::Relu { channels: out });
                c = out;
            }
        }
        Ok(Sequential::new(layers))
    }
}

/// Encoder parameters plus the architecture they instantiate.
#[derive(Clone, Debug)]
pub struct Encoder<T> {
    pub arch: EncoderArch,
    pub net: Sequential<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(arch: EncoderArch, rng: &mut impl Rng) -> Result<Self> {
        let net = arch.build(rng)?;
        Ok(Self { arch, net })
    }

    /// Wraps a hand-built chain (used by tests and custom architectures).
    pub fn from_layers(id: &str, layers: Vec<Layer<T>>) -> Self {
        let net = Sequential::new(layers);
        let in_channels = net.specs().first().map_or(0, |s| s.in_channels);
        let latent = net.specs().last().map_or(0, |s| s.out_channels);
        Self {
            arch: EncoderArch {
                id: id.into(),
                in_channels,
                stem_channels: latent,
                stem_maxpool: false,
                stages: vec![],
                blocks_per_stage: 0,
            },
            net,
        }
    }

    pub fn stride(&self) -> usize {
        self.net.total_stride()
    }

    pub fn latent_channels(&self) -> usize {
        self.net.specs().last().map_or(0, |s| s.out_channels)
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.net.specs()
    }

    pub fn latent_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let s = self.stride();
        if !h.is_multiple_of(s) || !w.is_multiple_of(s) {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by the encoder stride {s}"
            )));
        }
        Ok((h / s, w / s))
    }

    /// Plain forward pass with no masking.
    pub fn dense_forward(&mut self, x: Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        self.latent_dims(x.h(), x.w())?;
        self.net.forward(x, mode, None, None)
    }

    /// Masked forward pass; the output is exactly zero at masked latent cells.
    pub fn sparse_forward(
        &mut self,
        x: Tensor4<T>,
        masks: &[LatentMask],
        mode: Mode,
        tape: Option<&mut Tape<T>>,
    ) -> Result<Tensor4<T>> {
        let dims = self.latent_dims(x.h(), x.w())?;
        if let Some(m) = masks.iter().find(|m| m.dims() != dims) {
            return Err(Error::Shape(format!(
                "latent mask {:?} does not match latent grid {dims:?}",
                m.dims()
            )));
        }
        self.net.forward(x, mode, Some(masks), tape)
    }

    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        Encoder {
            arch: self.arch.clone(),
            net: self.net.cast(),
        }
    }
}

/// `blocks` depthwise-separable blocks `dw3×3 → pw1×1 → norm → ReLU`, stride 1.
#[derive(Clone, Debug)]
pub struct Predictor<T> {
    pub net: Sequential<T>,
}

pub const PREDICTOR_BLOCKS: usize = 3;

impl<T: Scalar> Predictor<T> {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Self {
        Self::with_blocks(channels, PREDICTOR_BLOCKS, rng)
    }

    pub fn with_blocks(channels: usize, blocks: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(4 * blocks);
        for _ in 0..blocks {
            layers.push(Layer::Depthwise(DepthwiseConv::new(channels, (3, 3), 1, 1, rng)));
            layers.push(Layer::Pointwise(PointwiseConv::new(channels, channels, rng)));
            layers.push(Layer::BatchNorm(BatchNorm::new(channels)));
            layers.push(Layer::Relu { channels });
        }
        Self {
            net: Sequential::new(layers),
        }
    }

    pub fn from_layers(layers: Vec<Layer<T>>) -> Self {
        Self {
            net: Sequential::new(layers),
        }
    }

    pub fn forward(&mut self, h: Tensor4<T>, mode: Mode, tape: Option<&mut Tape<T>>) -> Result<Tensor4<T>> {
        self.net.forward(h, mode, None, tape)
    }

    pub fn cast<U: Scalar>(&self) -> Predictor<U> {
        Predictor { net: self.net.cast() }
    }
}

pub const MASK_TOKEN_STD: f64 = 0.02;

/// Learnable vector substituted at masked latent cells.
#[derive(Clone, Debug)]
pub struct MaskToken<T> {
    pub z: Param<T>,
}

impl<T: Scalar> MaskToken<T> {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, MASK_TOKEN_STD).expect("positive std");
        Self {
            z: Param::new(
                (0..channels)
                    .map(|_| T::from_f64_lossy(normal.sample(rng)))
                    .collect(),
            ),
        }
    }

    pub fn from_values(z: Vec<T>) -> Self {
        Self { z: Param::new(z) }
    }

    pub fn cast<U: Scalar>(&self) -> MaskToken<U> {
        MaskToken::from_values(self.z.value.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect())
    }
}

fn check_token_shapes<T: Scalar>(h: &Tensor4<T>, masks: &[LatentMask], token: &MaskToken<T>) -> Result<()> {
    if masks.len() != h.n() {
        return Err(Error::Shape(format!("{} masks for batch of {}", masks.len(), h.n())));
    }
    if token.z.len() != h.c() {
        return Err(Error::Shape(format!(
            "mask token has {} channels, features have {}",
            token.z.len(),
            h.c()
        )));
    }
    if let Some(m) = masks.iter().find(|m| m.dims() != (h.h(), h.w())) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match latent {}x{}",
            m.dims(),
            h.h(),
            h.w()
        )));
    }
    Ok(())
}

/// `h̃[:, i, j] = z` at masked cells, `h` elsewhere.
pub fn insert_mask_token<T: Scalar>(
    mut h: Tensor4<T>,
    masks: &[LatentMask],
    token: &MaskToken<T>,
) -> Result<Tensor4<T>> {
    check_token_shapes(&h, masks, token)?;
    let w = h.w();
    for (n, m) in masks.iter().enumerate() {
        for (r, c) in m.masked_indices() {
            for ch in 0..h.c() {
                h.plane_mut(n, ch)[r * w + c] = token.z.value[ch];
            }
        }
    }
    Ok(h)
}

/// Reverse of [`insert_mask_token`]: accumulates `∂/∂z` over masked cells and
/// returns the gradient for `h` (zero at masked cells).
pub fn insert_mask_token_backward<T: Scalar>(
    mut dh: Tensor4<T>,
    masks: &[LatentMask],
    token: &mut MaskToken<T>,
) -> Result<Tensor4<T>> {
    check_token_shapes(&dh, masks, token)?;
    let w = dh.w();
    for (n, m) in masks.iter().enumerate() {
        for (r, c) in m.masked_indices() {
            for ch in 0..dh.c() {
                let g = &mut dh.plane_mut(n, ch)[r * w + c];
                token.z.grad[ch] += *g;
                *g = T::zero();
            }
        }
    }
    Ok(dh)
}

/// The momentum teacher: an encoder updated only by EMA.
#[derive(Clone, Debug)]
pub struct TeacherState<T> {
    pub encoder: Encoder<T>,
    pub tau: f64,
}

impl<T: Scalar> TeacherState<T> {
    /// Starts as an exact copy of the student.
    pub fn from_student(student: &Encoder<T>, tau: f64) -> Self {
        let mut encoder = student.clone();
        encoder.net.zero_grad();
        Self { encoder, tau }
    }
}

/// Global average over latent positions: `(n, c, h, w) → n × c`.
pub fn global_average_pool<T: Scalar>(h: &Tensor4<T>) -> Vec<Vec<T>> {
    let inv = T::one() / T::from_f64_lossy(h.plane_len() as f64);
    (0..h.n())
        .map(|n| (0..h.c()).map(|c| crate::tensor::sum(h.plane(n, c)) * inv).collect())
        .collect()
}
