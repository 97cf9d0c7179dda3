//! Sequential layer chains with dense and masked (sparse) execution and a
//! recorded tape for the reverse pass.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layers::{
    relu_backward, relu_forward, relu_in_place, BatchNorm, BnCache, Conv2d, DepthwiseConv, LayerMask, MaxPool,
    Param, PointwiseConv,
};
use crate::error::{Error, Result};
use crate::masks::{adapt_mask_to_layer, LatentMask};
use crate::tensor::{Scalar, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    DepthwiseConv,
    PointwiseConv,
    Maxpool,
    Batchnorm,
    Relu,
}

/// Architecture-level description of one layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

/// Whether normalization uses batch statistics (and updates running ones).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Depthwise(DepthwiseConv<T>),
    Pointwise(PointwiseConv<T>),
    MaxPool(MaxPool),
    BatchNorm(BatchNorm<T>),
    Relu { channels: usize },
}

impl<T: Scalar> Layer<T> {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) => LayerSpec {
                kind: LayerKind::Conv,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
                in_channels: c.in_channels,
                out_channels: c.out_channels,
            },
            Layer::Depthwise(d) => LayerSpec {
                kind: LayerKind::DepthwiseConv,
                kernel: d.kernel,
                stride: d.stride,
                padding: d.padding,
                in_channels: d.channels,
                out_channels: d.channels,
            },
            Layer::Pointwise(p) => LayerSpec {
                kind: LayerKind::PointwiseConv,
                kernel: (1, 1),
                stride: 1,
                padding: 0,
                in_channels: p.in_channels,
                out_channels: p.out_channels,
            },
            Layer::MaxPool(m) => LayerSpec {
                kind: LayerKind::Maxpool,
                kernel: (m.kernel, m.kernel),
                stride: m.stride,
                padding: m.padding,
                in_channels: m.channels,
                out_channels: m.channels,
            },
            Layer::BatchNorm(b) => LayerSpec {
                kind: LayerKind::Batchnorm,
                kernel: (1, 1),
                stride: 1,
                padding: 0,
                in_channels: b.channels,
                out_channels: b.channels,
            },
            Layer::Relu { channels } => LayerSpec {
                kind: LayerKind::Relu,
                kernel: (1, 1),
                stride: 1,
                padding: 0,
                in_channels: *channels,
                out_channels: *channels,
            },
        }
    }

    fn stride(&self) -> usize {
        match self {
            Layer::Conv(c) => c.stride,
            Layer::Depthwise(d) => d.stride,
            Layer::MaxPool(m) => m.stride,
            _ => 1,
        }
    }
}

enum Cache<T> {
    Input(Tensor4<T>),
    Pool { in_shape: [usize; 4], argmax: Vec<u32> },
    Norm(BnCache<T>),
    Relu(Vec<bool>),
    None,
}

struct Entry<T> {
    cache: Cache<T>,
    mask: Option<Arc<LayerMask<T>>>,
}

/// Activations recorded by a forward pass, consumed by [`Sequential::backward`].
pub struct Tape<T> {
    entries: Vec<Entry<T>>,
}

impl<T> Default for Tape<T> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
        }
    }
}

impl<T> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Builds per-resolution [`LayerMask`]s from per-sample latent masks, memoized.
pub struct MaskPyramid<'a, T> {
    latent: &'a [LatentMask],
    cache: Vec<((usize, usize), Arc<LayerMask<T>>)>,
}

impl<'a, T: Scalar> MaskPyramid<'a, T> {
    pub fn new(latent: &'a [LatentMask]) -> Self {
        Self {
            latent,
            cache: Vec::new(),
        }
    }

    pub fn at(&mut self, h: usize, w: usize) -> Result<Arc<LayerMask<T>>> {
        if let Some((_, m)) = self.cache.iter().find(|(d, _)| *d == (h, w)) {
            return Ok(m.clone());
        }
        let mut data = Vec::with_capacity(self.latent.len() * h * w);
        for m in self.latent {
            data.extend(adapt_mask_to_layer(m, (h, w))?.multipliers::<T>());
        }
        let lm = Arc::new(LayerMask {
            n: self.latent.len(),
            h,
            w,
            data,
        });
        self.cache.push(((h, w), lm.clone()));
        Ok(lm)
    }
}

/// An ordered chain of layers.
#[derive(Clone, Debug)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Product of layer strides.
    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(Layer::stride).product()
    }

    /// Runs the chain.
    ///
    /// With `masks` (one latent mask per sample) this is the sparse pass:
    /// the input is multiplied by the mask at input resolution, every
    /// non-normalization layer's output is multiplied by the mask adapted to
    /// its resolution, and normalization layers compute statistics over
    /// unmasked positions only and emit zeros elsewhere.
    pub fn forward(
        &mut self,
        x: Tensor4<T>,
        mode: Mode,
        masks: Option<&[LatentMask]>,
        mut tape: Option<&mut Tape<T>>,
    ) -> Result<Tensor4<T>> {
        let mut pyramid = match masks {
            Some(ms) => {
                if ms.len() != x.n() {
                    return Err(Error::Shape(format!(
                        "{} masks for a batch of {}",
                        ms.len(),
                        x.n()
                    )));
                }
                Some(MaskPyramid::new(ms))
            }
            None => None,
        };
        if let Some(t) = tape.as_deref_mut() {
            t.entries.clear();
        }
        let mut h = x;
        if let Some(p) = pyramid.as_mut() {
            p.at(h.h(), h.w())?.apply(&mut h);
        }
        let train = mode == Mode::Train;
        let record = tape.is_some();
        for layer in &mut self.layers {
            let (out, cache) = match layer {
                Layer::Conv(c) => (c.forward(&h)?, Cache::Input(h)),
                Layer::Depthwise(d) => (d.forward(&h)?, Cache::Input(h)),
                Layer::Pointwise(p) => (p.forward(&h)?, Cache::Input(h)),
                Layer::MaxPool(m) if record => {
                    let (y, argmax) = m.forward(&h)?;
                    (
                        y,
                        Cache::Pool {
                            in_shape: h.shape(),
                            argmax,
                        },
                    )
                }
                Layer::MaxPool(m) => (m.forward_values(&h)?, Cache::None),
                Layer::BatchNorm(b) => {
                    let lm = match pyramid.as_mut() {
                        Some(p) => Some(p.at(h.h(), h.w())?),
                        None => None,
                    };
                    let (y, c) = b.forward(h, lm.as_deref(), train, record)?;
                    if let (Some(t), Some(c)) = (tape.as_deref_mut(), c) {
                        t.entries.push(Entry {
                            cache: Cache::Norm(c),
                            mask: lm,
                        });
                    }
                    h = y;
                    continue;
                }
                // inputs are already zero at masked positions and ReLU keeps them zero
                Layer::Relu { .. } if record => {
                    let (y, active) = relu_forward(h);
                    if let Some(t) = tape.as_deref_mut() {
                        t.entries.push(Entry {
                            cache: Cache::Relu(active),
                            mask: None,
                        });
                    }
                    h = y;
                    continue;
                }
                Layer::Relu { .. } => {
                    relu_in_place(&mut h);
                    continue;
                }
            };
            let mut out = out;
            let lm = match pyramid.as_mut() {
                Some(p) => {
                    let lm = p.at(out.h(), out.w())?;
                    lm.apply(&mut out);
                    Some(lm)
                }
                None => None,
            };
            if let Some(t) = tape.as_deref_mut() {
                t.entries.push(Entry { cache, mask: lm });
            }
            h = out;
        }
        Ok(h)
    }

    /// Accumulates parameter gradients for the recorded pass and returns the
    /// gradient with respect to the chain's input. Drains the tape.
    pub fn backward(&mut self, tape: &mut Tape<T>, dy: Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.backward_impl(tape, dy, true)?.expect("input gradient requested"))
    }

    /// Like [`Sequential::backward`] but skips the input gradient of the first layer.
    pub fn backward_params(&mut self, tape: &mut Tape<T>, dy: Tensor4<T>) -> Result<()> {
        self.backward_impl(tape, dy, false).map(|_| ())
    }

    fn backward_impl(&mut self, tape: &mut Tape<T>, dy: Tensor4<T>, need_input: bool) -> Result<Option<Tensor4<T>>> {
        if tape.entries.is_empty() {
            return Err(Error::EmptyTape);
        }
        if tape.entries.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "tape has {} entries for {} layers",
                tape.entries.len(),
                self.layers.len()
            )));
        }
        let mut g = dy;
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let entry = tape.entries.pop().expect("length checked");
            if let Layer::BatchNorm(b) = layer {
                let Cache::Norm(c) = &entry.cache else {
                    unreachable!("tape entry kind matches layer")
                };
                g = b.backward(c, entry.mask.as_deref(), g);
                continue;
            }
            if let Some(m) = &entry.mask {
                m.apply(&mut g);
            }
            if i == 0 && !need_input {
                if let (Layer::Conv(c), Cache::Input(x)) = (&mut *layer, &entry.cache) {
                    c.backward_weights(x, &g);
                    return Ok(None);
                }
            }
            g = match (layer, entry.cache) {
                (Layer::Conv(c), Cache::Input(x)) => c.backward(&x, &g),
                (Layer::Depthwise(d), Cache::Input(x)) => d.backward(&x, &g),
                (Layer::Pointwise(p), Cache::Input(x)) => p.backward(&x, &g),
                (Layer::MaxPool(m), Cache::Pool { in_shape, argmax }) => {
                    m.backward(in_shape, &argmax, &g)
                }
                (Layer::Relu { .. }, Cache::Relu(active)) => relu_backward(g, &active),
                _ => unreachable!("tape entry kind matches layer"),
            };
        }
        Ok(Some(g))
    }

    /// Trainable tensors in a stable order with their names.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => out.push((format!("layers.{i}.weight"), &c.weight)),
                Layer::Depthwise(d) => out.push((format!("layers.{i}.weight"), &d.weight)),
                Layer::Pointwise(p) => out.push((format!("layers.{i}.weight"), &p.weight)),
                Layer::BatchNorm(b) => {
                    out.push((format!("layers.{i}.gamma"), &b.gamma));
                    out.push((format!("layers.{i}.beta"), &b.beta));
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.push(&mut c.weight),
                Layer::Depthwise(d) => out.push(&mut d.weight),
                Layer::Pointwise(p) => out.push(&mut p.weight),
                Layer::BatchNorm(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Non-trainable state (normalization running statistics).
    pub fn named_buffers(&self) -> Vec<(String, &Vec<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm(b) = layer {
                out.push((format!("layers.{i}.running_mean"), &b.running_mean));
                out.push((format!("layers.{i}.running_var"), &b.running_var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::BatchNorm(b) = layer {
                out.push(&mut b.running_mean);
                out.push(&mut b.running_var);
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        fn cv<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
            v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect()
        }
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(Conv2d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    stride: c.stride,
                    padding: c.padding,
                    weight: Param::new(cv(&c.weight.value)),
                }),
                Layer::Depthwise(d) => Layer::Depthwise(DepthwiseConv {
                    channels: d.channels,
                    kernel: d.kernel,
                    stride: d.stride,
                    padding: d.padding,
                    weight: Param::new(cv(&d.weight.value)),
                }),
                Layer::Pointwise(p) => Layer::Pointwise(PointwiseConv {
                    in_channels: p.in_channels,
                    out_channels: p.out_channels,
                    weight: Param::new(cv(&p.weight.value)),
                }),
                Layer::MaxPool(m) => Layer::MaxPool(*m),
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm {
                    channels: b.channels,
                    gamma: Param::new(cv(&b.gamma.value)),
                    beta: Param::new(cv(&b.beta.value)),
                    running_mean: cv(&b.running_mean),
                    running_var: cv(&b.running_var),
                    eps: b.eps,
                    momentum: b.momentum,
                }),
                Layer::Relu { channels } => Layer::Relu {
                    channels: *channels,
                },
            })
            .collect();
        Sequential { layers }
    }
}
