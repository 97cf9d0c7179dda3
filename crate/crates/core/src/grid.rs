//! Raw IQ windows and the antenna-time grid.
//!
//! An [`IqSample`] is a real tensor `(2, A, T)`: channel 0 holds the in-phase
//! rows, channel 1 the quadrature rows, one row per antenna. The encoder
//! consumes a [`GridTensor`], where every antenna row is repeated `F` times
//! so the default `4 × 256` window becomes a square `256 × 256` plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Number of real channels (I and Q).
pub const IQ_CHANNELS: usize = 2;

/// Class labels attached to a recording or window. `None` means unlabelled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub modulation: Option<u16>,
    pub aoa: Option<u16>,
}

/// A continuous multi-antenna capture before windowing.
#[derive(Clone, Debug, PartialEq)]
pub struct IqRecording {
    antennas: usize,
    samples_per_antenna: usize,
    /// `(2, A, N)` channel-major.
    data: Vec<f32>,
    pub sample_rate: f64,
    pub labels: Labels,
}

impl IqRecording {
    /// Builds a recording from per-antenna complex streams given as `(i, q)` pairs.
    pub fn from_antenna_streams(
        streams: &[Vec<(f32, f32)>],
        sample_rate: f64,
        labels: Labels,
    ) -> Result<Self> {
        let antennas = streams.len();
        if antennas == 0 {
            return Err(Error::InvalidArgument("recording has no antennas".into()));
        }
        let n = streams[0].len();
        if let Some((a, s)) = streams.iter().enumerate().find(|(_, s)| s.len() != n) {
            return Err(Error::Shape(format!(
                "antenna {a} has {} samples, antenna 0 has {n}",
                s.len()
            )));
        }
        let mut data = vec![0.0f32; IQ_CHANNELS * antennas * n];
        for (a, s) in streams.iter().enumerate() {
            for (t, &(i, q)) in s.iter().enumerate() {
                data[a * n + t] = i;
                data[(antennas + a) * n + t] = q;
            }
        }
        Self::from_channel_major(antennas, n, data, sample_rate, labels)
    }

    /// Builds a recording from a `(2, A, N)` channel-major buffer.
    pub fn from_channel_major(
        antennas: usize,
        samples_per_antenna: usize,
        data: Vec<f32>,
        sample_rate: f64,
        labels: Labels,
    ) -> Result<Self> {
        if data.len() != IQ_CHANNELS * antennas * samples_per_antenna {
            return Err(Error::Shape(format!(
                "recording buffer has {} values, expected 2 x {antennas} x {samples_per_antenna}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "recording contains non-finite values".into(),
            ));
        }
        Ok(Self {
            antennas,
            samples_per_antenna,
            data,
            sample_rate,
            labels,
        })
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn samples_per_antenna(&self) -> usize {
        self.samples_per_antenna
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// One `(2, A, T)` window.
#[derive(Clone, Debug, PartialEq)]
pub struct IqSample {
    antennas: usize,
    window: usize,
    data: Vec<f32>,
    pub labels: Labels,
}

impl IqSample {
    pub fn new(antennas: usize, window: usize, data: Vec<f32>, labels: Labels) -> Result<Self> {
        if antennas == 0 || window == 0 {
            return Err(Error::Shape("sample must have antennas and samples".into()));
        }
        if data.len() != IQ_CHANNELS * antennas * window {
            return Err(Error::Shape(format!(
                "sample buffer has {} values, expected 2 x {antennas} x {window}",
                data.len()
            )));
        }
        Ok(Self {
            antennas,
            window,
            data,
            labels,
        })
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// `(2, A, T)` channel-major values.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, channel: usize, antenna: usize, t: usize) -> f32 {
        self.data[(channel * self.antennas + antenna) * self.window + t]
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

/// Antenna-upsampled `(2, A·F, T)` plane fed to the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct GridTensor {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl GridTensor {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != IQ_CHANNELS * rows * cols {
            return Err(Error::Shape(format!(
                "grid buffer has {} values, expected 2 x {rows} x {cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.rows + row) * self.cols + col]
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor4<T> {
        let data = self.data.iter().map(|&v| T::from_f64_lossy(v as f64)).collect();
        Tensor4::from_vec([1, IQ_CHANNELS, self.rows, self.cols], data)
            .expect("grid shape is consistent")
    }

    /// Stacks grids of identical shape into a `(B, 2, rows, cols)` batch.
    pub fn batch<T: Scalar>(grids: &[GridTensor]) -> Result<Tensor4<T>> {
        let first = grids
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (rows, cols) = (first.rows, first.cols);
        let mut data = Vec::with_capacity(grids.len() * first.data.len());
        for g in grids {
            if (g.rows, g.cols) != (rows, cols) {
                return Err(Error::Shape(format!(
                    "batch mixes {rows}x{cols} and {}x{} grids",
                    g.rows, g.cols
                )));
            }
            data.extend(g.data.iter().map(|&v| T::from_f64_lossy(v as f64)));
        }
        Tensor4::from_vec([grids.len(), IQ_CHANNELS, rows, cols], data)
    }
}

/// Cuts a recording into windows of `window` samples every `stride` samples.
///
/// Windows whose values are all zero are dropped (they cannot be normalized);
/// the number dropped is logged.
pub fn segment_recording(rec: &IqRecording, window: usize, stride: usize) -> Result<Vec<IqSample>> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "window ({window}) and stride ({stride}) must be at least 1"
        )));
    }
    let n = rec.samples_per_antenna;
    if n < window {
        return Err(Error::InsufficientData(format!(
            "recording has {n} samples per antenna, shorter than the {window}-sample window"
        )));
    }
    let count = (n - window) / stride + 1;
    let a = rec.antennas;
    let mut out = Vec::with_capacity(count);
    let mut dropped = 0usize;
    for k in 0..count {
        let start = k * stride;
        let mut data = Vec::with_capacity(IQ_CHANNELS * a * window);
        for row in 0..IQ_CHANNELS * a {
            data.extend_from_slice(&rec.data[row * n + start..row * n + start + window]);
        }
        let s = IqSample::new(a, window, data, rec.labels)?;
        if s.is_all_zero() {
            dropped += 1;
        } else {
            out.push(s);
        }
    }
    if dropped > 0 {
        log::warn!("segmentation dropped {dropped} all-zero window(s) of {count}");
    }
    Ok(out)
}

/// Divides every value by the sample's largest magnitude.
pub fn unit_max_normalize(x: &IqSample) -> Result<IqSample> {
    let m = x.max_abs();
    if m == 0.0 {
        return Err(Error::InvalidArgument(
            "cannot normalize an all-zero sample".into(),
        ));
    }
    if !m.is_finite() {
        return Err(Error::InvalidArgument("sample contains non-finite values".into()));
    }
    let data = x.data.iter().map(|&v| v / m).collect();
    IqSample::new(x.antennas, x.window, data, x.labels)
}

/// Nearest-neighbour antenna upsampling: grid row `i` is antenna `i / factor`.
pub fn upsample_antennas(x: &IqSample, factor: usize) -> Result<GridTensor> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsampling factor must be at least 1".into()));
    }
    let rows = x.antennas * factor;
    let t = x.window;
    let mut data = Vec::with_capacity(IQ_CHANNELS * rows * t);
    for c in 0..IQ_CHANNELS {
        for i in 0..rows {
            let src = (c * x.antennas + i / factor) * t;
            data.extend_from_slice(&x.data[src..src + t]);
        }
    }
    GridTensor::from_vec(rows, t, data)
}

/// Upsampling factor giving a square grid for `antennas × window` windows.
pub fn square_factor(antennas: usize, window: usize) -> Result<usize> {
    if antennas == 0 || !window.is_multiple_of(antennas) {
        return Err(Error::InvalidArgument(format!(
            "window {window} is not a multiple of {antennas} antennas; pass an explicit factor"
        )));
    }
    Ok(window / antennas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_recording(antennas: usize, n: usize) -> IqRecording {
        let data = (0..IQ_CHANNELS * antennas * n).map(|v| v as f32 + 1.0).collect();
        IqRecording::from_channel_major(antennas, n, data, 1e6, Labels::default()).unwrap()
    }

    #[test]
    fn segment_tiles_exactly() {
        let rec = ramp_recording(4, 1024);
        assert_eq!(segment_recording(&rec, 256, 256).unwrap().len(), 4);
    }

    #[test]
    fn segment_identity_window() {
        let rec = ramp_recording(4, 256);
        let segs = segment_recording(&rec, 256, 1).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].data(), rec.data());
    }

    #[test]
    fn segment_overlapping_offsets() {
        // offsets 0, 16, 32 are the only starts with start + 256 <= 300
        let rec = ramp_recording(2, 300);
        let segs = segment_recording(&rec, 256, 16).unwrap();
        assert_eq!(segs.len(), 3);
        for (k, s) in segs.iter().enumerate() {
            assert_eq!(s.at(0, 0, 0), rec.data()[16 * k]);
            assert_eq!(s.at(1, 1, 0), rec.data()[3 * 300 + 16 * k]);
        }
    }

    #[test]
    fn segment_rejects_short_recording() {
        let rec = ramp_recording(4, 100);
        let err = segment_recording(&rec, 256, 256).unwrap_err();
        assert!(err.to_string().contains("shorter"));
    }

    #[test]
    fn segment_drops_zero_windows() {
        let mut data = vec![0.0f32; 2 * 512];
        data[300] = 1.0;
        let rec = IqRecording::from_channel_major(1, 512, data, 1.0, Labels::default()).unwrap();
        let segs = segment_recording(&rec, 256, 256).unwrap();
        assert_eq!(segs.len(), 1);
    }

    #[test]
    fn recording_rejects_ragged_antennas() {
        let err = IqRecording::from_antenna_streams(
            &[vec![(0.0, 1.0); 4], vec![(0.0, 1.0); 3]],
            1.0,
            Labels::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn normalize_examples() {
        let x = IqSample::new(1, 2, vec![0.5, -2.0, 1.0, 0.0], Labels::default()).unwrap();
        assert_eq!(unit_max_normalize(&x).unwrap().data(), &[0.25, -1.0, 0.5, 0.0]);

        let unit = IqSample::new(1, 2, vec![0.3, -1.0, 0.2, 0.9], Labels::default()).unwrap();
        assert_eq!(unit_max_normalize(&unit).unwrap(), unit);

        let flat = IqSample::new(2, 3, vec![0.01; 12], Labels::default()).unwrap();
        assert!(unit_max_normalize(&flat).unwrap().data().iter().all(|&v| v == 1.0));

        let zero = IqSample::new(1, 2, vec![0.0; 4], Labels::default()).unwrap();
        assert!(unit_max_normalize(&zero).is_err());
    }

    #[test]
    fn upsample_examples() {
        let x = IqSample::new(2, 4, (0..16).map(|v| v as f32).collect(), Labels::default())
            .unwrap();
        assert_eq!(upsample_antennas(&x, 1).unwrap().data(), x.data());

        let rows = IqSample::new(
            2,
            1,
            vec![1.0, 2.0, 1.0, 2.0],
            Labels::default(),
        )
        .unwrap();
        let g = upsample_antennas(&rows, 2).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn upsample_default_square_grid() {
        let x = IqSample::new(
            4,
            256,
            (0..2 * 4 * 256).map(|v| (v as f32).sin()).collect(),
            Labels::default(),
        )
        .unwrap();
        let g = upsample_antennas(&x, 64).unwrap();
        assert_eq!((g.rows(), g.cols()), (256, 256));
        for c in 0..2 {
            for i in 0..64 {
                for t in 0..256 {
                    assert_eq!(g.at(c, i, t), x.at(c, 0, t));
                }
            }
        }
    }

    fn arb_sample() -> impl Strategy<Value = IqSample> {
        (1usize..5, 1usize..24).prop_flat_map(|(a, t)| {
            proptest::collection::vec(-10.0f32..10.0, 2 * a * t)
                .prop_map(move |d| IqSample::new(a, t, d, Labels::default()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn upsample_then_decimate_is_exact(x in arb_sample(), factor in 1usize..6) {
            let g = upsample_antennas(&x, factor).unwrap();
            for c in 0..2 {
                for a in 0..x.antennas() {
                    for t in 0..x.window() {
                        prop_assert_eq!(g.at(c, a * factor, t).to_bits(), x.at(c, a, t).to_bits());
                    }
                }
            }
        }

        #[test]
        fn normalize_is_idempotent(x in arb_sample()) {
            prop_assume!(!x.is_all_zero());
            let once = unit_max_normalize(&x).unwrap();
            let twice = unit_max_normalize(&once).unwrap();
            prop_assert_eq!(once.max_abs(), 1.0);
            let a: Vec<u32> = once.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = twice.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn segments_rebuild_prefix(n in 4usize..200, window in 1usize..40, seed in 0u32..1000) {
            prop_assume!(n >= window);
            let data: Vec<f32> = (0..2 * 3 * n).map(|v| ((v as u32 ^ seed) % 97) as f32 + 1.0).collect();
            let rec = IqRecording::from_channel_major(3, n, data, 1.0, Labels::default()).unwrap();
            let segs = segment_recording(&rec, window, window).unwrap();
            for row in 0..6 {
                let rebuilt: Vec<f32> = segs
                    .iter()
                    .flat_map(|s| s.data()[row * window..(row + 1) * window].to_vec())
                    .collect();
                prop_assert_eq!(&rebuilt[..], &rec.data()[row * n..row * n + rebuilt.len()]);
            }
        }
    }
}
