use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SPS: usize = 4;
pub const DEFAULT_ROLLOFF: f64 = 0.35;
/// RRC length in symbols on each side of the peak.
pub const RRC_HALF_SPAN: usize = 4;
/// Continuous-phase 2-FSK deviation in cycles per sample (modulation index 1 at 4 sps).
pub const FSK_DEVIATION: f64 = 0.125;
pub const TONE_MAX_FREQ: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WaveformClass {
    Bpsk,
    Qpsk,
    Psk8,
    Qam16,
    Qam64,
    Fsk2,
    Tone,
}

impl WaveformClass {
    pub const ALL: [WaveformClass; 7] = [
        Self::Bpsk,
        Self::Qpsk,
        Self::Psk8,
        Self::Qam16,
        Self::Qam64,
        Self::Fsk2,
        Self::Tone,
    ];

    pub fn id(self) -> u16 {
        Self::ALL.iter().position(|&c| c == self).expect("listed") as u16
    }

    pub fn from_id(id: u16) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("waveform id {id} out of range 0..7")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bpsk => "BPSK",
            Self::Qpsk => "QPSK",
            Self::Psk8 => "PSK8",
            Self::Qam16 => "QAM16",
            Self::Qam64 => "QAM64",
            Self::Fsk2 => "FSK2",
            Self::Tone => "TONE",
        }
    }

    /// Unit-average-power symbol alphabet; empty for the non-linear classes.
    pub fn constellation(self) -> Vec<Complex64> {
        match self {
            Self::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            Self::Qpsk => (0..4)
                .map(|k| Complex64::from_polar(1.0, PI / 4.0 + k as f64 * PI / 2.0))
                .collect(),
            Self::Psk8 => (0..8).map(|k| Complex64::from_polar(1.0, k as f64 * PI / 4.0)).collect(),
            Self::Qam16 => square_qam(4),
            Self::Qam64 => square_qam(8),
            Self::Fsk2 | Self::Tone => Vec::new(),
        }
    }

    pub fn is_linear(self) -> bool {
        !matches!(self, Self::Fsk2 | Self::Tone)
    }
}

impl fmt::Display for WaveformClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WaveformClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown waveform '{s}'")))
    }
}

fn square_qam(side: usize) -> Vec<Complex64> {
    let levels: Vec<f64> = (0..side).map(|i| 2.0 * i as f64 - (side as f64 - 1.0)).collect();
    // mean |s|² of a square M-QAM grid is 2(M-1)/3 with M = side²
    let scale = (2.0 * ((side * side) as f64 - 1.0) / 3.0).sqrt();
    let mut pts = Vec::with_capacity(side * side);
    for &i in &levels {
        for &q in &levels {
            pts.push(Complex64::new(i / scale, q / scale));
        }
    }
    pts
}

/// Root-raised-cosine taps (`2·half_span·sps + 1` of them), scaled so `Σh² = sps`.
pub fn rrc_taps(sps: usize, rolloff: f64, half_span: usize) -> Vec<f64> {
    let b = rolloff;
    let n = half_span * sps;
    let mut h: Vec<f64> = (0..=2 * n)
        .map(|i| {
            let t = (i as f64 - n as f64) / sps as f64;
            if t == 0.0 {
                1.0 - b + 4.0 * b / PI
            } else if b > 0.0 && ((4.0 * b * t).abs() - 1.0).abs() < 1e-12 {
                b / 2f64.sqrt() * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
            } else {
                let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
                let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy: f64 = h.iter().map(|v| v * v).sum();
    let k = (sps as f64 / energy).sqrt();
    h.iter_mut().for_each(|v| *v *= k);
    h
}

/// `count` i.i.d. uniform symbols from the class alphabet.
pub fn draw_symbols(class: WaveformClass, count: usize, rng: &mut impl Rng) -> Vec<Complex64> {
    let alphabet = match class {
        WaveformClass::Fsk2 => WaveformClass::Bpsk.constellation(),
        WaveformClass::Tone => return vec![Complex64::new(1.0, 0.0); count],
        c => c.constellation(),
    };
    (0..count)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())])
        .collect()
}

/// Complex baseband of `n_samples` samples with unit average power.
///
/// Linear classes use `⌈n/sps⌉` symbols shaped by a circular RRC convolution,
/// so the power is stationary across the whole window. 2-FSK is
/// continuous-phase; TONE is `e^{j2πf₀t}` with `f₀` uniform in `±0.1`.
pub fn modulate(class: WaveformClass, n_samples: usize, sps: usize, rolloff: f64, rng: &mut impl Rng) -> Result<Vec<Complex64>> {
    if sps == 0 || n_samples < sps {
        return Err(Error::InvalidArgument(format!(
            "need at least one symbol: {n_samples} samples at {sps} samples per symbol"
        )));
    }
    if !(0.0..=1.0).contains(&rolloff) {
        return Err(Error::InvalidArgument(format!("rolloff {rolloff} outside [0, 1]")));
    }
    let n_sym = n_samples.div_ceil(sps);
    match class {
        WaveformClass::Tone => {
            let f0 = rng.random_range(-TONE_MAX_FREQ..TONE_MAX_FREQ);
            Ok((0..n_samples)
                .map(|t| Complex64::from_polar(1.0, 2.0 * PI * f0 * t as f64))
                .collect())
        }
        WaveformClass::Fsk2 => {
            let symbols = draw_symbols(class, n_sym, rng);
            let mut phase = 0.0f64;
            let mut out = Vec::with_capacity(n_samples);
            for t in 0..n_samples {
                out.push(Complex64::from_polar(1.0, phase));
                phase += 2.0 * PI * FSK_DEVIATION * symbols[t / sps].re;
            }
            Ok(out)
        }
        _ => {
            let symbols = draw_symbols(class, n_sym, rng);
            let h = rrc_taps(sps, rolloff, RRC_HALF_SPAN);
            let len = n_sym * sps;
            let centre = (h.len() / 2) as isize;
            let mut out = vec![Complex64::new(0.0, 0.0); len];
            for (k, s) in symbols.iter().enumerate() {
                let peak = (k * sps) as isize;
                for (i, &tap) in h.iter().enumerate() {
                    let t = (peak + i as isize - centre).rem_euclid(len as isize) as usize;
                    out[t] += s * tap;
                }
            }
            out.truncate(n_samples);
            Ok(out)
        }
    }
}

/// Mean `|x|²`.
pub fn mean_power(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seven_classes_with_stable_ids() {
        assert_eq!(WaveformClass::ALL.len(), 7);
        for (i, c) in WaveformClass::ALL.iter().enumerate() {
            assert_eq!(c.id() as usize, i);
            assert_eq!(WaveformClass::from_id(i as u16).unwrap(), *c);
            assert_eq!(c.name().parse::<WaveformClass>().unwrap(), *c);
        }
        assert!(WaveformClass::from_id(7).is_err());
    }

    #[test]
    fn constellations_have_unit_power() {
        for c in WaveformClass::ALL.iter().filter(|c| c.is_linear()) {
            let p = mean_power(&c.constellation());
            assert!((p - 1.0).abs() < 1e-12, "{c}: {p}");
        }
    }

    #[test]
    fn rrc_energy_is_sps() {
        let h = rrc_taps(4, 0.35, 4);
        assert_eq!(h.len(), 33);
        assert!((h.iter().map(|v| v * v).sum::<f64>() - 4.0).abs() < 1e-12);
        // symmetric
        for i in 0..h.len() {
            assert!((h[i] - h[h.len() - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn tone_is_constant_modulus() {
        let x = modulate(WaveformClass::Tone, 256, 4, 0.35, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(x.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn bpsk_symbol_count_and_alphabet() {
        let s = draw_symbols(WaveformClass::Bpsk, 64 / 4, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(s.len(), 16);
        assert!(s.iter().all(|v| v.im == 0.0 && v.re.abs() == 1.0));
        let x = modulate(WaveformClass::Bpsk, 64, 4, 0.35, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(x.len(), 64);
    }

    #[test]
    fn monte_carlo_power_within_five_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for c in WaveformClass::ALL {
            let mut acc = 0.0;
            let mut n = 0usize;
            while n < 100_000 {
                let x = modulate(c, 1024, 4, 0.35, &mut rng).unwrap();
                acc += x.iter().map(|v| v.norm_sqr()).sum::<f64>();
                n += x.len();
            }
            let p = acc / n as f64;
            assert!((0.95..=1.05).contains(&p), "{c}: power {p}");
        }
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(modulate(WaveformClass::Qpsk, 3, 4, 0.35, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
