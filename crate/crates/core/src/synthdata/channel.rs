use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::waveform::mean_power;
use crate::error::{Error, Result};

/// Half-wavelength ULA: antenna `n` sees `x · e^{jπ n sin θ}`.
pub fn apply_steering(baseband: &[Complex64], aoa_deg: f64, antennas: usize) -> Result<Vec<Vec<Complex64>>> {
    if !(aoa_deg.abs() <= 90.0) {
        return Err(Error::InvalidArgument(format!("angle of arrival {aoa_deg} outside [-90, 90]")));
    }
    if antennas == 0 {
        return Err(Error::InvalidArgument("need at least one antenna".into()));
    }
    let s = aoa_deg.to_radians().sin();
    Ok((0..antennas)
        .map(|n| {
            let w = Complex64::from_polar(1.0, PI * n as f64 * s);
            baseband.iter().map(|&x| x * w).collect()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Inclusive SNR range in dB; a sample's SNR is uniform inside it.
    pub snr_db: (f64, f64),
    /// Maximum |CFO| as a fraction of the sample rate.
    pub cfo_max: f64,
    pub antennas: usize,
    /// `false` disables AWGN (the infinite-SNR path).
    pub noise: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            snr_db: (0.0, 20.0),
            cfo_max: 1e-4,
            antennas: 4,
            noise: true,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.snr_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidArgument(format!("invalid SNR range [{lo}, {hi}]")));
        }
        if !(self.cfo_max >= 0.0 && self.cfo_max < 0.01) {
            return Err(Error::InvalidArgument(format!("CFO bound {} must lie in [0, 0.01)", self.cfo_max)));
        }
        if self.antennas == 0 {
            return Err(Error::InvalidArgument("need at least one antenna".into()));
        }
        Ok(())
    }
}

/// One realization of the channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Impairments {
    pub phase: f64,
    pub cfo: f64,
    /// `None` = noiseless.
    pub snr_db: Option<f64>,
}

impl Impairments {
    pub fn draw(cfg: &ChannelConfig, rng: &mut impl Rng) -> Self {
        let phase = rng.random_range(0.0..2.0 * PI);
        let cfo = if cfg.cfo_max > 0.0 {
            rng.random_range(-cfg.cfo_max..=cfg.cfo_max)
        } else {
            0.0
        };
        let (lo, hi) = cfg.snr_db;
        let snr = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        Self {
            phase,
            cfo,
            snr_db: cfg.noise.then_some(snr),
        }
    }
}

/// Common phase and CFO rotation on every antenna, then i.i.d. complex AWGN
/// per antenna at the drawn SNR relative to the mean signal power.
pub fn apply_channel(signal: &[Vec<Complex64>], cfg: &ChannelConfig, rng: &mut impl Rng) -> Result<Vec<Vec<Complex64>>> {
    cfg.validate()?;
    let imp = Impairments::draw(cfg, rng);
    apply_impairments(signal, &imp, rng)
}

pub fn apply_impairments(signal: &[Vec<Complex64>], imp: &Impairments, rng: &mut impl Rng) -> Result<Vec<Vec<Complex64>>> {
    let len = signal.first().map_or(0, Vec::len);
    if signal.iter().any(|a| a.len() != len) {
        return Err(Error::Shape("antenna streams differ in length".into()));
    }
    let rot: Vec<Complex64> = (0..len)
        .map(|t| Complex64::from_polar(1.0, imp.phase + 2.0 * PI * imp.cfo * t as f64))
        .collect();
    let mut out: Vec<Vec<Complex64>> = signal
        .iter()
        .map(|a| a.iter().zip(&rot).map(|(x, r)| x * r).collect())
        .collect();
    if let Some(snr) = imp.snr_db {
        let p = out.iter().map(|a| mean_power(a)).sum::<f64>() / out.len().max(1) as f64;
        let sigma = (p / 10f64.powf(snr / 10.0) / 2.0).sqrt();
        for a in &mut out {
            for v in a.iter_mut() {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                *v += Complex64::new(sigma * re, sigma * im);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::waveform::{modulate, WaveformClass};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn base(n: usize) -> Vec<Complex64> {
        modulate(WaveformClass::Qpsk, n, 4, 0.35, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn broadside_is_identical_on_all_antennas() {
        let x = base(64);
        let y = apply_steering(&x, 0.0, 4).unwrap();
        for a in &y {
            assert_eq!(a, &x);
        }
    }

    #[test]
    fn endfire_flips_the_next_antenna() {
        let x = base(64);
        let y = apply_steering(&x, 90.0, 2).unwrap();
        assert!(y[0].iter().zip(&y[1]).all(|(a, b)| close(*b, -*a)));
    }

    #[test]
    fn thirty_degrees_flips_antenna_two() {
        let x = base(64);
        let y = apply_steering(&x, 30.0, 3).unwrap();
        assert!(y[0].iter().zip(&y[2]).all(|(a, b)| close(*b, -*a)));
    }

    #[test]
    fn steering_rejects_out_of_range() {
        assert!(apply_steering(&base(8), 90.5, 4).is_err());
        assert!(apply_steering(&base(8), f64::NAN, 4).is_err());
    }

    #[test]
    fn noiseless_zero_cfo_is_a_global_phase() {
        let x = apply_steering(&base(128), 20.0, 4).unwrap();
        let cfg = ChannelConfig {
            cfo_max: 0.0,
            noise: false,
            ..ChannelConfig::default()
        };
        let y = apply_channel(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let g = y[0][0] / x[0][0];
        assert!((g.norm() - 1.0).abs() < 1e-12);
        for (a, b) in x.iter().zip(&y) {
            for (u, v) in a.iter().zip(b) {
                assert!(close(u * g, *v));
            }
        }
    }

    #[test]
    fn measured_snr_matches_request() {
        let x = apply_steering(&base(100_000), -40.0, 2).unwrap();
        for snr in [0.0, 10.0, 20.0] {
            let imp = Impairments {
                phase: 0.3,
                cfo: 5e-5,
                snr_db: Some(snr),
            };
            let clean = apply_impairments(&x, &Impairments { snr_db: None, ..imp }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let noisy = apply_impairments(&x, &imp, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let ps = mean_power(&clean[0]);
            let noise: Vec<Complex64> = noisy[0].iter().zip(&clean[0]).map(|(a, b)| a - b).collect();
            let measured = 10.0 * (ps / mean_power(&noise)).log10();
            assert!((measured - snr).abs() < 0.5, "{snr} dB requested, {measured} measured");
        }
    }

    #[test]
    fn cfo_preserves_inter_antenna_phase() {
        let x = apply_steering(&base(256), 50.0, 4).unwrap();
        let imp = Impairments {
            phase: 1.1,
            cfo: 1e-4,
            snr_db: None,
        };
        let y = apply_impairments(&x, &imp, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for t in 0..256 {
            for n in 1..4 {
                assert!(close(y[n][t] / y[0][t], x[n][t] / x[0][t]));
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(ChannelConfig::default().validate().is_ok());
        assert!(ChannelConfig { cfo_max: 0.02, ..Default::default() }.validate().is_err());
        assert!(ChannelConfig { snr_db: (10.0, 0.0), ..Default::default() }.validate().is_err());
    }
}
