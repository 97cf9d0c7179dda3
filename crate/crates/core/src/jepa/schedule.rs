use std::f64::consts::PI;

use crate::error::{Error, Result};

fn progress(step: u64, total_steps: u64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one step".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} is past the end of a {total_steps}-step schedule"
        )));
    }
    Ok(step as f64 / total_steps as f64)
}

/// EMA momentum, cosine-increased from `tau_start` at step 0 to `tau_end` at `total_steps`.
pub fn momentum_schedule(step: u64, total_steps: u64, tau_start: f64, tau_end: f64) -> Result<f64> {
    let p = progress(step, total_steps)?;
    Ok(tau_end - (tau_end - tau_start) * (1.0 + (PI * p).cos()) / 2.0)
}

/// Cosine learning-rate decay from `base_lr` to zero.
pub fn lr_schedule(step: u64, total_steps: u64, base_lr: f64) -> Result<f64> {
    let p = progress(step, total_steps)?;
    Ok(base_lr * (1.0 + (PI * p).cos()) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_endpoints_and_midpoint() {
        assert!((momentum_schedule(0, 100, 0.996, 1.0).unwrap() - 0.996).abs() < 1e-12);
        assert_eq!(momentum_schedule(100, 100, 0.996, 1.0).unwrap(), 1.0);
        assert!((momentum_schedule(50, 100, 0.996, 1.0).unwrap() - 0.998).abs() < 1e-12);
        assert!(momentum_schedule(0, 0, 0.996, 1.0).is_err());
        assert!(momentum_schedule(101, 100, 0.996, 1.0).is_err());
    }

    #[test]
    fn lr_endpoints_and_midpoint() {
        assert_eq!(lr_schedule(0, 10, 1e-3).unwrap(), 1e-3);
        assert_eq!(lr_schedule(10, 10, 1e-3).unwrap(), 0.0);
        assert!((lr_schedule(5, 10, 1e-3).unwrap() - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn schedules_are_monotone() {
        let mut prev_tau = 0.0;
        let mut prev_lr = f64::INFINITY;
        for s in 0..=1000 {
            let tau = momentum_schedule(s, 1000, 0.996, 1.0).unwrap();
            let lr = lr_schedule(s, 1000, 0.1).unwrap();
            assert!(tau >= prev_tau && lr <= prev_lr);
            prev_tau = tau;
            prev_lr = lr;
        }
    }
}
