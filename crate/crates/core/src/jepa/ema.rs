use crate::backbone::{Encoder, TeacherState};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// `θ̄ ← τ θ̄ + (1 − τ) θ` for every trainable teacher tensor.
///
/// Normalization running statistics are not copied; the teacher tracks its own.
pub fn ema_update<T: Scalar>(teacher: &mut TeacherState<T>, student: &Encoder<T>, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("momentum {tau} outside [0, 1]")));
    }
    if teacher.encoder.layer_specs() != student.layer_specs() {
        return Err(Error::Shape("teacher and student architectures differ".into()));
    }
    let src = student.net.named_params();
    let dst = teacher.encoder.net.params_mut();
    let keep = T::from_f64_lossy(tau);
    let take = T::from_f64_lossy(1.0 - tau);
    for (t, (name, s)) in dst.into_iter().zip(src) {
        if t.len() != s.len() {
            return Err(Error::Shape(format!("tensor {name} has mismatched length")));
        }
        for (tv, &sv) in t.value.iter_mut().zip(&s.value) {
            *tv = keep * *tv + take * sv;
        }
    }
    teacher.tau = tau;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::EncoderArch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> (TeacherState<f64>, Encoder<f64>) {
        let student = Encoder::new(EncoderArch::tiny(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let other = Encoder::new(EncoderArch::tiny(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        (TeacherState::from_student(&other, 0.996), student)
    }

    fn values(e: &Encoder<f64>) -> Vec<f64> {
        e.net.named_params().iter().flat_map(|(_, p)| p.value.clone()).collect()
    }

    #[test]
    fn limits() {
        let (mut t, s) = pair();
        let before = values(&t.encoder);
        ema_update(&mut t, &s, 1.0).unwrap();
        assert_eq!(values(&t.encoder), before);
        ema_update(&mut t, &s, 0.0).unwrap();
        assert_eq!(values(&t.encoder), values(&s));
    }

    #[test]
    fn closed_form_after_k_steps() {
        let (mut t, s) = pair();
        let t0 = values(&t.encoder);
        let theta = values(&s);
        let (tau, k) = (0.9f64, 10);
        for _ in 0..k {
            ema_update(&mut t, &s, tau).unwrap();
        }
        let tk = tau.powi(k);
        for ((got, a), b) in values(&t.encoder).iter().zip(&t0).zip(&theta) {
            assert!((got - (tk * a + (1.0 - tk) * b)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_architecture() {
        let (mut t, _) = pair();
        let wide = Encoder::new(EncoderArch::tiny_with_latent(4), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(ema_update(&mut t, &wide, 0.5).is_err());
    }
}
