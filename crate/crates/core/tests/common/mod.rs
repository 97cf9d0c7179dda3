//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use iqjepa::backbone::EncoderArch;
use iqjepa::jepa::JepaModel;
use iqjepa::masks::{generate_mask, Geometry, LatentMask, MaskSpec};
use iqjepa::{Scalar, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<T: Scalar>(shape: [usize; 4], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor4<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(lo..hi))).collect();
    Tensor4::from_vec(shape, data).unwrap()
}

pub fn masks(geometry: Geometry, dims: (usize, usize), band_rows: usize, fraction: f64, n: usize, rng: &mut impl Rng) -> Vec<LatentMask> {
    let spec = MaskSpec::for_grid(geometry, dims, band_rows).with_fraction(fraction);
    (0..n).map(|_| generate_mask(&spec, dims, rng).unwrap()).collect()
}

/// Tiny model with a 16×16 input (4×4 latent grid, 2 rows per antenna band).
pub fn tiny_model<T: Scalar>(seed: u64) -> JepaModel<T> {
    JepaModel::new(EncoderArch::tiny(), 3, 0.996, &mut rng(seed)).unwrap()
}

pub fn param_names<T: Scalar>(m: &JepaModel<T>) -> Vec<String> {
    let mut v: Vec<String> = m.student.net.named_params().into_iter().map(|(n, _)| format!("encoder.{n}")).collect();
    v.extend(m.predictor.net.named_params().into_iter().map(|(n, _)| format!("predictor.{n}")));
    v.push("mask_token".into());
    v
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, 0 when both vanish.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let d = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let s = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if s == 0.0 {
        0.0
    } else {
        d / s
    }
}

pub fn analytic_grads<T: Scalar>(model: &mut JepaModel<T>, x: &Tensor4<T>, masks: &[LatentMask]) -> Vec<Vec<f64>> {
    model.loss_and_grads(x, masks).unwrap();
    model
        .trainable_mut()
        .iter()
        .map(|p| p.grad.iter().map(|g| g.as_f64()).collect())
        .collect()
}

/// Central differences of the full masked-prediction loss for every entry of θ, φ and z.
pub fn numeric_grads<T: Scalar>(model: &mut JepaModel<T>, x: &Tensor4<T>, masks: &[LatentMask], h: f64) -> Vec<Vec<f64>> {
    let sizes: Vec<usize> = model.trainable_mut().iter().map(|p| p.value.len()).collect();
    let mut out = Vec::new();
    for (ti, &len) in sizes.iter().enumerate() {
        let mut g = Vec::with_capacity(len);
        for j in 0..len {
            let orig = model.trainable_mut()[ti].value[j];
            model.trainable_mut()[ti].value[j] = T::from_f64_lossy(orig.as_f64() + h);
            let up = model.loss(x, masks).unwrap();
            model.trainable_mut()[ti].value[j] = T::from_f64_lossy(orig.as_f64() - h);
            let down = model.loss(x, masks).unwrap();
            model.trainable_mut()[ti].value[j] = orig;
            g.push((up - down) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

/// Exact f64 copy of a model (student, predictor, token and teacher).
pub fn widen<T: Scalar>(m: &JepaModel<T>) -> JepaModel<f64> {
    let mut w = JepaModel::from_parts(m.student.cast(), m.predictor.cast(), m.token.cast(), m.teacher.tau);
    w.teacher.encoder = m.teacher.encoder.cast();
    w
}

/// Relative error per parameter group: encoder θ, predictor φ, mask token z.
pub fn group_errors(names: &[String], a: &[Vec<f64>], n: &[Vec<f64>]) -> Vec<(&'static str, f64)> {
    ["encoder", "predictor", "mask_token"]
        .into_iter()
        .map(|g| {
            let pick = |v: &[Vec<f64>]| -> Vec<f64> {
                names.iter().zip(v).filter(|(k, _)| k.starts_with(g)).flat_map(|(_, t)| t.clone()).collect()
            };
            (g, rel_err(&pick(a), &pick(n)))
        })
        .collect()
}

/// Backprop of `model` against central differences evaluated in float64 at
/// the same parameter and input values.
pub fn gradcheck<T: Scalar>(model: &mut JepaModel<T>, x: &Tensor4<T>, masks: &[LatentMask], h: f64) -> Vec<(&'static str, f64)> {
    let a = analytic_grads(model, x, masks);
    let n = numeric_grads(&mut widen(model), &x.cast(), masks, h);
    group_errors(&param_names(model), &a, &n)
}
