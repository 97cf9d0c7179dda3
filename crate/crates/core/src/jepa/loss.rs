use crate::error::{Error, Result};
use crate::masks::LatentMask;
use crate::tensor::{Scalar, Tensor4};

fn check<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>, masks: &[LatentMask]) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    if masks.len() != pred.n() {
        return Err(Error::Shape(format!("{} masks for batch of {}", masks.len(), pred.n())));
    }
    for m in masks {
        if m.dims() != (pred.h(), pred.w()) {
            return Err(Error::Shape(format!(
                "mask {:?} does not match latent {}x{}",
                m.dims(),
                pred.h(),
                pred.w()
            )));
        }
        if m.masked_count() == 0 {
            return Err(Error::Mask("loss needs at least one masked cell".into()));
        }
    }
    Ok(())
}

/// Per sample: `(1/|M|) Σ_{(i,j)∈M} ‖ŷ[:,i,j] − y[:,i,j]‖²`; averaged over the batch.
///
/// Only masked cells are read. Accumulation is in `f64`.
pub fn masked_l2_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>, masks: &[LatentMask]) -> Result<f64> {
    check(pred, target, masks)?;
    let w = pred.w();
    let mut total = 0.0f64;
    for (n, m) in masks.iter().enumerate() {
        let mut s = 0.0f64;
        for (r, c) in m.masked_indices() {
            for ch in 0..pred.c() {
                let d = (pred.plane(n, ch)[r * w + c] - target.plane(n, ch)[r * w + c]).as_f64();
                s += d * d;
            }
        }
        total += s / m.masked_count() as f64;
    }
    Ok(total / masks.len() as f64)
}

/// Loss and its gradient with respect to `pred` (zero at unmasked cells).
pub fn masked_l2_loss_grad<T: Scalar>(
    pred: &Tensor4<T>,
    target: &Tensor4<T>,
    masks: &[LatentMask],
) -> Result<(f64, Tensor4<T>)> {
    let loss = masked_l2_loss(pred, target, masks)?;
    let w = pred.w();
    let mut grad = Tensor4::zeros(pred.shape());
    let batch = masks.len() as f64;
    for (n, m) in masks.iter().enumerate() {
        let scale = T::from_f64_lossy(2.0 / (m.masked_count() as f64 * batch));
        for (r, c) in m.masked_indices() {
            for ch in 0..pred.c() {
                let d = pred.plane(n, ch)[r * w + c] - target.plane(n, ch)[r * w + c];
                grad.plane_mut(n, ch)[r * w + c] = scale * d;
            }
        }
    }
    Ok((loss, grad))
}
