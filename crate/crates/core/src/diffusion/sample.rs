//! Training objective and deterministic DDIM sampling.

use rand::Rng;

use super::denoiser::Denoise;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `mean |h0 - G(q_sample(h0, t, noise), t, cond)|^2`
pub fn diffusion_training_loss<T: Scalar, D: Denoise<T> + ?Sized>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    h0: &Tensor<T>,
    cond: &Tensor<T>,
    t: &[usize],
    noise: &Tensor<T>,
) -> Result<f64> {
    let noisy = schedule.q_sample_batch(h0, t, noise)?;
    let pred = denoiser.denoise(&noisy, t, cond)?;
    if pred.shape() != h0.shape() {
        return Err(Error::ShapeMismatch(format!(
            "denoiser returned {:?} for {:?}",
            pred.shape(),
            h0.shape()
        )));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(h0.data())
        .map(|(&a, &b)| (a - b).as_f64().powi(2))
        .sum();
    Ok(sum / h0.len() as f64)
}

/// Deterministic DDIM (`eta = 0`) from unit Gaussian noise of `shape`.
///
/// At each step of [`NoiseSchedule::ddim_steps`] the clean estimate is
/// predicted, the implied noise recovered, and both are recombined at the
/// previous step's noise level. Returns the clean estimate at step 0.
pub fn ddim_sample<T: Scalar, D: Denoise<T> + ?Sized, R: Rng>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    cond: &Tensor<T>,
    shape: &[usize],
    num_steps: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let steps = schedule.ddim_steps(num_steps)?;
    let batch = *shape
        .first()
        .ok_or_else(|| Error::ShapeMismatch("sample shape is empty".into()))?;
    let mut x = Tensor::<T>::randn(shape, 1.0, rng);
    for i in (0..steps.len()).rev() {
        let t = steps[i];
        let x0 = denoiser.denoise(&x, &vec![t; batch], cond)?;
        if i == 0 {
            return Ok(x0);
        }
        let ab = schedule.alpha_bar[t];
        let ab_prev = schedule.alpha_bar[steps[i - 1]];
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (pa, pn) = (T::lit(ab_prev.sqrt()), T::lit((1.0 - ab_prev).sqrt()));
        x = x.zip_map(&x0, |xt, c| {
            let eps = (xt - T::lit(sa) * c) / T::lit(sn);
            pa * c + pn * eps
        });
    }
    unreachable!("ddim_steps returns at least one step")
}
