//! Cosine noise schedule and the closed-form forward process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Offset `s` of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
pub const BETA_MIN: f64 = 1e-8;
pub const BETA_MAX: f64 = 0.999;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta: Vec<f64>,
    /// Cumulative products of `1 - beta`.
    pub alpha_bar: Vec<f64>,
}

/// Step `i` of the schedule sits at continuous time `(i + 1) / T`. Betas are
/// clipped to `[1e-8, 0.999]` and `alpha_bar` recomputed from the clipped
/// values, so it is a strictly decreasing product.
pub fn build_cosine_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::InvalidSteps(steps));
    }
    let s = COSINE_OFFSET;
    let f = |t: f64| (((t / steps as f64 + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    let f0 = f(0.0);
    let mut beta = Vec::with_capacity(steps);
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut prev = 1.0;
    let mut acc = 1.0;
    for i in 0..steps {
        let ab = f((i + 1) as f64) / f0;
        let b = (1.0 - ab / prev).clamp(BETA_MIN, BETA_MAX);
        prev = ab;
        acc *= 1.0 - b;
        beta.push(b);
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule { steps, beta, alpha_bar })
}

impl NoiseSchedule {
    pub fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.steps {
            return Err(Error::StepOutOfRange {
                step: t,
                total: self.steps,
            });
        }
        Ok(())
    }

    /// `sqrt(alpha_bar[t]) h0 + sqrt(1 - alpha_bar[t]) noise`
    pub fn q_sample<T: Scalar>(&self, h0: &Tensor<T>, t: usize, noise: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_step(t)?;
        if h0.shape() != noise.shape() {
            return Err(Error::ShapeMismatch(format!(
                "h0 is {:?}, noise is {:?}",
                h0.shape(),
                noise.shape()
            )));
        }
        let a = T::lit(self.alpha_bar[t].sqrt());
        let b = T::lit((1.0 - self.alpha_bar[t]).sqrt());
        Ok(h0.zip_map(noise, |x, n| a * x + b * n))
    }

    /// [`NoiseSchedule::q_sample`] with one step per leading batch entry.
    pub fn q_sample_batch<T: Scalar>(&self, h0: &Tensor<T>, t: &[usize], noise: &Tensor<T>) -> Result<Tensor<T>> {
        if h0.shape() != noise.shape() {
            return Err(Error::ShapeMismatch(format!(
                "h0 is {:?}, noise is {:?}",
                h0.shape(),
                noise.shape()
            )));
        }
        let b = h0.shape()[0];
        if t.len() != b {
            return Err(Error::ShapeMismatch(format!("{} steps for a batch of {b}", t.len())));
        }
        let per = h0.len() / b.max(1);
        let mut out = h0.clone();
        for (i, &ti) in t.iter().enumerate() {
            self.check_step(ti)?;
            let a = T::lit(self.alpha_bar[ti].sqrt());
            let s = T::lit((1.0 - self.alpha_bar[ti]).sqrt());
            let rows = i * per..(i + 1) * per;
            for (o, &n) in out.data_mut()[rows.clone()].iter_mut().zip(&noise.data()[rows]) {
                *o = a * *o + s * n;
            }
        }
        Ok(out)
    }

    /// Strictly increasing sampling subsequence `floor(i T / S)`, `i < S`.
    pub fn ddim_steps(&self, num_steps: usize) -> Result<Vec<usize>> {
        if num_steps == 0 || num_steps > self.steps {
            return Err(Error::InvalidStepCount {
                requested: num_steps,
                total: self.steps,
            });
        }
        Ok((0..num_steps).map(|i| i * self.steps / num_steps).collect())
    }
}
