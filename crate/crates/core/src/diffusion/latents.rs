//! Packing of the two latent streams into one sequence, and per-channel
//! standardisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `[M, 2D]` and `[M/2, D]` into `[M, 3D]`: `h_b'` first, then `h_t` repeated
/// twice along time.
pub fn pack<T: Scalar>(h_b_prime: &Tensor<T>, h_t: &Tensor<T>) -> Result<Tensor<T>> {
    if h_b_prime.ndim() != 2 || h_t.ndim() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "pack expects 2-D inputs, got {:?} and {:?}",
            h_b_prime.shape(),
            h_t.shape()
        )));
    }
    let (m, wb) = (h_b_prime.shape()[0], h_b_prime.shape()[1]);
    let (mt, d) = (h_t.shape()[0], h_t.shape()[1]);
    if wb != 2 * d {
        return Err(Error::DimMismatch {
            expected: 2 * d,
            got: wb,
        });
    }
    if m != 2 * mt {
        return Err(Error::LengthMismatch(format!("{mt} top steps need {} bottom steps, got {m}", 2 * mt)));
    }
    let mut out = Vec::with_capacity(m * 3 * d);
    for i in 0..m {
        out.extend_from_slice(h_b_prime.row(i));
        out.extend_from_slice(h_t.row(i / 2));
    }
    Ok(Tensor::new(&[m, 3 * d], out))
}

/// Inverse of [`pack`]; the top stream is read from even rows.
pub fn unpack<T: Scalar>(h: &Tensor<T>, code_dim: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    if h.ndim() != 2 || h.shape()[1] != 3 * code_dim {
        return Err(Error::DimMismatch {
            expected: 3 * code_dim,
            got: h.last_dim(),
        });
    }
    let m = h.shape()[0];
    if !m.is_multiple_of(2) {
        return Err(Error::LengthMismatch(format!("packed length {m} is odd")));
    }
    let d = code_dim;
    let mut hb = Vec::with_capacity(m * 2 * d);
    let mut ht = Vec::with_capacity(m / 2 * d);
    for i in 0..m {
        let r = h.row(i);
        hb.extend_from_slice(&r[..2 * d]);
        if i % 2 == 0 {
            ht.extend_from_slice(&r[2 * d..]);
        }
    }
    Ok((Tensor::new(&[m, 2 * d], hb), Tensor::new(&[m / 2, d], ht)))
}

/// Per-channel mean and standard deviation of a latent corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Channels with a smaller spread are left unscaled.
pub const MIN_STD: f64 = 1e-5;

impl LatentStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Fits over every row of every sample.
    pub fn fit<T: Scalar>(samples: &[Tensor<T>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or(Error::TooFewSamples { need: 1, got: 0 })?;
        let c = first.last_dim();
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut n = 0usize;
        for s in samples {
            if s.last_dim() != c {
                return Err(Error::DimMismatch {
                    expected: c,
                    got: s.last_dim(),
                });
            }
            for row in s.data().chunks(c) {
                for (k, &v) in row.iter().enumerate() {
                    let v = v.as_f64();
                    sum[k] += v;
                    sq[k] += v * v;
                }
                n += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n as f64 - m * m).max(0.0);
                let s = var.sqrt();
                if s < MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check<T: Scalar>(&self, h: &Tensor<T>) -> Result<()> {
        if h.last_dim() != self.channels() {
            return Err(Error::DimMismatch {
                expected: self.channels(),
                got: h.last_dim(),
            });
        }
        Ok(())
    }

    pub fn standardize<T: Scalar>(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(h)?;
        let mut out = h.clone();
        for row in out.data_mut().chunks_mut(self.channels()) {
            for (k, v) in row.iter_mut().enumerate() {
                *v = T::lit((v.as_f64() - self.mean[k]) / self.std[k]);
            }
        }
        Ok(out)
    }

    pub fn destandardize<T: Scalar>(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(h)?;
        let mut out = h.clone();
        for row in out.data_mut().chunks_mut(self.channels()) {
            for (k, v) in row.iter_mut().enumerate() {
                *v = T::lit(v.as_f64() * self.std[k] + self.mean[k]);
            }
        }
        Ok(out)
    }
}
