//! Nearest-neighbour vector quantization.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `K x D` table of prototype vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T> {
    entries: Tensor<T>,
}

impl<T: Scalar> Codebook<T> {
    pub fn new(entries: Tensor<T>) -> Result<Self> {
        if entries.ndim() != 2 {
            return Err(Error::ShapeMismatch(format!("codebook must be K x D, got {:?}", entries.shape())));
        }
        if entries.shape()[0] < 2 {
            return Err(Error::InvalidArgument("codebook needs at least two entries".into()));
        }
        if !entries.is_finite() {
            return Err(Error::InvalidArgument("codebook entries must be finite".into()));
        }
        Ok(Self { entries })
    }

    pub fn size(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn entries(&self) -> &Tensor<T> {
        &self.entries
    }

    pub fn entry(&self, k: usize) -> &[T] {
        self.entries.row(k)
    }

    /// Rows of `h` (any leading shape, last axis `D`) to nearest entries.
    pub fn quantize(&self, h: &Tensor<T>) -> Result<(Vec<usize>, Tensor<T>)> {
        if h.last_dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: h.last_dim(),
            });
        }
        let idx = nearest_indices(h, &self.entries);
        Ok((idx.clone(), self.lookup(&idx, h.shape())))
    }

    /// Entries for `idx`, shaped `lead ++ [D]` where `shape` ends in any width.
    pub fn lookup(&self, idx: &[usize], shape: &[usize]) -> Tensor<T> {
        let mut out = Vec::with_capacity(idx.len() * self.dim());
        for &k in idx {
            out.extend_from_slice(self.entry(k));
        }
        let mut s = shape[..shape.len() - 1].to_vec();
        s.push(self.dim());
        Tensor::new(&s, out)
    }
}

/// Exact squared-distance argmin per row; ties go to the lowest index.
pub fn nearest_indices<T: Scalar>(h: &Tensor<T>, table: &Tensor<T>) -> Vec<usize> {
    let d = table.last_dim();
    debug_assert_eq!(h.last_dim(), d);
    let k = table.shape()[0];
    let rows = h.len() / d.max(1);
    (0..rows)
        .map(|r| {
            let x = &h.data()[r * d..(r + 1) * d];
            let mut best = 0;
            let mut best_d = T::infinity();
            for j in 0..k {
                let e = table.row(j);
                let mut s = T::zero();
                for c in 0..d {
                    let diff = x[c] - e[c];
                    s += diff * diff;
                }
                if s < best_d {
                    best_d = s;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// `exp(entropy)` of the index histogram: the effective number of codes in use.
pub fn perplexity(indices: &[usize], codebook_size: usize) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; codebook_size];
    for &i in indices {
        counts[i] += 1;
    }
    let n = indices.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    h.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cb(rows: &[[f64; 2]]) -> Codebook<f64> {
        Codebook::new(Tensor::new(&[rows.len(), 2], rows.iter().flatten().copied().collect())).unwrap()
    }

    #[test]
    fn nearest_of_two() {
        let c = cb(&[[0.0, 0.0], [1.0, 1.0]]);
        let (i, q) = c.quantize(&Tensor::new(&[1, 2], vec![0.9, 1.2])).unwrap();
        assert_eq!(i, vec![1]);
        assert_eq!(q.data(), &[1.0, 1.0]);
    }

    #[test]
    fn equidistant_goes_to_lowest_index() {
        let c = cb(&[[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]]);
        let (i, _) = c.quantize(&Tensor::new(&[1, 2], vec![0.25, 0.0])).unwrap();
        assert_eq!(i, vec![0]);
        let c = cb(&[[1.0, 0.0], [-1.0, 0.0]]);
        assert_eq!(c.quantize(&Tensor::new(&[1, 2], vec![0.0, 3.0])).unwrap().0, vec![0]);
    }

    #[test]
    fn wrong_width_is_rejected() {
        let c = cb(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(
            c.quantize(&Tensor::new(&[1, 3], vec![0.0; 3])),
            Err(Error::DimMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn perplexity_of_uniform_use() {
        assert!((perplexity(&[0, 1, 2, 3], 8) - 4.0).abs() < 1e-12);
        assert!((perplexity(&[5, 5, 5], 8) - 1.0).abs() < 1e-12);
    }
}
