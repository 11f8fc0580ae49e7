use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const JITTER: f64 = 1e-6;

fn moments(set: &[Vec<f64>], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len() as f64;
    let mut mu = DVector::zeros(dim);
    for v in set {
        mu += DVector::from_column_slice(v);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in set {
        let d = DVector::from_column_slice(v) - &mu;
        cov += &d * d.transpose();
    }
    cov /= n - 1.0;
    for i in 0..dim {
        cov[(i, i)] += JITTER;
    }
    (mu, cov)
}

/// Square root of a symmetric positive semi-definite matrix; negative
/// eigenvalues from round-off are clipped to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, with the cross term
/// evaluated as `Tr(sqrt(sqrt(S_a) S_b sqrt(S_a)))`, which is symmetric.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    for set in [a, b] {
        if set.len() < 2 {
            return Err(Error::TooFewSamples { need: 2, got: set.len() });
        }
    }
    let dim = a[0].len();
    if let Some(bad) = a.iter().chain(b).find(|v| v.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let (mu_a, s_a) = moments(a, dim);
    let (mu_b, s_b) = moments(b, dim);
    let root_a = sqrt_psd(&s_a);
    let cross = sqrt_psd(&(&root_a * &s_b * &root_a)).trace();
    let d = (mu_a - mu_b).norm_squared() + s_a.trace() + s_b.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}
