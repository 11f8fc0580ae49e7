//! 3x3 rotation helpers and the continuous 6D rotation representation.
//!
//! A 6D vector stores the first two columns of a rotation matrix. Decoding
//! runs Gram-Schmidt: normalise the first column, orthogonalise the second
//! against it, and complete the frame with their cross product.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major 3x3 matrix, `m[row][col]`.
pub type Mat3<T> = [[T; 3]; 3];
pub type Vec3<T> = [T; 3];

pub fn identity<T: Scalar>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn dot<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm<T: Scalar>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

pub fn add<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale<T: Scalar>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn mat_mul<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

pub fn mat_vec<T: Scalar>(m: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn transpose<T: Scalar>(m: &Mat3<T>) -> Mat3<T> {
    let mut out = *m;
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[c][r];
        }
    }
    out
}

pub fn determinant<T: Scalar>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn column<T: Scalar>(m: &Mat3<T>, c: usize) -> Vec3<T> {
    [m[0][c], m[1][c], m[2][c]]
}

pub fn from_columns<T: Scalar>(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Mat3<T> {
    [
        [c0[0], c1[0], c2[0]],
        [c0[1], c1[1], c2[1]],
        [c0[2], c1[2], c2[2]],
    ]
}

/// Rodrigues' formula. `axis` need not be normalised; a zero axis gives identity.
pub fn axis_angle<T: Scalar>(axis: Vec3<T>, angle: T) -> Mat3<T> {
    let n = norm(axis);
    if n <= T::lit(1e-12) {
        return identity();
    }
    let [x, y, z] = scale(axis, T::one() / n);
    let (s, c) = angle.sin_cos();
    let t = T::one() - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Rotation from an axis-angle vector (direction = axis, length = angle).
pub fn rotation_vector<T: Scalar>(v: Vec3<T>) -> Mat3<T> {
    axis_angle(v, norm(v))
}

const DEGENERATE: f64 = 1e-8;

/// Decodes a 6D rotation; fails when the two columns are (nearly) parallel
/// or the first has (nearly) zero length.
pub fn rot6d_to_matrix<T: Scalar>(r: &[T; 6]) -> Result<Mat3<T>> {
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = norm(a1);
    if !(n1 > T::lit(DEGENERATE)) {
        return Err(Error::DegenerateRotation(format!(
            "first column has norm {n1}"
        )));
    }
    let b1 = scale(a1, T::one() / n1);
    let u2 = sub(a2, scale(b1, dot(b1, a2)));
    let n2 = norm(u2);
    let n_a2 = norm(a2);
    if !(n2 > T::lit(DEGENERATE) * n_a2.max(T::one())) {
        return Err(Error::DegenerateRotation(
            "columns are parallel".to_string(),
        ));
    }
    let b2 = scale(u2, T::one() / n2);
    Ok(from_columns(b1, b2, cross(b1, b2)))
}

/// Decoder used on network outputs, where degeneracy is guarded instead of reported.
pub(crate) fn rot6d_to_matrix_guarded<T: Scalar>(r: &[T]) -> Mat3<T> {
    let eps = T::lit(1e-12);
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let b1 = scale(a1, T::one() / norm(a1).max(eps));
    let u2 = sub(a2, scale(b1, dot(b1, a2)));
    let b2 = scale(u2, T::one() / norm(u2).max(eps));
    from_columns(b1, b2, cross(b1, b2))
}

/// Vector-Jacobian product of [`rot6d_to_matrix_guarded`]: maps the gradient of
/// the matrix to the gradient of the six inputs.
pub(crate) fn rot6d_backward<T: Scalar>(r: &[T], grad: &Mat3<T>) -> [T; 6] {
    let eps = T::lit(1e-12);
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = norm(a1).max(eps);
    let b1 = scale(a1, T::one() / n1);
    let proj = dot(b1, a2);
    let u2 = sub(a2, scale(b1, proj));
    let n2 = norm(u2).max(eps);
    let b2 = scale(u2, T::one() / n2);

    let g1 = column(grad, 0);
    let g2 = column(grad, 1);
    let g3 = column(grad, 2);
    // b3 = b1 x b2
    let mut gb1 = add(g1, cross(b2, g3));
    let gb2 = add(g2, cross(g3, b1));
    // b2 = u2 / |u2|
    let gu2 = scale(sub(gb2, scale(b2, dot(b2, gb2))), T::one() / n2);
    // u2 = a2 - (b1 . a2) b1
    let b1_gu2 = dot(b1, gu2);
    let ga2 = sub(gu2, scale(b1, b1_gu2));
    gb1 = sub(gb1, add(scale(gu2, proj), scale(a2, b1_gu2)));
    // b1 = a1 / |a1|
    let ga1 = scale(sub(gb1, scale(b1, dot(b1, gb1))), T::one() / n1);
    [ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]]
}

/// Encodes a rotation matrix as its first two columns.
pub fn matrix_to_rot6d<T: Scalar>(m: &Mat3<T>) -> Result<[T; 6]> {
    let mtm = mat_mul(&transpose(m), m);
    let id = identity::<T>();
    let tol = T::lit(1e-4);
    for r in 0..3 {
        for c in 0..3 {
            let err = (mtm[r][c] - id[r][c]).abs();
            if !(err <= tol) {
                return Err(Error::NotARotation(format!(
                    "M^T M deviates from identity by {err} at ({r},{c})"
                )));
            }
        }
    }
    let det = determinant(m);
    if !(det > T::zero()) {
        return Err(Error::NotARotation(format!("determinant {det}")));
    }
    Ok([m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]])
}

pub const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
