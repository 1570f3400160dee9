//! Small dense symmetric-matrix helpers on row-major `d × d` slices.
//!
//! Everything here has a scalar fast path for `d = 1`, which is what the
//! lattice engines and most simulations hit in their inner loops.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative cutoff below which eigenvalues are treated as zero in [`pinv_solve`].
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-12;

/// Replace `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut [f64], d: usize) {
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (m[i * d + j] + m[j * d + i]);
            m[i * d + j] = avg;
            m[j * d + i] = avg;
        }
    }
}

fn to_dmatrix(m: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, m)
}

/// Eigenvalues (ascending) and the matching orthonormal eigenvectors as columns.
pub fn sym_eigen(m: &[f64], d: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(to_dmatrix(m, d));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_range(m: &[f64], d: usize) -> (f64, f64) {
    match d {
        1 => (m[0], m[0]),
        2 => {
            let (a, b, c) = (m[0], m[1], m[3]);
            let mean = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            (mean - rad, mean + rad)
        }
        _ => {
            let (vals, _) = sym_eigen(m, d);
            (vals[0], vals[d - 1])
        }
    }
}

/// Symmetric PSD square root; negative eigenvalues are clipped to zero.
pub fn psd_sqrt(m: &[f64], d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![m[0].max(0.0).sqrt()];
    }
    let (vals, vecs) = sym_eigen(m, d);
    let root = DVector::from_iterator(d, vals.iter().map(|v| v.max(0.0).sqrt()));
    let s = &vecs * DMatrix::from_diagonal(&root) * vecs.transpose();
    let mut out = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            out[r * d + c] = s[(r, c)];
        }
    }
    out
}

/// `y = m x` for a row-major `d × d` matrix.
pub fn mat_vec(m: &[f64], x: &[f64], d: usize, y: &mut [f64]) {
    for r in 0..d {
        y[r] = (0..d).map(|c| m[r * d + c] * x[c]).sum();
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn frobenius(m: &[f64]) -> f64 {
    norm(m)
}

/// Minimum-norm least-squares solution of `a θ = b` through the symmetric
/// eigendecomposition of `a`, discarding eigenvalues below
/// `PINV_RELATIVE_CUTOFF · λ_max`. Returns `(θ, ‖aθ − b‖)`.
pub fn pinv_solve(a: &[f64], b: &[f64], d: usize) -> (Vec<f64>, f64) {
    if d == 1 {
        let a0 = a[0];
        let theta = if a0.abs() > 0.0 { b[0] / a0 } else { 0.0 };
        let residual = (a0 * theta - b[0]).abs();
        return (vec![theta], residual);
    }
    let (vals, vecs) = sym_eigen(a, d);
    let lmax = vals.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let cutoff = PINV_RELATIVE_CUTOFF * lmax;
    let bv = DVector::from_column_slice(b);
    let coeffs = vecs.transpose() * &bv;
    let mut theta = DVector::zeros(d);
    for (k, &lambda) in vals.iter().enumerate() {
        if lambda.abs() > cutoff && lmax > 0.0 {
            theta += vecs.column(k) * (coeffs[k] / lambda);
        }
    }
    let theta: Vec<f64> = theta.iter().copied().collect();
    let mut at = vec![0.0; d];
    mat_vec(a, &theta, d, &mut at);
    let residual = at
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    (theta, residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let m = [2.0, 0.5, 0.5, 1.0];
        let s = psd_sqrt(&m, 2);
        let mut sq = [0.0; 4];
        for r in 0..2 {
            for c in 0..2 {
                sq[r * 2 + c] = (0..2).map(|k| s[r * 2 + k] * s[k * 2 + c]).sum();
            }
        }
        for (a, b) in sq.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sqrt_clips_negative_eigenvalues() {
        let s = psd_sqrt(&[-1e-14], 1);
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn pinv_on_singular_matrix_is_minimum_norm() {
        // a = diag(1, 0), b = (2, 0) -> theta = (2, 0)
        let (theta, res) = pinv_solve(&[1.0, 0.0, 0.0, 0.0], &[2.0, 0.0], 2);
        assert!((theta[0] - 2.0).abs() < 1e-12 && theta[1].abs() < 1e-12);
        assert!(res < 1e-12);
        // b outside the range leaves a residual
        let (_, res) = pinv_solve(&[1.0, 0.0, 0.0, 0.0], &[2.0, 3.0], 2);
        assert!((res - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_range_matches_general_path() {
        let m = [3.0, 1.0, 1.0, 2.0];
        let (lo, hi) = eigen_range(&m, 2);
        let (vals, _) = sym_eigen(&m, 2);
        assert!((lo - vals[0]).abs() < 1e-12 && (hi - vals[1]).abs() < 1e-12);
    }
}
