//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the crate's decompositions.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use universal_subspace::{DenseTensor, Matrix};

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal by Box-Muller.
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| normal(rng))
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> DenseTensor {
    let n = shape.iter().product();
    DenseTensor::new(shape.to_vec(), (0..n).map(|_| normal(rng)).collect()).unwrap()
}

pub fn to_dense(m: &Matrix) -> Dense {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn from_dense(a: &Dense) -> Matrix {
    let cols = a.first().map_or(0, Vec::len);
    Matrix::from_fn(a.len(), cols, |i, j| a[i][j])
}

pub fn transpose(a: &Dense) -> Dense {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|r| (0..cols).map(|j| (0..inner).map(|k| r[k] * b[k][j]).sum()).collect())
        .collect()
}

pub fn frobenius(a: &Dense) -> f64 {
    a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Singular values (descending) and right singular vectors (as columns of
/// `v`) by one-sided Jacobi rotations on the columns of `a`.
pub fn jacobi_svd(a: &Dense) -> (Vec<f64>, Dense) {
    let m = a.len();
    let n = a.first().map_or(0, Vec::len);
    let mut w = a.clone();
    let mut v: Dense = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for row in w.iter() {
                    alpha += row[p] * row[p];
                    beta += row[q] * row[q];
                    gamma += row[p] * row[q];
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for row in w.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
                for row in v.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| (0..m).map(|i| w[i][j] * w[i][j]).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let sigma = order.iter().map(|&j| norms[j]).collect();
    let v_sorted = v.iter().map(|r| order.iter().map(|&j| r[j]).collect()).collect();
    (sigma, v_sorted)
}

/// All singular values of `a` in descending order (padded to min(m, n)).
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let d = to_dense(a);
    let (s, _) = if a.nrows() >= a.ncols() { jacobi_svd(&d) } else { jacobi_svd(&transpose(&d)) };
    s
}

/// Eigenvalues (descending) and eigenvectors (columns) of a symmetric
/// matrix by cyclic Jacobi rotations.
pub fn jacobi_eigen(sym: &Dense) -> (Vec<f64>, Dense) {
    let n = sym.len();
    let mut a = sym.clone();
    let mut v: Dense = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>() + off;
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
                let (rp, rq) = (a[p].clone(), a[q].clone());
                for k in 0..n {
                    a[p][k] = c * rp[k] - s * rq[k];
                    a[q][k] = s * rp[k] + c * rq[k];
                }
                for row in v.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = v.iter().map(|r| order.iter().map(|&j| r[j]).collect()).collect();
    (values, vectors)
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn sym_op_norm(m: &Matrix) -> f64 {
    jacobi_eigen(&to_dense(m)).0.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Element-wise Kolda-Bader unfolding straight from the index formula.
pub fn unfold_by_index(t: &DenseTensor, mode: usize) -> Matrix {
    let shape = t.shape();
    let rows = shape[mode];
    let cols = t.len() / rows;
    let mut m = Matrix::zeros(rows, cols);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..t.len() {
        let mut col = 0;
        let mut stride = 1;
        for k in 0..shape.len() {
            if k != mode {
                col += idx[k] * stride;
                stride *= shape[k];
            }
        }
        m[(idx[mode], col)] = t.get(&idx);
        for k in (0..shape.len()).rev() {
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    m
}

/// Best rank-`k` approximation error (Frobenius) from the singular values.
pub fn eckart_young_error(sigma: &[f64], k: usize) -> f64 {
    sigma.iter().skip(k).map(|s| s * s).sum::<f64>().sqrt()
}

/// Largest `|<a_i, b_j>|` between columns, after matching signs.
pub fn max_sign_aligned_diff(a: &Matrix, b: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..a.ncols() {
        let dot: f64 = a.column(j).dot(&b.column(j));
        let s = if dot < 0.0 { -1.0 } else { 1.0 };
        worst = worst.max((a.column(j) - b.column(j) * s).amax());
    }
    worst
}

pub fn orthonormality_error(u: &Matrix) -> f64 {
    (u.transpose() * u - Matrix::identity(u.ncols(), u.ncols())).amax()
}
