//! Thin SVD, explained-variance accounting, rank selection and the spectral
//! norm of symmetric matrices.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Matrix;

/// Singular values at or below `max(sigma) * NUMERICAL_RANK_RTOL` count as zero.
pub const NUMERICAL_RANK_RTOL: f64 = 1e-12;

/// `M = U diag(sigma) V^T` with `min(rows, cols)` retained triplets, sorted
/// nonincreasing. Each column of `u` has its largest-magnitude entry made
/// nonnegative (first such entry on ties) so results are deterministic.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> Matrix {
        let s = Matrix::from_diagonal(&DVector::from_column_slice(&self.singular_values));
        &self.u * s * self.v.transpose()
    }
}

pub fn thin_svd(m: &Matrix) -> Result<ThinSvd> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return invalid("thin SVD of an empty matrix");
    }
    if m.iter().any(|v| !v.is_finite()) {
        return invalid("thin SVD input contains non-finite entries");
    }
    let f = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = f.thin_svd().map_err(|e| {
        Error::NumericalFailure(format!("SVD of a {rows}x{cols} matrix did not converge: {e:?}"))
    })?;
    let k = rows.min(cols);
    let (fu, fv, fs) = (svd.U(), svd.V(), svd.S().column_vector());
    let mut u = Matrix::from_fn(rows, k, |i, j| fu[(i, j)]);
    let mut v = Matrix::from_fn(cols, k, |i, j| fv[(i, j)]);
    let singular_values: Vec<f64> = (0..k).map(|j| fs[j]).collect();
    if singular_values.windows(2).any(|w| w[0] < w[1]) || singular_values.iter().any(|s| !s.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "SVD of a {rows}x{cols} matrix returned unordered or non-finite singular values"
        )));
    }
    for j in 0..u.ncols() {
        let col = u.column(j);
        let mut pivot = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    Ok(ThinSvd {
        u,
        singular_values,
        v,
    })
}

/// `sigma_i^2 / sum_j sigma_j^2`.
pub fn explained_variance(singular_values: &[f64]) -> Result<Vec<f64>> {
    if singular_values.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return invalid("singular values must be finite and nonnegative");
    }
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(Error::DegenerateSpectrum(
            "all singular values are zero".into(),
        ));
    }
    Ok(singular_values.iter().map(|s| s * s / total).collect())
}

/// Singular values of one unfolding together with their explained-variance
/// ratios and the dimensions of the matrix they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub singular_values: Vec<f64>,
    pub ratios: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Spectrum {
    pub fn new(singular_values: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if singular_values.windows(2).any(|w| w[0] < w[1]) {
            return invalid("singular values must be sorted nonincreasing");
        }
        let ratios = explained_variance(&singular_values)?;
        Ok(Self {
            singular_values,
            ratios,
            rows,
            cols,
        })
    }

    pub fn cumulative(&self) -> Vec<f64> {
        self.ratios
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }

    /// Count of singular values above `max(sigma) * NUMERICAL_RANK_RTOL`.
    pub fn numerical_rank(&self) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values
            .iter()
            .filter(|&&s| s > top * NUMERICAL_RANK_RTOL)
            .count()
    }

    pub fn total_energy(&self) -> f64 {
        self.singular_values.iter().map(|s| s * s).sum()
    }
}

/// How many leading singular directions to keep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankPolicy {
    /// Smallest rank whose cumulative explained variance reaches `tau`.
    CumulativeVariance { tau: f64 },
    /// Number of ratios strictly above `epsilon`, at least 1.
    EigenFloor { epsilon: f64 },
    /// Singular values above the optimal hard threshold for white noise.
    /// `noise_sigma = None` estimates the noise level from the median
    /// singular value.
    HardThreshold { noise_sigma: Option<f64> },
    /// `min(k, available rank)`.
    FixedK { k: usize },
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy::CumulativeVariance { tau: 0.95 }
    }
}

impl RankPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RankPolicy::CumulativeVariance { tau } if !(tau > 0.0 && tau <= 1.0) => {
                invalid(format!("cumulative-variance tau must lie in (0, 1], got {tau}"))
            }
            RankPolicy::EigenFloor { epsilon } if !(epsilon >= 0.0 && epsilon.is_finite()) => {
                invalid(format!("eigen-floor epsilon must be >= 0, got {epsilon}"))
            }
            RankPolicy::HardThreshold {
                noise_sigma: Some(s),
            } if !(s > 0.0 && s.is_finite()) => {
                invalid(format!("noise sigma must be positive, got {s}"))
            }
            RankPolicy::FixedK { k: 0 } => invalid("fixed rank k must be at least 1"),
            _ => Ok(()),
        }
    }
}

pub fn select_rank(spectrum: &Spectrum, policy: &RankPolicy) -> Result<usize> {
    policy.validate()?;
    let available = spectrum.ratios.len();
    if available == 0 {
        return invalid("empty spectrum");
    }
    let rank = match *policy {
        RankPolicy::CumulativeVariance { tau } => {
            let first = spectrum
                .cumulative()
                .iter()
                .position(|&c| c >= tau)
                .map_or(available, |i| i + 1);
            first.min(spectrum.numerical_rank())
        }
        RankPolicy::EigenFloor { epsilon } => {
            spectrum.ratios.iter().filter(|&&r| r > epsilon).count()
        }
        RankPolicy::HardThreshold { noise_sigma } => {
            let cut = hard_threshold(
                &spectrum.singular_values,
                spectrum.rows,
                spectrum.cols,
                noise_sigma,
            );
            spectrum
                .singular_values
                .iter()
                .filter(|&&s| s > cut)
                .count()
        }
        RankPolicy::FixedK { k } => k.min(available),
    };
    Ok(rank.max(1))
}

/// Optimal hard threshold for the singular values of a `rows x cols` matrix
/// observed in white noise. With known noise level `sigma` this is
/// `lambda(beta) * sqrt(n) * sigma` (`n` the larger dimension, `beta` the
/// aspect ratio); otherwise `omega(beta) * median(singular values)`.
pub fn hard_threshold(singular_values: &[f64], rows: usize, cols: usize, sigma: Option<f64>) -> f64 {
    let (m, n) = (rows.min(cols) as f64, rows.max(cols) as f64);
    let beta = m / n;
    match sigma {
        Some(s) => optimal_threshold_coefficient(beta) * n.sqrt() * s,
        None => {
            let mut sorted = singular_values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let k = sorted.len();
            let median = if k % 2 == 1 {
                sorted[k / 2]
            } else {
                0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
            };
            unknown_noise_coefficient(beta) * median
        }
    }
}

/// `lambda(beta) = sqrt(2(beta+1) + 8 beta / ((beta+1) + sqrt(beta^2 + 14 beta + 1)))`;
/// equals `4/sqrt(3)` for square matrices.
pub fn optimal_threshold_coefficient(beta: f64) -> f64 {
    let b = beta;
    (2.0 * (b + 1.0) + 8.0 * b / ((b + 1.0) + (b * b + 14.0 * b + 1.0).sqrt())).sqrt()
}

/// `omega(beta) = lambda(beta) / sqrt(mu_beta)` where `mu_beta` is the median
/// of the Marchenko-Pastur law with ratio `beta`.
pub fn unknown_noise_coefficient(beta: f64) -> f64 {
    optimal_threshold_coefficient(beta) / marchenko_pastur_median(beta).sqrt()
}

/// Median of the Marchenko-Pastur distribution with aspect ratio
/// `beta` in (0, 1] and unit variance.
pub fn marchenko_pastur_median(beta: f64) -> f64 {
    let beta = beta.clamp(1e-12, 1.0);
    let lo = (1.0 - beta.sqrt()).powi(2);
    let hi = (1.0 + beta.sqrt()).powi(2);
    let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    // x = c + h sin(theta) turns the square-root endpoints into a smooth integrand.
    let density = |theta: f64| {
        let cos = theta.cos();
        h * h * cos * cos / (2.0 * std::f64::consts::PI * beta * (c + h * theta.sin()))
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let (mut a, mut b) = (-half_pi, half_pi);
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        if gauss_legendre(density, -half_pi, mid, 64) < 0.5 {
            a = mid;
        } else {
            b = mid;
        }
    }
    c + h * (0.5 * (a + b)).sin()
}

pub(crate) fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let width = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let mid = a + (p as f64 + 0.5) * width;
            NODES
                .iter()
                .zip(WEIGHTS)
                .map(|(x, w)| w * f(mid + 0.5 * width * x))
                .sum::<f64>()
                * 0.5
                * width
        })
        .sum()
}

/// Iteration cap used by [`operator_norm`].
pub const POWER_ITERATION_CAP: usize = 50_000;

/// Largest absolute eigenvalue of a symmetric matrix by power iteration on
/// `A^2`, stopped when the eigen-residual drops below `1e-12` relative; two
/// independent starts, largest estimate wins.
pub fn operator_norm(a: &Matrix) -> Result<f64> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return invalid(format!(
            "operator norm needs a nonempty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        ));
    }
    let scale = a.amax();
    if !scale.is_finite() {
        return invalid("operator norm input contains non-finite entries");
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    let asym = (a - a.transpose()).amax();
    if asym > 1e-10 * scale.max(1.0) {
        return invalid(format!("matrix is not symmetric (max asymmetry {asym:.3e})"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5_eed0_fa11);
    let mut best = 0.0f64;
    for _ in 0..2 {
        let start = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        best = best.max(power_iterate(a, start)?);
    }
    Ok(best)
}

fn power_iterate(a: &Matrix, mut v: DVector<f64>) -> Result<f64> {
    v.normalize_mut();
    for _ in 0..POWER_ITERATION_CAP {
        let w = a * &v;
        let x = a * &w;
        let rho = v.dot(&x);
        if rho <= 0.0 {
            // v landed in the null space; A != 0 so nudge it.
            v.iter_mut().enumerate().for_each(|(i, e)| *e += 1.0 / (i + 2) as f64);
            v.normalize_mut();
            continue;
        }
        let residual = (&x - &v * rho).norm();
        let xn = x.norm();
        v = x / xn;
        if residual <= 1e-12 * rho {
            return Ok(xn.sqrt());
        }
    }
    Err(Error::NumericalFailure(format!(
        "power iteration did not converge within {POWER_ITERATION_CAP} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(ratios_from: &[f64]) -> Spectrum {
        Spectrum::new(ratios_from.to_vec(), 10, 10).unwrap()
    }

    #[test]
    fn identity_svd() {
        let s = thin_svd(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(s.singular_values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_svd() {
        let m = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]);
        let s = thin_svd(&m).unwrap();
        assert!((s.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((s.singular_values[1] - 2.0).abs() < 1e-14);
        assert!((s.u.abs() - Matrix::identity(2, 2)).amax() < 1e-14);
        assert!((s.v.abs() - Matrix::identity(2, 2)).amax() < 1e-14);
        assert!(s.u[(0, 0)] > 0.0 && s.u[(1, 1)] > 0.0);
    }

    #[test]
    fn svd_rejects_nan() {
        let mut m = Matrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(thin_svd(&m), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn wide_and_tall_shapes() {
        let m = Matrix::from_fn(3, 7, |i, j| ((i * 7 + j) as f64).sin());
        for mm in [m.clone(), m.transpose()] {
            let s = thin_svd(&mm).unwrap();
            assert_eq!(s.singular_values.len(), 3);
            assert!((s.reconstruct() - &mm).norm() < 1e-12);
        }
    }

    #[test]
    fn variance_ratios() {
        assert_eq!(explained_variance(&[1.0]).unwrap(), vec![1.0]);
        let r = explained_variance(&[4.0, 3.0]).unwrap();
        assert!((r[0] - 0.64).abs() < 1e-15 && (r[1] - 0.36).abs() < 1e-15);
        assert_eq!(explained_variance(&[2.5; 4]).unwrap(), vec![0.25; 4]);
        assert!(matches!(
            explained_variance(&[0.0, 0.0]),
            Err(Error::DegenerateSpectrum(_))
        ));
    }

    #[test]
    fn eigen_floor_example() {
        let s = Spectrum {
            singular_values: vec![],
            ratios: vec![0.6, 0.3, 0.09, 0.005, 0.005],
            rows: 5,
            cols: 5,
        };
        let r = select_rank(&s, &RankPolicy::EigenFloor { epsilon: 0.01 }).unwrap();
        assert_eq!(r, 3);
    }

    #[test]
    fn single_component() {
        let s = spec(&[2.0]);
        for tau in [0.1, 0.5, 1.0] {
            assert_eq!(
                select_rank(&s, &RankPolicy::CumulativeVariance { tau }).unwrap(),
                1
            );
        }
    }

    #[test]
    fn tau_boundary_is_inclusive() {
        // ratios 0.64, 0.36: tau = 0.64 must stop at one component.
        let s = spec(&[4.0, 3.0]);
        assert_eq!(
            select_rank(&s, &RankPolicy::CumulativeVariance { tau: 0.64 }).unwrap(),
            1
        );
        assert_eq!(
            select_rank(&s, &RankPolicy::CumulativeVariance { tau: 0.65 }).unwrap(),
            2
        );
    }

    #[test]
    fn tau_one_gives_numerical_rank() {
        let s = spec(&[3.0, 2.0, 1e-14, 0.0]);
        assert_eq!(
            select_rank(&s, &RankPolicy::CumulativeVariance { tau: 1.0 }).unwrap(),
            2
        );
    }

    #[test]
    fn fixed_k_clamps() {
        let s = spec(&[3.0, 2.0]);
        assert_eq!(select_rank(&s, &RankPolicy::FixedK { k: 5 }).unwrap(), 2);
        assert!(select_rank(&s, &RankPolicy::FixedK { k: 0 }).is_err());
    }

    #[test]
    fn invalid_policies() {
        for p in [
            RankPolicy::CumulativeVariance { tau: 0.0 },
            RankPolicy::CumulativeVariance { tau: 1.5 },
            RankPolicy::EigenFloor { epsilon: -1.0 },
            RankPolicy::HardThreshold {
                noise_sigma: Some(0.0),
            },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn threshold_coefficients() {
        assert!((optimal_threshold_coefficient(1.0) - 4.0 / 3f64.sqrt()).abs() < 1e-14);
        // Tabulated value for square matrices with unknown noise.
        assert!((unknown_noise_coefficient(1.0) - 2.858).abs() < 1e-3);
        // Cubic approximation of omega(beta) is accurate to about 0.02.
        for beta in [0.1f64, 0.25, 0.5, 0.75] {
            let approx = 0.56 * beta.powi(3) - 0.95 * beta * beta + 1.82 * beta + 1.43;
            assert!((unknown_noise_coefficient(beta) - approx).abs() < 0.02, "{beta}");
        }
    }

    #[test]
    fn mp_median_square() {
        assert!((marchenko_pastur_median(1.0) - 0.6528).abs() < 1e-3);
    }

    #[test]
    fn opnorm_simple() {
        assert!((operator_norm(&Matrix::identity(4, 4)).unwrap() - 1.0).abs() < 1e-12);
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, -2.0]));
        assert!((operator_norm(&d).unwrap() - 3.0).abs() < 1e-10);
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![1.0, -4.0]));
        assert!((operator_norm(&d).unwrap() - 4.0).abs() < 1e-10);
        assert_eq!(operator_norm(&Matrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn opnorm_equal_magnitude_pair() {
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.5, 0.0]));
        assert!((operator_norm(&d).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn opnorm_rejects_asymmetric() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(operator_norm(&m).is_err());
    }
}
