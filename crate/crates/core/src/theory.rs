//! Finite-dimensional model of task ensembles and their second-moment
//! operators, with the bounds relating empirical and population subspaces.
//!
//! Tasks live in `R^d`. Ground-truth task vectors `f*` are drawn from a
//! planted spectrum on a random orthonormal basis and kept within norm `B`;
//! learned vectors are `f^ = f* + eta_t u` for a unit direction `u`.
//!
//! Operators: the population `S = E[f* f*^T]`, the true empirical
//! `S^ = (1/T) sum f* f*^T` and the learned empirical `S~ = (1/T) sum f^ f^^T`.
//! Ensemble bound (with absolute constants `c1`, `c2`):
//!
//! ```text
//! ||S~ - S||  <= c1 B^2 sqrt(ln(c2/delta)/T) + 2 B mean(eta) + mean(eta^2)
//! ||P~_k - P_k|| <= (2/gamma_k) * (the same)
//! ```

use nalgebra::{DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::report::{Cell, Table};
use crate::rng::{gaussian_matrix, gaussian_vec, orthonormal_columns, seeded, unit_vector};
use crate::spectral::gauss_legendre;
use crate::tensor::Matrix;

/// How the norm bound `||f*|| <= B` is enforced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormControl {
    /// Draws with norm above `B` are rescaled onto the sphere of radius `B`.
    #[default]
    Clip,
    /// Every draw is rescaled to norm exactly `B`.
    Sphere,
}

/// Direction of the per-task error `f^ - f*`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Uniformly random unit vector.
    #[default]
    Isotropic,
    /// Along `f*` itself, which makes `f^ f^^T - f* f*^T` as large as the
    /// norm constraint allows.
    Radial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnsembleConfig {
    pub d: usize,
    pub k: usize,
    pub t: usize,
    pub b: f64,
    /// One error magnitude per task.
    pub eta: Vec<f64>,
    /// Planted eigenvalues, nonincreasing, at least `k` and at most `d` of
    /// them. Entries past `k` form the tail.
    pub spectrum: Vec<f64>,
    pub seed: u64,
    pub norm: NormControl,
    pub perturbation: Perturbation,
}

impl SyntheticEnsembleConfig {
    /// `t` tasks with a flat `k`-dimensional spectrum and constant `eta`.
    pub fn planted(d: usize, k: usize, t: usize, b: f64, eta: f64, seed: u64) -> Self {
        Self {
            d,
            k,
            t,
            b,
            eta: vec![eta; t],
            spectrum: vec![1.0; k],
            seed,
            norm: NormControl::Clip,
            perturbation: Perturbation::Isotropic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 || self.k > self.d {
            return invalid(format!("need 1 <= k <= d, got k = {}, d = {}", self.k, self.d));
        }
        if self.t == 0 {
            return invalid("need at least one task");
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return invalid(format!("norm bound B must be positive, got {}", self.b));
        }
        if self.eta.len() != self.t {
            return invalid(format!("{} eta values for {} tasks", self.eta.len(), self.t));
        }
        if self.eta.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return invalid("eta values must be finite and nonnegative");
        }
        let m = self.spectrum.len();
        if m < self.k || m > self.d {
            return invalid(format!("spectrum has {m} entries; need between k = {} and d = {}", self.k, self.d));
        }
        if self.spectrum.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return invalid("spectrum entries must be finite and nonnegative");
        }
        if self.spectrum.windows(2).any(|w| w[0] < w[1]) {
            return invalid("spectrum must be nonincreasing");
        }
        if self.spectrum[self.k - 1] <= 0.0 {
            return invalid("the k-th planted eigenvalue must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskVector {
    pub f_star: DVector<f64>,
    pub f_hat: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    pub matrix: Matrix,
    pub rank: usize,
}

impl Projector {
    /// Projector onto the span of the (orthonormal) columns of `basis`.
    pub fn from_basis(basis: &Matrix) -> Self {
        Self {
            matrix: basis * basis.transpose(),
            rank: basis.ncols(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledEnsemble {
    pub tasks: Vec<TaskVector>,
    /// `d x m` orthonormal basis carrying the planted spectrum.
    pub basis: Matrix,
    /// Projector onto the first `k` basis vectors.
    pub projector: Projector,
    /// Draws rescaled by [`NormControl::Clip`].
    pub clipped: usize,
}

pub fn sample_ensemble(cfg: &SyntheticEnsembleConfig) -> Result<SampledEnsemble> {
    cfg.validate()?;
    let m = cfg.spectrum.len();
    let mut rng = seeded(&[cfg.seed, 0]);
    let basis = orthonormal_columns(&mut rng, cfg.d, m);
    let scales: Vec<f64> = cfg.spectrum.iter().map(|l| l.sqrt()).collect();
    let mut clipped = 0;
    let mut tasks = Vec::with_capacity(cfg.t);
    for &eta in &cfg.eta {
        let g = gaussian_vec(&mut rng, m);
        let coords = DVector::from_iterator(m, g.iter().zip(&scales).map(|(g, s)| g * s));
        let mut f_star = &basis * coords;
        let norm = f_star.norm();
        match cfg.norm {
            NormControl::Clip if norm > cfg.b => {
                f_star *= cfg.b / norm;
                clipped += 1;
            }
            NormControl::Sphere if norm > 0.0 => f_star *= cfg.b / norm,
            _ => {}
        }
        let direction = match cfg.perturbation {
            Perturbation::Isotropic => DVector::from_vec(unit_vector(&mut rng, cfg.d)),
            Perturbation::Radial => {
                let n = f_star.norm();
                if n > 0.0 {
                    &f_star / n
                } else {
                    DVector::from_vec(unit_vector(&mut rng, cfg.d))
                }
            }
        };
        let f_hat = &f_star + direction * eta;
        tasks.push(TaskVector { f_star, f_hat });
    }
    let projector = Projector::from_basis(&basis.columns(0, cfg.k).into_owned());
    Ok(SampledEnsemble {
        tasks,
        basis,
        projector,
        clipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Population,
    TrueEmpirical,
    LearnedEmpirical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecondMomentOperator {
    pub matrix: Matrix,
    pub kind: OperatorKind,
    pub trace: f64,
    pub op_norm: f64,
    /// `trace / op_norm`, zero for the zero operator.
    pub effective_rank: f64,
}

impl SecondMomentOperator {
    /// Wraps a symmetric positive semidefinite matrix.
    pub fn new(matrix: Matrix, kind: OperatorKind) -> Result<Self> {
        if !matrix.is_square() || matrix.is_empty() {
            return invalid("second-moment operators are nonempty square matrices");
        }
        let scale = matrix.amax().max(1.0);
        if (&matrix - matrix.transpose()).amax() > 1e-10 * scale {
            return invalid("second-moment operator is not symmetric");
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        let (values, _) = symmetric_eigen(&matrix)?;
        if values.last().is_some_and(|&l| l < -1e-10 * scale) {
            return invalid("second-moment operator is not positive semidefinite");
        }
        let trace = matrix.trace();
        let op_norm = values[0].max(0.0);
        Ok(Self {
            matrix,
            kind,
            trace,
            op_norm,
            effective_rank: if op_norm > 0.0 { trace / op_norm } else { 0.0 },
        })
    }
}

/// `(1/T) sum v v^T`.
pub fn second_moment(vectors: &[DVector<f64>], kind: OperatorKind) -> Result<SecondMomentOperator> {
    let Some(first) = vectors.first() else {
        return invalid("second moment of an empty vector list");
    };
    let d = first.len();
    if vectors.iter().any(|v| v.len() != d) {
        return invalid("vectors differ in dimension");
    }
    let mut data = Matrix::zeros(d, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        data.set_column(j, v);
    }
    let m = &data * data.transpose() / vectors.len() as f64;
    SecondMomentOperator::new(m, kind)
}

pub fn true_empirical(tasks: &[TaskVector]) -> Result<SecondMomentOperator> {
    let v: Vec<_> = tasks.iter().map(|t| t.f_star.clone()).collect();
    second_moment(&v, OperatorKind::TrueEmpirical)
}

pub fn learned_empirical(tasks: &[TaskVector]) -> Result<SecondMomentOperator> {
    let v: Vec<_> = tasks.iter().map(|t| t.f_hat.clone()).collect();
    second_moment(&v, OperatorKind::LearnedEmpirical)
}

/// Eigenvalues of `E[f* f*^T]` in the planted basis, accounting for the
/// norm control. Sphere normalisation uses the exact integral
/// `B^2 int_0^inf l_i (1 + 2 s l_i)^(-3/2) prod_{j != i} (1 + 2 s l_j)^(-1/2) ds`;
/// clipping subtracts a fixed-seed Monte-Carlo estimate of the mass removed
/// by rescaling (exactly zero when no draw exceeds `B`).
pub fn effective_spectrum(cfg: &SyntheticEnsembleConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let lambda = &cfg.spectrum;
    let b2 = cfg.b * cfg.b;
    match cfg.norm {
        NormControl::Sphere => {
            let positive: Vec<f64> = lambda.iter().copied().filter(|&l| l > 0.0).collect();
            if positive.len() == 1 {
                return Ok(lambda.iter().map(|&l| if l > 0.0 { b2 } else { 0.0 }).collect());
            }
            let lo = (1e-12 / positive[0]).ln();
            let hi = (1e30 / positive[positive.len() - 1]).ln();
            let panels = ((hi - lo) * 8.0).ceil() as usize;
            Ok(lambda
                .iter()
                .enumerate()
                .map(|(i, &li)| {
                    if li == 0.0 {
                        return 0.0;
                    }
                    let f = |u: f64| {
                        let s = u.exp();
                        let mut v = li * (1.0 + 2.0 * s * li).powf(-1.5) * s;
                        for (j, &lj) in lambda.iter().enumerate() {
                            if j != i {
                                v *= (1.0 + 2.0 * s * lj).powf(-0.5);
                            }
                        }
                        v
                    };
                    b2 * gauss_legendre(f, lo, hi, panels)
                })
                .collect())
        }
        NormControl::Clip => {
            const SAMPLES: usize = 1 << 16;
            let mut rng = seeded(&[0x5eed, lambda.len() as u64]);
            let mut removed = vec![0.0; lambda.len()];
            for _ in 0..SAMPLES {
                let g = gaussian_vec(&mut rng, lambda.len());
                let sq: Vec<f64> = g.iter().zip(lambda).map(|(g, l)| l * g * g).collect();
                let norm2: f64 = sq.iter().sum();
                if norm2 > b2 {
                    let excess = 1.0 - b2 / norm2;
                    for (r, s) in removed.iter_mut().zip(&sq) {
                        *r += s * excess;
                    }
                }
            }
            Ok(lambda
                .iter()
                .zip(&removed)
                .map(|(l, r)| l - r / SAMPLES as f64)
                .collect())
        }
    }
}

/// `Phi diag(effective spectrum) Phi^T` for a sampled basis.
pub fn population_operator(cfg: &SyntheticEnsembleConfig, basis: &Matrix) -> Result<SecondMomentOperator> {
    let lambda = effective_spectrum(cfg)?;
    population_from(&lambda, basis)
}

fn population_from(lambda: &[f64], basis: &Matrix) -> Result<SecondMomentOperator> {
    if basis.ncols() != lambda.len() {
        return invalid("basis and spectrum sizes differ");
    }
    let scaled = Matrix::from_fn(basis.nrows(), basis.ncols(), |i, j| basis[(i, j)] * lambda[j]);
    SecondMomentOperator::new(scaled * basis.transpose(), OperatorKind::Population)
}

/// Eigenvalues in decreasing order with matching eigenvector columns.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 1000 * n.max(1))
        .ok_or_else(|| Error::NumericalFailure(format!("symmetric eigensolve of a {n}x{n} matrix did not converge")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn symmetric_op_norm(m: &Matrix) -> Result<f64> {
    let (values, _) = symmetric_eigen(m)?;
    Ok(values.iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopK {
    pub projector: Projector,
    /// `lambda_k - lambda_{k+1}`, or `lambda_d` when `k = d`.
    pub gamma: f64,
    /// Set when the gap is not positive, so the top-k space is not unique.
    pub degenerate: bool,
    pub eigenvalues: Vec<f64>,
}

pub fn top_k_projector(op: &SecondMomentOperator, k: usize) -> Result<TopK> {
    top_k(&op.matrix, k)
}

fn top_k(m: &Matrix, k: usize) -> Result<TopK> {
    let d = m.nrows();
    if k == 0 || k > d {
        return invalid(format!("projector rank {k} outside 1..={d}"));
    }
    let (values, vectors) = symmetric_eigen(m)?;
    let gamma = if k == d { values[d - 1] } else { values[k - 1] - values[k] };
    let scale = values[0].abs().max(f64::MIN_POSITIVE);
    Ok(TopK {
        projector: Projector::from_basis(&vectors.columns(0, k).into_owned()),
        gamma,
        degenerate: gamma <= 1e-12 * scale,
        eigenvalues: values,
    })
}

/// `||P - Q||_op`.
pub fn subspace_distance(p: &Projector, q: &Projector) -> Result<f64> {
    if p.matrix.shape() != q.matrix.shape() {
        return invalid("projectors act on different dimensions");
    }
    symmetric_op_norm(&(&p.matrix - &q.matrix))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParameters {
    pub b: f64,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    pub t: usize,
    pub eta_bar: f64,
    pub eta2_bar: f64,
    /// Eigengap; required for the subspace bound.
    pub gamma_k: Option<f64>,
}

impl BoundParameters {
    pub fn new(b: f64, delta: f64, t: usize, eta_bar: f64, eta2_bar: f64) -> Self {
        Self {
            b,
            delta,
            c1: 1.0,
            c2: 1.0,
            t,
            eta_bar,
            eta2_bar,
            gamma_k: None,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma_k = Some(gamma);
        self
    }

    pub fn from_etas(b: f64, delta: f64, etas: &[f64]) -> Self {
        let t = etas.len().max(1) as f64;
        Self::new(
            b,
            delta,
            etas.len(),
            etas.iter().sum::<f64>() / t,
            etas.iter().map(|e| e * e).sum::<f64>() / t,
        )
    }

    /// Failure probability allotted to each task.
    pub fn delta_task(&self) -> f64 {
        self.delta / (2.0 * self.t as f64)
    }

    /// Failure probability allotted to the across-task average.
    pub fn delta_across(&self) -> f64 {
        self.delta / 2.0
    }

    /// `2 B mean(eta) + mean(eta^2)`.
    pub fn floor(&self) -> f64 {
        2.0 * self.b * self.eta_bar + self.eta2_bar
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnsembleBounds {
    pub op_bound: f64,
    pub subspace_bound: Option<f64>,
}

pub fn ensemble_bounds(p: &BoundParameters) -> Result<EnsembleBounds> {
    if !(p.b >= 0.0 && p.b.is_finite()) {
        return invalid(format!("B must be nonnegative, got {}", p.b));
    }
    if !(p.delta > 0.0 && p.delta < 1.0) {
        return invalid(format!("delta must lie in (0, 1), got {}", p.delta));
    }
    if p.t == 0 {
        return invalid("T must be at least 1");
    }
    if !(p.c1 > 0.0 && p.c2 > 0.0) || (p.c2 / p.delta) < 1.0 {
        return invalid("constants must be positive with c2 >= delta");
    }
    if !(p.eta_bar >= 0.0 && p.eta2_bar >= 0.0) {
        return invalid("eta averages must be nonnegative");
    }
    let across = p.c1 * p.b * p.b * ((p.c2 / p.delta).ln() / p.t as f64).sqrt();
    let op_bound = across + p.floor();
    let subspace_bound = match p.gamma_k {
        None => None,
        Some(g) if g > 0.0 => Some(2.0 / g * op_bound),
        Some(g) => return invalid(format!("eigengap must be positive for the subspace bound, got {g}")),
    };
    Ok(EnsembleBounds {
        op_bound,
        subspace_bound,
    })
}

/// `R + sqrt(ln(1/delta_t) / (2 n_t))`.
pub fn eta_from_complexity(rademacher: f64, n_t: usize, delta_t: f64) -> Result<f64> {
    if n_t == 0 || !(delta_t > 0.0 && delta_t < 1.0) || !(rademacher >= 0.0) {
        return invalid("need n_t >= 1, delta_t in (0, 1) and a nonnegative complexity term");
    }
    Ok(rademacher + ((1.0 / delta_t).ln() / (2.0 * n_t as f64)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WithinTaskTerm {
    /// `||S~ - S^||_op`.
    pub measured: f64,
    /// `(1/T) sum (2 B eta_t + eta_t^2)` with `eta_t = ||f^_t - f*_t||`.
    pub cap: f64,
    pub holds: bool,
}

pub fn within_task_term(tasks: &[TaskVector], b: f64) -> Result<WithinTaskTerm> {
    if tasks.is_empty() {
        return invalid("no tasks");
    }
    if let Some(t) = tasks.iter().find(|t| t.f_star.norm() > b * (1.0 + 1e-12)) {
        return invalid(format!("task norm {} exceeds B = {b}", t.f_star.norm()));
    }
    let s_hat = true_empirical(tasks)?;
    let s_tilde = learned_empirical(tasks)?;
    let measured = symmetric_op_norm(&(&s_tilde.matrix - &s_hat.matrix))?;
    let cap = tasks
        .iter()
        .map(|t| {
            let eta = (&t.f_hat - &t.f_star).norm();
            2.0 * b * eta + eta * eta
        })
        .sum::<f64>()
        / tasks.len() as f64;
    Ok(WithinTaskTerm {
        measured,
        cap,
        holds: measured <= cap + 1e-8,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DavisKahan {
    pub lhs: f64,
    pub rhs: f64,
    pub gamma: f64,
    pub holds: bool,
}

/// `||P~_k - P_k|| <= (2/gamma_k) ||S~ - S||` with `gamma_k` taken from
/// `s_ref`.
pub fn davis_kahan_check(s_ref: &Matrix, s_pert: &Matrix, k: usize) -> Result<DavisKahan> {
    if s_ref.shape() != s_pert.shape() || !s_ref.is_square() {
        return invalid("operators must be square and of equal size");
    }
    let reference = top_k(s_ref, k)?;
    if reference.gamma <= 0.0 {
        return invalid(format!("eigengap gamma_{k} = {} is not positive", reference.gamma));
    }
    let perturbed = top_k(s_pert, k)?;
    let lhs = subspace_distance(&perturbed.projector, &reference.projector)?;
    let rhs = 2.0 / reference.gamma * symmetric_op_norm(&(s_pert - s_ref))?;
    Ok(DavisKahan {
        lhs,
        rhs,
        gamma: reference.gamma,
        holds: lhs <= rhs + 1e-10,
    })
}

/// Risk of the optimal rank-`k` projector: the sum of all but the `k`
/// largest eigenvalues.
pub fn optimal_projection_risk(spectrum: &[f64], k: usize) -> f64 {
    let mut s = spectrum.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s.iter().skip(k).sum()
}

/// `E ||f - P f||^2 = tr((I - P) S (I - P)^T)`.
pub fn projection_risk(s: &Matrix, p: &Projector) -> Result<f64> {
    if s.shape() != p.matrix.shape() {
        return invalid("operator and projector sizes differ");
    }
    let resid = Matrix::identity(s.nrows(), s.nrows()) - &p.matrix;
    Ok((&resid * s * resid.transpose()).trace())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExcessRisk {
    pub risk: f64,
    pub optimal_risk: f64,
    pub excess: f64,
    /// `tr(S) ||P - P_k||_op`.
    pub bound: f64,
    pub holds: bool,
}

/// Excess projection risk of `p` over the optimal rank-`p.rank` projector
/// of `s`, against its trace-times-distance bound.
pub fn excess_projection_risk(s: &Matrix, p: &Projector) -> Result<ExcessRisk> {
    let best = top_k(s, p.rank)?;
    let risk = projection_risk(s, p)?;
    let optimal_risk = optimal_projection_risk(&best.eigenvalues, p.rank);
    let excess = risk - optimal_risk;
    let bound = s.trace() * subspace_distance(p, &best.projector)?;
    Ok(ExcessRisk {
        risk,
        optimal_risk,
        excess,
        bound,
        holds: excess <= bound + 1e-8,
    })
}

/// Intrinsic-dimension matrix Bernstein envelope
/// `C (sqrt(B^2 ||S|| L / T) + B^2 L / T)` with `L = ln(c (1 + kappa) / delta)`.
/// The constants are not pinned by the theory; defaults of 1 give a shape
/// for overlays, not a certified envelope.
pub fn bernstein_bound(b: f64, op_norm: f64, kappa: f64, delta: f64, t: usize, c_big: f64, c_small: f64) -> Result<f64> {
    if t == 0 || !(delta > 0.0 && delta < 1.0) || b < 0.0 || op_norm < 0.0 || kappa < 0.0 {
        return invalid("invalid Bernstein parameters");
    }
    let l = (c_small * (1.0 + kappa) / delta).ln().max(0.0);
    let t = t as f64;
    Ok(c_big * ((b * b * op_norm * l / t).sqrt() + b * b * l / t))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub d: usize,
    pub k: usize,
    pub t_grid: Vec<usize>,
    pub trials: usize,
    pub eta: f64,
    pub b: f64,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    /// Planted spectrum; empty means `k` ones.
    pub spectrum: Vec<f64>,
    pub norm: NormControl,
    pub perturbation: Perturbation,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            d: 64,
            k: 4,
            t_grid: vec![25, 50, 100, 200, 400],
            trials: 50,
            eta: 0.0,
            b: 10.0,
            delta: 0.05,
            c1: 1.0,
            c2: 1.0,
            spectrum: Vec::new(),
            norm: NormControl::Clip,
            perturbation: Perturbation::Isotropic,
            seed: 0,
        }
    }
}

impl ConvergenceConfig {
    fn ensemble(&self, t: usize, seed: u64) -> SyntheticEnsembleConfig {
        SyntheticEnsembleConfig {
            d: self.d,
            k: self.k,
            t,
            b: self.b,
            eta: vec![self.eta; t],
            spectrum: if self.spectrum.is_empty() { vec![1.0; self.k] } else { self.spectrum.clone() },
            seed,
            norm: self.norm,
            perturbation: self.perturbation,
        }
    }

    /// `2 B eta + eta^2`.
    pub fn floor(&self) -> f64 {
        2.0 * self.b * self.eta + self.eta * self.eta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrialResult {
    pub t: usize,
    pub trial: usize,
    /// `||S~ - S||_op`.
    pub op_error: f64,
    /// `||P~_k - P_k||_op`.
    pub subspace_error: f64,
    pub op_bound: f64,
    pub subspace_bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub t: usize,
    pub mean_op_error: f64,
    pub mean_subspace_error: f64,
    pub op_bound: f64,
    pub subspace_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub config: ConvergenceConfig,
    pub trials: Vec<TrialResult>,
    pub grid: Vec<GridPoint>,
    /// Least-squares slope of `ln(mean op error)` against `ln T`; `None`
    /// when the grid has fewer than two distinct `T`.
    pub slope: Option<f64>,
    pub slope_undefined: bool,
    pub floor: f64,
    /// Eigengap of the population operator.
    pub gamma: f64,
}

impl ConvergenceReport {
    pub fn table(&self) -> Table {
        let c = &self.config;
        let mut t = Table::new(&["T", "trial", "op_error", "subspace_error", "op_bound", "subspace_bound"]);
        t.set("d", c.d)
            .set("k", c.k)
            .set("t_grid", join(&c.t_grid))
            .set("trials", c.trials)
            .set("eta", c.eta)
            .set("b", c.b)
            .set("delta", c.delta)
            .set("c1", c.c1)
            .set("c2", c.c2)
            .set("spectrum", if c.spectrum.is_empty() { "flat".to_string() } else { join(&c.spectrum) })
            .set("norm", format!("{:?}", c.norm).to_lowercase())
            .set("perturbation", format!("{:?}", c.perturbation).to_lowercase())
            .set("seed", c.seed)
            .set("gamma_k", self.gamma)
            .set("floor", self.floor)
            .set("slope", self.slope.map_or("undefined".to_string(), |s| s.to_string()));
        for r in &self.trials {
            t.push(vec![
                Cell::from(r.t),
                Cell::from(r.trial),
                Cell::from(r.op_error),
                Cell::from(r.subspace_error),
                Cell::from(r.op_bound),
                Cell::from(r.subspace_bound),
            ]);
        }
        t
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Monte-Carlo estimate of the operator and subspace errors over a grid of
/// task counts. Trial `i` at task count `T` draws from seed
/// `(seed, i, T)`, so results do not depend on scheduling.
pub fn convergence_study(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if cfg.t_grid.is_empty() || cfg.t_grid.contains(&0) {
        return invalid("the T grid must be nonempty and positive");
    }
    if cfg.trials == 0 {
        return invalid("need at least one trial");
    }
    if !(cfg.eta >= 0.0) {
        return invalid("eta must be nonnegative");
    }
    let probe = cfg.ensemble(1, cfg.seed);
    probe.validate()?;
    let lambda = effective_spectrum(&probe)?;
    let gamma = if cfg.k == lambda.len() { lambda[cfg.k - 1] } else { lambda[cfg.k - 1] - lambda[cfg.k] };
    if gamma <= 0.0 {
        return invalid("population eigengap is not positive");
    }
    let jobs: Vec<(usize, usize)> = cfg
        .t_grid
        .iter()
        .flat_map(|&t| (0..cfg.trials).map(move |i| (t, i)))
        .collect();
    let trials: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(t, trial)| {
            let ens_cfg = cfg.ensemble(t, crate::rng::derive_seed(&[cfg.seed, trial as u64, t as u64]));
            let ens = sample_ensemble(&ens_cfg)?;
            let s = population_from(&lambda, &ens.basis)?;
            let p_k = Projector::from_basis(&ens.basis.columns(0, cfg.k).into_owned());
            let s_tilde = learned_empirical(&ens.tasks)?;
            let op_error = symmetric_op_norm(&(&s_tilde.matrix - &s.matrix))?;
            let learned = top_k(&s_tilde.matrix, cfg.k)?;
            let subspace_error = subspace_distance(&learned.projector, &p_k)?;
            let bounds = ensemble_bounds(&BoundParameters {
                b: cfg.b,
                delta: cfg.delta,
                c1: cfg.c1,
                c2: cfg.c2,
                t,
                eta_bar: cfg.eta,
                eta2_bar: cfg.eta * cfg.eta,
                gamma_k: Some(gamma),
            })?;
            Ok(TrialResult {
                t,
                trial,
                op_error,
                subspace_error,
                op_bound: bounds.op_bound,
                subspace_bound: bounds.subspace_bound.expect("gamma given"),
            })
        })
        .collect::<Result<_>>()?;
    let mut distinct = cfg.t_grid.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let grid: Vec<GridPoint> = distinct
        .iter()
        .map(|&t| {
            let rows: Vec<&TrialResult> = trials.iter().filter(|r| r.t == t).collect();
            let n = rows.len() as f64;
            GridPoint {
                t,
                mean_op_error: rows.iter().map(|r| r.op_error).sum::<f64>() / n,
                mean_subspace_error: rows.iter().map(|r| r.subspace_error).sum::<f64>() / n,
                op_bound: rows[0].op_bound,
                subspace_bound: rows[0].subspace_bound,
            }
        })
        .collect();
    let x: Vec<f64> = grid.iter().map(|g| (g.t as f64).ln()).collect();
    let y: Vec<f64> = grid.iter().map(|g| g.mean_op_error.max(f64::MIN_POSITIVE).ln()).collect();
    let slope = fit_slope(&x, &y);
    Ok(ConvergenceReport {
        config: cfg.clone(),
        trials,
        grid,
        slope,
        slope_undefined: slope.is_none(),
        floor: cfg.floor(),
        gamma,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DkStudy {
    pub d: usize,
    pub k: Option<usize>,
    pub perturb: f64,
    pub trials: usize,
    pub seed: u64,
    pub violations: usize,
    /// Largest `lhs / rhs` observed.
    pub max_ratio: f64,
    pub results: Vec<(usize, DavisKahan)>,
}

impl DkStudy {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["trial", "k", "gamma", "lhs", "rhs", "holds"]);
        t.set("d", self.d)
            .set("k", self.k.map_or("random".to_string(), |k| k.to_string()))
            .set("perturb", self.perturb)
            .set("trials", self.trials)
            .set("seed", self.seed)
            .set("violations", self.violations)
            .set("max_ratio", self.max_ratio);
        for (i, (k, r)) in self.results.iter().enumerate() {
            t.push(vec![
                Cell::from(i),
                Cell::from(*k),
                Cell::from(r.gamma),
                Cell::from(r.lhs),
                Cell::from(r.rhs),
                Cell::from(if r.holds { "true" } else { "false" }),
            ]);
        }
        t
    }
}

/// Random symmetric matrix with unit operator norm (normalised GOE draw).
pub fn random_symmetric_unit(rng: &mut impl rand::Rng, d: usize) -> Result<Matrix> {
    let g = gaussian_matrix(rng, d, d);
    let sym = (&g + g.transpose()) * 0.5;
    let norm = symmetric_op_norm(&sym)?;
    if norm == 0.0 {
        return Err(Error::NumericalFailure("zero perturbation draw".into()));
    }
    Ok(sym / norm)
}

/// Random PSD reference operators `Q diag(l) Q^T` (eigenvalues uniform on
/// [0, 1)) perturbed by `perturb` times a unit-norm symmetric matrix,
/// checked against the Davis-Kahan inequality. `k = None` draws `k`
/// uniformly from `1..d` per trial.
pub fn dk_study(d: usize, k: Option<usize>, perturb: f64, trials: usize, seed: u64) -> Result<DkStudy> {
    if d < 2 {
        return invalid("need d >= 2");
    }
    if let Some(k) = k {
        if k == 0 || k >= d {
            return invalid(format!("k must lie in 1..{d}"));
        }
    }
    if !(perturb >= 0.0 && perturb.is_finite()) {
        return invalid("perturbation size must be finite and nonnegative");
    }
    let results: Vec<(usize, DavisKahan)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(&[seed, i as u64]);
            let kk = k.unwrap_or_else(|| 1 + (rand::Rng::random::<u64>(&mut rng) % (d as u64 - 1)) as usize);
            let q = orthonormal_columns(&mut rng, d, d);
            let mut l: Vec<f64> = (0..d).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
            l.sort_by(|a, b| b.total_cmp(a));
            let s_ref = population_from(&l, &q)?.matrix;
            let e = random_symmetric_unit(&mut rng, d)? * perturb;
            let s_pert = &s_ref + e;
            Ok((kk, davis_kahan_check(&s_ref, &s_pert, kk)?))
        })
        .collect::<Result<_>>()?;
    let violations = results.iter().filter(|(_, r)| !r.holds).count();
    let max_ratio = results
        .iter()
        .map(|(_, r)| if r.rhs > 0.0 { r.lhs / r.rhs } else { 0.0 })
        .fold(0.0, f64::max);
    Ok(DkStudy {
        d,
        k,
        perturb,
        trials,
        seed,
        violations,
        max_ratio,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn noiseless_tasks_are_exact() {
        let cfg = SyntheticEnsembleConfig::planted(8, 3, 20, 2.0, 0.0, 1);
        let e = sample_ensemble(&cfg).unwrap();
        assert!(e.tasks.iter().all(|t| t.f_hat == t.f_star && t.f_star.norm() <= 2.0));
        let p = &e.projector.matrix;
        assert!((p * p - p).amax() < 1e-12);
        assert!((p.trace() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SyntheticEnsembleConfig::planted(4, 5, 3, 1.0, 0.0, 1);
        assert!(sample_ensemble(&cfg).is_err());
        cfg.k = 2;
        cfg.spectrum = vec![1.0, 2.0];
        assert!(sample_ensemble(&cfg).is_err());
        cfg.spectrum = vec![1.0, 1.0];
        cfg.eta = vec![0.1];
        assert!(sample_ensemble(&cfg).is_err());
    }

    #[test]
    fn second_moment_examples() {
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let s = second_moment(std::slice::from_ref(&e1), OperatorKind::TrueEmpirical).unwrap();
        assert_eq!(s.trace, 1.0);
        let s = second_moment(&[e1, e2], OperatorKind::TrueEmpirical).unwrap();
        assert!((s.op_norm - 0.5).abs() < 1e-15);
        assert!((s.matrix.clone() - diag(&[0.5, 0.5, 0.0])).amax() < 1e-15);
        assert!(second_moment(&[], OperatorKind::TrueEmpirical).is_err());
    }

    #[test]
    fn diagonal_projector() {
        let op = SecondMomentOperator::new(diag(&[3.0, 2.0, 1.0]), OperatorKind::Population).unwrap();
        let top = top_k_projector(&op, 2).unwrap();
        assert!((top.projector.matrix - diag(&[1.0, 1.0, 0.0])).amax() < 1e-12);
        assert!((top.gamma - 1.0).abs() < 1e-12);
        let all = top_k_projector(&op, 3).unwrap();
        assert!((all.projector.matrix - Matrix::identity(3, 3)).amax() < 1e-12);
        assert!((all.gamma - 1.0).abs() < 1e-12);
        let flat = SecondMomentOperator::new(Matrix::identity(3, 3), OperatorKind::Population).unwrap();
        assert!(top_k_projector(&flat, 1).unwrap().degenerate);
    }

    #[test]
    fn distances() {
        let p = Projector::from_basis(&Matrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let q = Projector::from_basis(&Matrix::from_column_slice(2, 1, &[0.0, 1.0]));
        assert!(subspace_distance(&p, &p).unwrap() < 1e-15);
        assert!((subspace_distance(&p, &q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_arithmetic() {
        let p = BoundParameters::new(1.0, 0.5, 100, 0.1, 0.01).with_gamma(0.5);
        let b = ensemble_bounds(&p).unwrap();
        let expected = (2f64.ln() / 100.0).sqrt() + 0.21;
        assert!((b.op_bound - expected).abs() < 1e-15);
        assert!((b.subspace_bound.unwrap() - 4.0 * expected).abs() < 1e-14);
        let noiseless = ensemble_bounds(&BoundParameters::new(2.0, 0.1, 50, 0.0, 0.0)).unwrap();
        assert!((noiseless.op_bound - 4.0 * (10f64.ln() / 50.0).sqrt()).abs() < 1e-15);
        assert!(ensemble_bounds(&p.clone().with_gamma(0.0)).is_err());
        assert!((p.delta_task() - 0.0025).abs() < 1e-18 && p.delta_across() == 0.25);
    }

    #[test]
    fn within_task_examples() {
        let f = DVector::from_vec(vec![1.0, 0.0]);
        let same = [TaskVector { f_star: f.clone(), f_hat: f.clone() }];
        assert_eq!(within_task_term(&same, 1.0).unwrap().measured, 0.0);
        let eta = 0.3;
        let tilted = [TaskVector { f_star: f.clone(), f_hat: DVector::from_vec(vec![1.0, eta]) }];
        let w = within_task_term(&tilted, 1.0).unwrap();
        // f^f^^T - ff^T = [[0, eta], [eta, eta^2]]; largest |eigenvalue|:
        let expected = (eta * eta + (eta.powi(4) + 4.0 * eta * eta).sqrt()) / 2.0;
        assert!((w.measured - expected).abs() < 1e-12);
        assert!(w.holds && w.measured <= 2.0 * eta + eta * eta);
    }

    #[test]
    fn davis_kahan_identity_and_gap() {
        let s = diag(&[2.0, 1.0, 0.0]);
        let r = davis_kahan_check(&s, &s, 1).unwrap();
        assert!(r.lhs < 1e-12 && r.holds);
        assert!(davis_kahan_check(&Matrix::identity(3, 3), &s, 1).is_err());
        let near = diag(&[1.001, 1.0, 0.0]);
        let mut pert = near.clone();
        pert[(0, 1)] = 0.05;
        pert[(1, 0)] = 0.05;
        assert!(davis_kahan_check(&near, &pert, 1).unwrap().holds);
    }

    #[test]
    fn risk_examples() {
        assert_eq!(optimal_projection_risk(&[1.0, 0.5, 0.25], 2), 0.25);
        assert_eq!(optimal_projection_risk(&[1.0, 0.5, 0.25], 3), 0.0);
        let s = diag(&[1.0, 0.5, 0.25]);
        let p = Projector::from_basis(&Matrix::from_column_slice(3, 2, &[1., 0., 0., 0., 1., 0.]));
        assert!((projection_risk(&s, &p).unwrap() - 0.25).abs() < 1e-15);
        let q = Projector::from_basis(&Matrix::from_column_slice(3, 2, &[1., 0., 0., 0., 0., 1.]));
        let e = excess_projection_risk(&s, &q).unwrap();
        assert!((e.excess - 0.25).abs() < 1e-12 && e.holds);
    }

    #[test]
    fn sphere_spectrum_sums_to_b_squared() {
        let mut cfg = SyntheticEnsembleConfig::planted(6, 3, 1, 2.0, 0.0, 0);
        cfg.spectrum = vec![1.0, 0.3, 0.1];
        cfg.norm = NormControl::Sphere;
        let l = effective_spectrum(&cfg).unwrap();
        assert!((l.iter().sum::<f64>() - 4.0).abs() < 1e-9, "{l:?}");
        assert!(l[0] > l[1] && l[1] > l[2]);
        cfg.spectrum = vec![1.0, 1.0, 1.0];
        let l = effective_spectrum(&cfg).unwrap();
        assert!(l.iter().all(|x| (x - 4.0 / 3.0).abs() < 1e-9));
    }

    #[test]
    fn clip_without_clipping_is_exact() {
        let cfg = SyntheticEnsembleConfig::planted(6, 3, 1, 100.0, 0.0, 0);
        assert_eq!(effective_spectrum(&cfg).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn slope_fit() {
        let x = [1.0, 2.0, 3.0];
        assert!((fit_slope(&x, &[2.0, 1.5, 1.0]).unwrap() + 0.5).abs() < 1e-15);
        assert!(fit_slope(&[1.0], &[1.0]).is_none());
        assert!(fit_slope(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn single_point_grid_flags_slope() {
        let cfg = ConvergenceConfig {
            d: 8,
            k: 2,
            t_grid: vec![1],
            trials: 3,
            ..ConvergenceConfig::default()
        };
        let r = convergence_study(&cfg).unwrap();
        assert!(r.slope_undefined && r.slope.is_none());
        assert_eq!(r.trials.len(), 3);
    }

    #[test]
    fn eta_complexity() {
        let e = eta_from_complexity(0.1, 50, 0.01).unwrap();
        assert!((e - (0.1 + (100f64.ln() / 100.0).sqrt())).abs() < 1e-15);
    }
}
