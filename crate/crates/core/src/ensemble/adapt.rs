//! Fitting a layer inside a fixed subspace by learning only its coefficients.
//!
//! With basis matrices `B_j = reconstruct(e_j) - reconstruct(0)` and mean
//! `M`, the layer is `W(c) = M + sum_j c_j B_j` and the objective is
//! `||X W(c)^T - Y||_F^2`. Writing `F_j = X B_j^T` and `R = Y - X M^T` this
//! is least squares in `c` with normal matrix `G_ij = <F_i, F_j>` and
//! right-hand side `b_j = <F_j, R>`.

use nalgebra::{DVector, SymmetricEigen};
use serde::Serialize;

use super::subspace::UniversalSubspace;
use crate::error::{invalid, Error, Result};
use crate::hosvd::SliceCoefficients;
use crate::report::{Cell, Table};
use crate::tensor::{DenseTensor, Matrix};

/// Eigenvalue ratio below which the normal equations count as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AdaptMethod {
    /// Solve the normal equations, optionally with `ridge * I` added.
    ClosedForm { ridge: Option<f64> },
    /// Plain gradient descent from zero. `lr = None` uses `0.5 / L`.
    Gradient { lr: Option<f64>, epochs: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitReport {
    pub layer: String,
    pub method: AdaptMethod,
    pub samples: usize,
    /// Number of coefficients fitted.
    pub trainable_params: usize,
    /// Largest eigenvalue of the normal matrix.
    pub lipschitz: f64,
    pub min_eigenvalue: f64,
    pub learning_rate: Option<f64>,
    /// Objective at the start and after every epoch (a single final value
    /// for the closed form).
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
    /// `sqrt(final_loss) / ||Y||_F`.
    pub relative_residual: f64,
}

impl FitReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["epoch", "loss"]);
        t.set("layer", &self.layer)
            .set("method", match self.method {
                AdaptMethod::ClosedForm { .. } => "closed-form",
                AdaptMethod::Gradient { .. } => "gd",
            })
            .set("samples", self.samples)
            .set("trainable_params", self.trainable_params)
            .set("lipschitz", self.lipschitz)
            .set("min_eigenvalue", self.min_eigenvalue);
        if let AdaptMethod::ClosedForm { ridge: Some(r) } = self.method {
            t.set("ridge", r);
        }
        if let Some(lr) = self.learning_rate {
            t.set("lr", lr);
        }
        t.set("final_loss", self.final_loss)
            .set("relative_residual", self.relative_residual);
        for (i, l) in self.loss_history.iter().enumerate() {
            t.push(vec![Cell::from(i), Cell::from(*l)]);
        }
        t
    }
}

/// Least-squares problem in coefficient space.
struct Normal {
    /// `(n * d_out) x k`, column `j` is `vec(F_j)`.
    features: Matrix,
    target: DVector<f64>,
    gram: Matrix,
    rhs: DVector<f64>,
}

impl Normal {
    fn loss(&self, c: &DVector<f64>) -> f64 {
        (&self.features * c - &self.target).norm_squared()
    }
}

fn build(u: &UniversalSubspace, layer: &str, x: &Matrix, y: &Matrix) -> Result<(Normal, Vec<usize>)> {
    let l = u.layer(layer)?;
    if x.nrows() == 0 || x.nrows() != y.nrows() {
        return invalid(format!(
            "X has {} rows and Y has {}; both need the same positive count",
            x.nrows(),
            y.nrows()
        ));
    }
    if x.ncols() != l.cols || y.ncols() != l.rows {
        return invalid(format!(
            "layer {layer:?} maps {} inputs to {} outputs but X is {}x{} and Y is {}x{}",
            l.cols,
            l.rows,
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        ));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return invalid("design or target matrix contains non-finite values");
    }
    let shape = u.coefficient_shape(layer)?;
    let k: usize = shape.iter().product();
    let zero = SliceCoefficients::new(DenseTensor::zeros(shape.clone())?);
    let mean = u.reconstruct_layer(layer, &zero)?;
    let mut features = Matrix::zeros(x.nrows() * l.rows, k);
    let mut e = vec![0.0; k];
    for j in 0..k {
        e[j] = 1.0;
        let unit = SliceCoefficients::new(DenseTensor::new(shape.clone(), e.clone())?);
        let basis = u.reconstruct_layer(layer, &unit)? - &mean;
        e[j] = 0.0;
        let f = x * basis.transpose();
        features.column_mut(j).copy_from_slice(f.as_slice());
    }
    let residual = y - x * mean.transpose();
    let target = DVector::from_column_slice(residual.as_slice());
    let gram = features.transpose() * &features;
    let rhs = features.transpose() * &target;
    Ok((
        Normal {
            features,
            target,
            gram,
            rhs,
        },
        shape,
    ))
}

/// Fits the coefficients of `layer` so that `X W^T` approximates `Y`.
/// `X` is `n x cols`, `Y` is `n x rows` for a `rows x cols` layer.
pub fn adapt_coefficients(
    u: &UniversalSubspace,
    layer: &str,
    x: &Matrix,
    y: &Matrix,
    method: AdaptMethod,
) -> Result<(SliceCoefficients, FitReport)> {
    let (normal, shape) = build(u, layer, x, y)?;
    let k = normal.gram.nrows();
    let eig = SymmetricEigen::new(normal.gram.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let (c, history, lr) = match method {
        AdaptMethod::ClosedForm { ridge } => {
            let ridge = match ridge {
                Some(r) if !(r >= 0.0 && r.is_finite()) => {
                    return invalid(format!("ridge must be nonnegative, got {r}"))
                }
                Some(r) => r,
                None => 0.0,
            };
            if lmax <= 0.0 || lmin + ridge <= SINGULAR_RTOL * (lmax + ridge) {
                let trace = normal.gram.trace();
                return Err(Error::RankDeficient {
                    ratio: if lmax > 0.0 { lmin / lmax } else { 0.0 },
                    suggested_ridge: if trace > 0.0 { 1e-8 * trace / k as f64 } else { 1e-8 },
                });
            }
            let system = &normal.gram + Matrix::identity(k, k) * ridge;
            let c = match system.clone().cholesky() {
                Some(ch) => ch.solve(&normal.rhs),
                None => {
                    let e = SymmetricEigen::new(system);
                    let mut proj = e.eigenvectors.transpose() * &normal.rhs;
                    for (p, l) in proj.iter_mut().zip(e.eigenvalues.iter()) {
                        *p /= l;
                    }
                    &e.eigenvectors * proj
                }
            };
            let loss = normal.loss(&c);
            (c, vec![loss], None)
        }
        AdaptMethod::Gradient { lr, epochs } => {
            if lmax <= 0.0 {
                return Err(Error::RankDeficient {
                    ratio: 0.0,
                    suggested_ridge: 1e-8,
                });
            }
            let lr = lr.unwrap_or(0.5 / lmax);
            if !(lr > 0.0 && lr.is_finite()) {
                return invalid(format!("learning rate must be positive, got {lr}"));
            }
            let mut c = DVector::zeros(k);
            let mut history = Vec::with_capacity(epochs + 1);
            history.push(normal.loss(&c));
            for _ in 0..epochs {
                let grad = (&normal.gram * &c - &normal.rhs) * 2.0;
                c -= grad * lr;
                let loss = normal.loss(&c);
                if !loss.is_finite() {
                    return Err(Error::NumericalFailure(format!(
                        "gradient descent diverged at lr {lr} (1/L = {})",
                        1.0 / lmax
                    )));
                }
                history.push(loss);
            }
            (c, history, Some(lr))
        }
    };
    let final_loss = *history.last().expect("history is nonempty");
    let y_norm = y.norm();
    let report = FitReport {
        layer: layer.to_string(),
        method,
        samples: x.nrows(),
        trainable_params: k,
        lipschitz: lmax,
        min_eigenvalue: lmin,
        learning_rate: lr,
        loss_history: history,
        final_loss,
        relative_residual: if y_norm > 0.0 { final_loss.sqrt() / y_norm } else { final_loss.sqrt() },
    };
    let coeffs = SliceCoefficients::new(DenseTensor::new(shape, c.as_slice().to_vec())?).with_label(layer);
    Ok((coeffs, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{extract_universal, ExtractionConfig, LayerExclusion, ModelWeights, Stacking};
    use crate::ensemble::container::Dtype;
    use crate::rng::{gaussian_matrix, seeded};
    use crate::spectral::RankPolicy;

    fn subspace(stacking: Stacking) -> UniversalSubspace {
        let mut rng = seeded(&[11]);
        let basis = gaussian_matrix(&mut rng, 6, 3);
        let models: Vec<_> = (0..12)
            .map(|i| {
                let w = gaussian_matrix(&mut rng, 4, 3) * basis.transpose();
                ModelWeights::new(format!("m{i}")).with_layer("w", w, Dtype::F64).unwrap()
            })
            .collect();
        let cfg = ExtractionConfig::default()
            .with_stacking(stacking)
            .with_exclusion(LayerExclusion::None)
            .with_policy(RankPolicy::FixedK { k: 3 });
        extract_universal(&models, &cfg).unwrap()
    }

    #[test]
    fn exact_recovery_in_subspace() {
        for s in [Stacking::Flatten, Stacking::Rows, Stacking::ModelMode] {
            let u = subspace(s);
            let shape = u.coefficient_shape("w").unwrap();
            let n: usize = shape.iter().product();
            let truth = SliceCoefficients::new(
                DenseTensor::new(shape, (0..n).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap(),
            );
            let w = u.reconstruct_layer("w", &truth).unwrap();
            let x = gaussian_matrix(&mut seeded(&[12]), 20, 6);
            let y = &x * w.transpose();
            let (c, report) =
                adapt_coefficients(&u, "w", &x, &y, AdaptMethod::ClosedForm { ridge: None }).unwrap();
            assert_eq!(report.trainable_params, n);
            assert!(report.relative_residual < 1e-6, "{s:?}");
            for (a, b) in c.values.data().iter().zip(truth.values.data()) {
                assert!((a - b).abs() < 1e-6, "{s:?}");
            }
        }
    }

    #[test]
    fn gradient_matches_closed_form_and_decreases() {
        let u = subspace(Stacking::Flatten);
        let mut rng = seeded(&[13]);
        let x = gaussian_matrix(&mut rng, 30, 6);
        let y = gaussian_matrix(&mut rng, 30, 4);
        let (cf, _) = adapt_coefficients(&u, "w", &x, &y, AdaptMethod::ClosedForm { ridge: None }).unwrap();
        let (gd, report) = adapt_coefficients(
            &u,
            "w",
            &x,
            &y,
            AdaptMethod::Gradient { lr: None, epochs: 5000 },
        )
        .unwrap();
        for (a, b) in cf.values.data().iter().zip(gd.values.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(report.loss_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn singular_system_suggests_ridge() {
        let u = subspace(Stacking::Flatten);
        let x = Matrix::zeros(5, 6);
        let y = Matrix::zeros(5, 4);
        match adapt_coefficients(&u, "w", &x, &y, AdaptMethod::ClosedForm { ridge: None }) {
            Err(Error::RankDeficient { suggested_ridge, .. }) => assert!(suggested_ridge > 0.0),
            other => panic!("unexpected {other:?}"),
        }
        let u = subspace(Stacking::Rows);
        let mut x = Matrix::zeros(5, 6);
        x[(0, 0)] = 1.0;
        assert!(matches!(
            adapt_coefficients(&u, "w", &x, &y, AdaptMethod::ClosedForm { ridge: None }),
            Err(Error::RankDeficient { .. })
        ));
        assert!(adapt_coefficients(&u, "w", &x, &y, AdaptMethod::ClosedForm { ridge: Some(1e-3) }).is_ok());
    }

    #[test]
    fn shape_checks() {
        let u = subspace(Stacking::Rows);
        let x = Matrix::zeros(5, 5);
        let y = Matrix::zeros(5, 4);
        assert!(matches!(
            adapt_coefficients(&u, "w", &x, &y, AdaptMethod::ClosedForm { ridge: None }),
            Err(Error::InvalidArgument(_))
        ));
        assert!(adapt_coefficients(&u, "nope", &x, &y, AdaptMethod::ClosedForm { ridge: None }).is_err());
    }
}
