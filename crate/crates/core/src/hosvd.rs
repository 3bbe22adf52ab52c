//! Truncated zero-centred higher-order SVD.
//!
//! The input tensor is centred (feature-wise along the stacking mode, or by
//! its global mean), every mode-n unfolding is decomposed with a thin SVD and
//! truncated by a [`RankPolicy`], and the core is obtained by contracting the
//! centred tensor with every factor transpose. Truncation is single-pass per
//! mode; there is no alternating refinement.
//!
//! A *slice* is one model's slab of the stacked tensor: same shape as the
//! stacked input except along the stacking mode. Slices are expressed in the
//! factor bases of the non-stacking modes only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectral::{select_rank, thin_svd, RankPolicy, Spectrum};
use crate::tensor::{DenseTensor, Matrix};

/// Residual singular values below this fraction of the unfolding's largest
/// singular value are treated as zero by [`secondary_subspace`].
pub const RESIDUAL_RANK_RTOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// One mean per position of the non-stacking modes (mean over the
    /// stacking mode).
    Feature,
    /// A single scalar mean over all entries.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HosvdConfig {
    /// One policy per mode, or a single policy applied to every mode.
    pub policies: Vec<RankPolicy>,
    pub centering: Centering,
    pub stack_mode: usize,
}

impl Default for HosvdConfig {
    fn default() -> Self {
        Self::uniform(RankPolicy::default())
    }
}

impl HosvdConfig {
    pub fn uniform(policy: RankPolicy) -> Self {
        Self {
            policies: vec![policy],
            centering: Centering::Feature,
            stack_mode: 0,
        }
    }

    pub fn with_centering(mut self, centering: Centering) -> Self {
        self.centering = centering;
        self
    }

    pub fn with_stack_mode(mut self, mode: usize) -> Self {
        self.stack_mode = mode;
        self
    }

    fn policy(&self, mode: usize) -> &RankPolicy {
        if self.policies.len() == 1 {
            &self.policies[0]
        } else {
            &self.policies[mode]
        }
    }

    fn validate(&self, order: usize) -> Result<()> {
        if self.policies.len() != 1 && self.policies.len() != order {
            return invalid(format!(
                "expected 1 or {order} rank policies, got {}",
                self.policies.len()
            ));
        }
        if self.stack_mode >= order {
            return invalid(format!(
                "stacking mode {} out of range for order {order}",
                self.stack_mode
            ));
        }
        self.policies.iter().try_for_each(RankPolicy::validate)
    }
}

/// Mean, truncated factors and core produced by [`hosvd_truncated`].
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceModel {
    /// Broadcastable mean: extent 1 along the stacking mode for feature
    /// centring, extent 1 everywhere for global centring.
    pub mu: DenseTensor,
    /// `I_n x r_n` with orthonormal columns, one per mode.
    pub factors: Vec<Matrix>,
    pub core: DenseTensor,
    /// Full spectrum of every mode unfolding (before truncation).
    pub ledger: Vec<Spectrum>,
    pub centering: Centering,
    pub stack_mode: usize,
    /// Shape of the tensor the model was fitted to.
    pub shape: Vec<usize>,
}

/// A slice expressed in the factor bases of the non-stacking modes.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceCoefficients {
    pub label: String,
    pub values: DenseTensor,
}

impl SliceCoefficients {
    pub fn new(values: DenseTensor) -> Self {
        Self {
            label: String::new(),
            values,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl SubspaceModel {
    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.factors.iter().map(|u| u.ncols()).collect()
    }

    /// `mu + core x_1 U_1 ... x_N U_N`.
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        if self.core.shape() != self.ranks().as_slice() {
            return Err(Error::Internal(format!(
                "core shape {:?} does not match factor ranks {:?}",
                self.core.shape(),
                self.ranks()
            )));
        }
        let mut t = self.core.clone();
        for (mode, u) in self.factors.iter().enumerate() {
            t = t.mode_product(u, mode)?;
        }
        if t.shape() != self.shape.as_slice() {
            return Err(Error::Internal(format!(
                "reconstruction shape {:?} differs from fitted shape {:?}",
                t.shape(),
                self.shape
            )));
        }
        t.broadcast_add(&self.mu)
            .map_err(|e| Error::Internal(format!("mean does not broadcast: {e}")))
    }

    /// Shape a slice with `slab` entries along the stacking mode must have.
    pub fn slice_shape(&self, slab: usize) -> Vec<usize> {
        let mut s = self.shape.clone();
        s[self.stack_mode] = slab;
        s
    }

    /// Shape of the coefficients of a slice with `slab` entries along the
    /// stacking mode.
    pub fn coefficient_shape(&self, slab: usize) -> Vec<usize> {
        let mut s = self.ranks();
        s[self.stack_mode] = slab;
        s
    }

    /// Number of coefficients describing one slice of `slab` stacking entries.
    pub fn coefficients_per_slice(&self, slab: usize) -> usize {
        self.coefficient_shape(slab).iter().product()
    }
}

/// Returns `(mu, x - mu)`.
pub fn center(
    x: &DenseTensor,
    centering: Centering,
    stack_mode: usize,
) -> Result<(DenseTensor, DenseTensor)> {
    let mu = match centering {
        Centering::Feature => x.mean_along(stack_mode)?,
        Centering::Global => {
            let mean = x.data().iter().sum::<f64>() / x.len() as f64;
            DenseTensor::new(vec![1; x.order()], vec![mean])?
        }
    };
    let centered = x.broadcast_sub(&mu)?;
    Ok((mu, centered))
}

pub fn hosvd_truncated(x: &DenseTensor, config: &HosvdConfig) -> Result<SubspaceModel> {
    config.validate(x.order())?;
    if !x.is_finite() {
        return invalid("HOSVD input contains non-finite entries");
    }
    let (mu, xc) = center(x, config.centering, config.stack_mode)?;
    if xc.frobenius_norm() == 0.0 {
        return Err(Error::DegenerateSpectrum(
            "centred tensor is identically zero".into(),
        ));
    }
    let per_mode: Vec<(Matrix, Spectrum)> = (0..x.order())
        .into_par_iter()
        .map(|mode| {
            let unfolded = xc.unfold(mode)?;
            let svd = thin_svd(&unfolded)?;
            let spectrum =
                Spectrum::new(svd.singular_values, unfolded.nrows(), unfolded.ncols())?;
            let rank = select_rank(&spectrum, config.policy(mode))?;
            Ok((svd.u.columns(0, rank).into_owned(), spectrum))
        })
        .collect::<Result<_>>()?;
    let (factors, ledger): (Vec<_>, Vec<_>) = per_mode.into_iter().unzip();
    let core = contract_all(&xc, &factors)?;
    Ok(SubspaceModel {
        mu,
        factors,
        core,
        ledger,
        centering: config.centering,
        stack_mode: config.stack_mode,
        shape: x.shape().to_vec(),
    })
}

fn contract_all(xc: &DenseTensor, factors: &[Matrix]) -> Result<DenseTensor> {
    let mut core = xc.clone();
    for (mode, u) in factors.iter().enumerate() {
        core = core.mode_product(&u.transpose(), mode)?;
    }
    Ok(core)
}

/// `(slice - mu)` contracted with `U_n^T` along every non-stacking mode.
pub fn project_slice(model: &SubspaceModel, slice: &DenseTensor) -> Result<SliceCoefficients> {
    check_slice_shape(model, slice.shape(), &model.shape, "slice")?;
    let mut c = slice.broadcast_sub(&model.mu)?;
    for (mode, u) in model.factors.iter().enumerate() {
        if mode != model.stack_mode {
            c = c.mode_product(&u.transpose(), mode)?;
        }
    }
    Ok(SliceCoefficients::new(c))
}

/// `mu + coeffs x_n U_n` over every non-stacking mode.
pub fn reconstruct_slice(model: &SubspaceModel, coeffs: &SliceCoefficients) -> Result<DenseTensor> {
    let ranks = model.ranks();
    check_slice_shape(model, coeffs.values.shape(), &ranks, "coefficient tensor")?;
    let mut t = coeffs.values.clone();
    for (mode, u) in model.factors.iter().enumerate() {
        if mode != model.stack_mode {
            t = t.mode_product(u, mode)?;
        }
    }
    t.broadcast_add(&model.mu)
}

fn check_slice_shape(
    model: &SubspaceModel,
    shape: &[usize],
    expected: &[usize],
    what: &str,
) -> Result<()> {
    let ok = shape.len() == expected.len()
        && shape
            .iter()
            .zip(expected)
            .enumerate()
            .all(|(m, (a, b))| m == model.stack_mode || a == b);
    if !ok {
        return invalid(format!(
            "{what} shape {shape:?} incompatible with {expected:?} (stacking mode {} is free)",
            model.stack_mode
        ));
    }
    Ok(())
}

/// Subspace of what the primary factors leave behind: for every mode the
/// top-`k2` left singular vectors of `(I - U_n U_n^T) X_(n)`, with the core
/// taken from the centred input. Factors are orthogonal to the primary ones
/// in every mode, and the mean is shared with `model`.
pub fn secondary_subspace(x: &DenseTensor, model: &SubspaceModel, k2: usize) -> Result<SubspaceModel> {
    if x.shape() != model.shape.as_slice() {
        return invalid(format!(
            "tensor shape {:?} differs from the fitted shape {:?}",
            x.shape(),
            model.shape
        ));
    }
    if k2 == 0 {
        return invalid("secondary rank must be at least 1");
    }
    let xc = x.broadcast_sub(&model.mu)?;
    let per_mode: Vec<(Matrix, Spectrum)> = model
        .factors
        .par_iter()
        .enumerate()
        .map(|(mode, u)| {
            let unfolded = xc.unfold(mode)?;
            let scale = thin_svd(&unfolded)?.singular_values[0];
            let residual = &unfolded - u * (u.transpose() * &unfolded);
            let svd = thin_svd(&residual)?;
            let remaining = svd
                .singular_values
                .iter()
                .filter(|&&s| s > RESIDUAL_RANK_RTOL * scale)
                .count();
            if remaining == 0 {
                return Err(Error::DegenerateSpectrum(format!(
                    "mode {mode}: nothing remains outside the primary subspace"
                )));
            }
            if k2 > remaining {
                return invalid(format!(
                    "mode {mode}: secondary rank {k2} exceeds remaining rank {remaining}"
                ));
            }
            let spectrum = Spectrum::new(svd.singular_values, residual.nrows(), residual.ncols())?;
            Ok((svd.u.columns(0, k2).into_owned(), spectrum))
        })
        .collect::<Result<_>>()?;
    let (factors, ledger): (Vec<_>, Vec<_>) = per_mode.into_iter().unzip();
    let core = contract_all(&xc, &factors)?;
    Ok(SubspaceModel {
        mu: model.mu.clone(),
        factors,
        core,
        ledger,
        centering: model.centering,
        stack_mode: model.stack_mode,
        shape: model.shape.clone(),
    })
}
