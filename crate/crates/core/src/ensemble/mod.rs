//! Model ensembles: weight I/O, per-layer stacking, universal-subspace
//! extraction and everything built on a fitted subspace.

pub mod adapt;
pub mod container;
pub mod memory;
pub mod scree;
pub mod subspace;
pub mod synthetic;

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hosvd::Centering;
use crate::spectral::RankPolicy;
use crate::tensor::{DenseTensor, Matrix};

pub use adapt::{adapt_coefficients, AdaptMethod, FitReport};
pub use container::{Container, Dtype, Entry};
pub use memory::{memory_savings, AdaptationBudget, trainable_parameters, MemoryPreset, MemorySpec};
pub use scree::{scree_report, LayerScree, ScreeReport};
pub use subspace::{
    extract_universal, merge_models, project_model, reconstruct_model, CoefficientSet,
    LayerSubspace, MergeReport, UniversalSubspace,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub matrix: Matrix,
    pub dtype: Dtype,
}

/// Named weight matrices of one model, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub model_id: String,
    pub layers: IndexMap<String, Layer>,
}

impl ModelWeights {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            layers: IndexMap::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, matrix: Matrix, dtype: Dtype) -> Result<()> {
        let name = name.into();
        if self.layers.contains_key(&name) {
            return invalid(format!("duplicate layer {name:?}"));
        }
        if matrix.is_empty() || matrix.iter().any(|v| !v.is_finite()) {
            return invalid(format!("layer {name:?} is empty or not finite"));
        }
        self.layers.insert(name, Layer { matrix, dtype });
        Ok(())
    }

    pub fn with_layer(mut self, name: impl Into<String>, matrix: Matrix, dtype: Dtype) -> Result<Self> {
        self.push(name, matrix, dtype)?;
        Ok(self)
    }

    pub fn layer(&self, name: &str) -> Option<&Matrix> {
        self.layers.get(name).map(|l| &l.matrix)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.values().map(|l| l.matrix.len()).sum()
    }

    pub fn to_container(&self) -> Container {
        Container {
            model_id: self.model_id.clone(),
            entries: self
                .layers
                .iter()
                .map(|(name, l)| Entry {
                    name: name.clone(),
                    dtype: l.dtype,
                    shape: vec![l.matrix.nrows(), l.matrix.ncols()],
                    data: row_major(&l.matrix),
                })
                .collect(),
            meta: None,
        }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let mut w = Self::new(c.model_id);
        for e in c.entries {
            if e.shape.len() != 2 {
                return invalid(format!(
                    "entry {:?} has shape {:?}; weight files hold matrices only",
                    e.name, e.shape
                ));
            }
            let m = Matrix::from_row_slice(e.shape[0], e.shape[1], &e.data);
            w.push(e.name, m, e.dtype)?;
        }
        Ok(w)
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    ModelWeights::from_container(Container::read(path)?)
}

/// Writes `w` atomically. f32 layers are rounded to single precision.
pub fn save_weights(w: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    w.to_container().write(path)
}

pub(crate) fn row_major(m: &Matrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// How one layer is arranged across `T` models before decomposition. In all
/// three arrangements the payload is the models' row-major matrices back to
/// back; only the shape differs. The model index always lives in mode 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stacking {
    /// Each model contributes one row of length `rows*cols`: `T x (rows*cols)`.
    /// Per-layer PCA over models.
    Flatten,
    /// Row blocks concatenated: `(T*rows) x cols`.
    #[default]
    Rows,
    /// A separate model mode: `T x rows x cols`.
    ModelMode,
}

impl Stacking {
    /// Decomposition order: 1 is PCA over flattened models, 2 the row
    /// concatenation, 3 the separate model mode.
    pub fn order(self) -> usize {
        match self {
            Stacking::Flatten => 1,
            Stacking::Rows => 2,
            Stacking::ModelMode => 3,
        }
    }

    pub fn from_order(order: usize) -> Result<Self> {
        match order {
            1 => Ok(Stacking::Flatten),
            2 => Ok(Stacking::Rows),
            3 => Ok(Stacking::ModelMode),
            _ => invalid(format!("stacking order must be 1, 2 or 3, got {order}")),
        }
    }

    pub fn stacked_shape(self, models: usize, rows: usize, cols: usize) -> Vec<usize> {
        match self {
            Stacking::Flatten => vec![models, rows * cols],
            Stacking::Rows => vec![models * rows, cols],
            Stacking::ModelMode => vec![models, rows, cols],
        }
    }

    /// Extent of one model's slab along the stacking mode.
    pub fn slab(self, rows: usize) -> usize {
        match self {
            Stacking::Rows => rows,
            Stacking::Flatten | Stacking::ModelMode => 1,
        }
    }

    pub fn to_slab(self, m: &Matrix) -> DenseTensor {
        DenseTensor::new(self.stacked_shape(1, m.nrows(), m.ncols()), row_major(m))
            .expect("shape matches payload")
    }

    pub fn from_slab(self, t: &DenseTensor, rows: usize, cols: usize) -> Result<Matrix> {
        if t.shape() != self.stacked_shape(1, rows, cols).as_slice() {
            return Err(Error::Internal(format!(
                "slab shape {:?} does not hold a {rows}x{cols} matrix",
                t.shape()
            )));
        }
        Ok(Matrix::from_row_slice(rows, cols, t.data()))
    }
}

/// Which shared layers are left out of the subspace.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "names", rename_all = "snake_case")]
pub enum LayerExclusion {
    /// First and last layer in the first model's order.
    #[default]
    FirstAndLast,
    Named(Vec<String>),
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub architecture_id: String,
    /// One policy for every mode, or one per mode of the stacked tensor.
    pub policies: Vec<RankPolicy>,
    pub centering: Centering,
    pub stacking: Stacking,
    pub exclusion: LayerExclusion,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            architecture_id: "unspecified".into(),
            policies: vec![RankPolicy::default()],
            centering: Centering::Feature,
            stacking: Stacking::Rows,
            exclusion: LayerExclusion::FirstAndLast,
        }
    }
}

impl ExtractionConfig {
    pub fn with_policy(mut self, policy: RankPolicy) -> Self {
        self.policies = vec![policy];
        self
    }

    pub fn with_stacking(mut self, stacking: Stacking) -> Self {
        self.stacking = stacking;
        self
    }

    pub fn with_centering(mut self, centering: Centering) -> Self {
        self.centering = centering;
        self
    }

    pub fn with_exclusion(mut self, exclusion: LayerExclusion) -> Self {
        self.exclusion = exclusion;
        self
    }

    pub fn with_architecture(mut self, id: impl Into<String>) -> Self {
        self.architecture_id = id.into();
        self
    }
}

/// Stacks `layer` across `models`. Fails listing every model that lacks the
/// layer or disagrees with the first model's shape.
pub fn stack_layer(models: &[ModelWeights], layer: &str, stacking: Stacking) -> Result<DenseTensor> {
    let Some(first) = models.first() else {
        return invalid("cannot stack an empty model list");
    };
    let Some(reference) = first.layer(layer) else {
        return invalid(format!("layer {layer:?} missing from model {:?}", first.model_id));
    };
    let (rows, cols) = reference.shape();
    let mut offenders = Vec::new();
    for m in models {
        match m.layer(layer) {
            None => offenders.push(format!("{} (missing)", m.model_id)),
            Some(w) if w.shape() != (rows, cols) => {
                offenders.push(format!("{} ({}x{})", m.model_id, w.nrows(), w.ncols()))
            }
            Some(_) => {}
        }
    }
    if !offenders.is_empty() {
        return invalid(format!(
            "layer {layer:?} is {rows}x{cols} in {:?} but differs in: {}",
            first.model_id,
            offenders.join(", ")
        ));
    }
    let mut data = Vec::with_capacity(models.len() * rows * cols);
    for m in models {
        data.extend(row_major(m.layer(layer).expect("checked")));
    }
    DenseTensor::new(stacking.stacked_shape(models.len(), rows, cols), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(id: &str, layers: &[(&str, Matrix)]) -> ModelWeights {
        let mut w = ModelWeights::new(id);
        for (n, m) in layers {
            w.push(*n, m.clone(), Dtype::F64).unwrap();
        }
        w
    }

    #[test]
    fn single_model_stack_is_the_layer() {
        let m = Matrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let t = stack_layer(&[model("a", &[("w", m.clone())])], "w", Stacking::Rows).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.to_matrix(), m);
    }

    #[test]
    fn order_three_shape() {
        let a = model("a", &[("w", Matrix::identity(2, 2))]);
        let b = model("b", &[("w", Matrix::zeros(2, 2))]);
        let t = stack_layer(&[a, b], "w", Stacking::ModelMode).unwrap();
        assert_eq!(t.shape(), &[2, 2, 2]);
        assert_eq!(t.get(&[0, 1, 1]), 1.0);
        assert_eq!(t.get(&[1, 1, 1]), 0.0);
    }

    #[test]
    fn row_concatenation_matches_appendix_layout() {
        let models: Vec<_> = (0..500)
            .map(|i| model(&format!("m{i}"), &[("a", Matrix::from_element(16, 4096, i as f64))]))
            .collect();
        let t = stack_layer(&models, "a", Stacking::Rows).unwrap();
        assert_eq!(t.shape(), &[8000, 4096]);
        assert_eq!(t.get(&[16 * 7 + 3, 100]), 7.0);
    }

    #[test]
    fn mismatch_lists_offenders() {
        let a = model("a", &[("w", Matrix::zeros(2, 2))]);
        let b = model("b", &[("w", Matrix::zeros(3, 2))]);
        let c = model("c", &[("v", Matrix::zeros(2, 2))]);
        let err = stack_layer(&[a, b, c], "w", Stacking::Rows).unwrap_err().to_string();
        assert!(err.contains("b (3x2)") && err.contains("c (missing)"), "{err}");
    }

    #[test]
    fn slab_round_trip() {
        let m = Matrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]);
        for s in [Stacking::Flatten, Stacking::Rows, Stacking::ModelMode] {
            let t = s.to_slab(&m);
            assert_eq!(t.shape()[0], s.slab(2));
            assert_eq!(s.from_slab(&t, 2, 3).unwrap(), m);
        }
    }

    #[test]
    fn weights_container_round_trip() {
        let mut w = model("x", &[("b", Matrix::from_row_slice(1, 2, &[0.1, 0.2]))]);
        w.push("a", Matrix::from_row_slice(2, 1, &[0.5, -0.25]), Dtype::F32).unwrap();
        let back = ModelWeights::from_container(w.to_container()).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.layers.keys().collect::<Vec<_>>(), ["b", "a"]);
    }

    #[test]
    fn rejects_non_finite() {
        let mut w = ModelWeights::new("x");
        assert!(w.push("a", Matrix::from_element(1, 1, f64::NAN), Dtype::F64).is_err());
    }
}
