//! Per-layer universal subspaces and the operations that use them.

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::container::{Container, Dtype, Entry, HEADER_LEN};
use super::{row_major, stack_layer, ExtractionConfig, Layer, LayerExclusion, ModelWeights, Stacking};
use crate::error::{invalid, Error, ParseError, Result};
use crate::hosvd::{hosvd_truncated, project_slice, reconstruct_slice, HosvdConfig, SliceCoefficients, SubspaceModel};
use crate::spectral::Spectrum;
use crate::tensor::{DenseTensor, Matrix};

pub const SUBSPACE_KIND: &str = "universal_subspace";
pub const COEFFICIENTS_KIND: &str = "coefficients";

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSubspace {
    pub model: SubspaceModel,
    pub rows: usize,
    pub cols: usize,
    pub dtype: Dtype,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniversalSubspace {
    pub config: ExtractionConfig,
    /// Included layers in extraction order.
    pub layers: IndexMap<String, LayerSubspace>,
    /// Shared layers left out by the exclusion rule.
    pub excluded: Vec<String>,
    /// Layer order of the first contributing model, used to lay out
    /// reconstructed models.
    pub layer_order: Vec<String>,
    /// `model_id` of every contributing model.
    pub provenance: Vec<String>,
}

impl UniversalSubspace {
    pub fn architecture_id(&self) -> &str {
        &self.config.architecture_id
    }

    pub fn stacking(&self) -> Stacking {
        self.config.stacking
    }

    pub fn layer(&self, name: &str) -> Result<&LayerSubspace> {
        self.layers
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("layer {name:?} is not in the subspace")))
    }

    /// Coefficients describing one model's copy of `name`.
    pub fn coefficient_shape(&self, name: &str) -> Result<Vec<usize>> {
        let l = self.layer(name)?;
        Ok(l.model.coefficient_shape(self.stacking().slab(l.rows)))
    }

    /// Coefficients per model, summed over included layers.
    pub fn coefficients_per_model(&self) -> usize {
        self.layers
            .values()
            .map(|l| l.model.coefficients_per_slice(self.stacking().slab(l.rows)))
            .sum()
    }

    /// Entries of the non-stacking factors, which together with the mean are
    /// all that is needed to reconstruct a model from its coefficients.
    pub fn basis_parameters(&self) -> usize {
        self.layers
            .values()
            .map(|l| {
                l.model
                    .factors
                    .iter()
                    .enumerate()
                    .filter(|(m, _)| *m != l.model.stack_mode)
                    .map(|(_, u)| u.len())
                    .sum::<usize>()
            })
            .sum()
    }

    pub fn mean_parameters(&self) -> usize {
        self.layers.values().map(|l| l.model.mu.len()).sum()
    }

    /// Weights of one model covered by the subspace.
    pub fn included_parameters(&self) -> usize {
        self.layers.values().map(|l| l.rows * l.cols).sum()
    }

    pub fn project_layer(&self, name: &str, w: &Matrix) -> Result<SliceCoefficients> {
        let l = self.layer(name)?;
        if w.shape() != (l.rows, l.cols) {
            return invalid(format!(
                "layer {name:?} is {}x{} but the subspace expects {}x{}",
                w.nrows(),
                w.ncols(),
                l.rows,
                l.cols
            ));
        }
        Ok(project_slice(&l.model, &self.stacking().to_slab(w))?.with_label(name))
    }

    pub fn reconstruct_layer(&self, name: &str, c: &SliceCoefficients) -> Result<Matrix> {
        let l = self.layer(name)?;
        let expected = self.coefficient_shape(name)?;
        if c.values.shape() != expected.as_slice() {
            return invalid(format!(
                "coefficients for {name:?} have shape {:?}, expected {expected:?}",
                c.values.shape()
            ));
        }
        let slab = reconstruct_slice(&l.model, c)?;
        self.stacking().from_slab(&slab, l.rows, l.cols)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut entries = Vec::new();
        let mut layers = Vec::new();
        for (name, l) in &self.layers {
            entries.push(tensor_entry(format!("mu/{name}"), &l.model.mu));
            for (m, u) in l.model.factors.iter().enumerate() {
                entries.push(matrix_entry(format!("U/{name}/{m}"), u));
            }
            entries.push(tensor_entry(format!("core/{name}"), &l.model.core));
            for (m, s) in l.model.ledger.iter().enumerate() {
                let n = s.singular_values.len();
                let mut data = s.singular_values.clone();
                data.extend(&s.ratios);
                entries.push(Entry {
                    name: format!("ledger/{name}/{m}"),
                    dtype: Dtype::F64,
                    shape: vec![2, n],
                    data,
                });
            }
            layers.push(LayerMeta {
                name: name.clone(),
                rows: l.rows,
                cols: l.cols,
                dtype: l.dtype,
                shape: l.model.shape.clone(),
                unfoldings: l.model.ledger.iter().map(|s| (s.rows, s.cols)).collect(),
            });
        }
        let meta = SubspaceMeta {
            kind: SUBSPACE_KIND.into(),
            config: self.config.clone(),
            excluded: self.excluded.clone(),
            layer_order: self.layer_order.clone(),
            provenance: self.provenance.clone(),
            layers,
        };
        Ok(Container {
            model_id: self.config.architecture_id.clone(),
            entries,
            meta: Some(serde_json::to_value(meta).map_err(|e| Error::Internal(e.to_string()))?),
        })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: SubspaceMeta = c
            .meta
            .clone()
            .ok_or_else(|| malformed("missing subspace metadata"))
            .and_then(|m| serde_json::from_value(m).map_err(|e| malformed(&e.to_string())))?;
        if meta.kind != SUBSPACE_KIND {
            return Err(malformed(&format!("file holds {:?}, not a subspace", meta.kind)));
        }
        let entry = |name: String| c.entry(&name).ok_or_else(|| malformed(&format!("missing entry {name:?}")));
        let stacking = meta.config.stacking;
        let mut layers = IndexMap::new();
        for lm in meta.layers {
            let order = lm.shape.len();
            if order != stacking.stacked_shape(1, 1, 1).len() {
                return Err(malformed(&format!("layer {:?} has order {order}", lm.name)));
            }
            let mu = entry(format!("mu/{}", lm.name))?;
            let mu = DenseTensor::new(mu.shape.clone(), mu.data.clone())?;
            let core = entry(format!("core/{}", lm.name))?;
            let core = DenseTensor::new(core.shape.clone(), core.data.clone())?;
            let mut factors = Vec::with_capacity(order);
            let mut ledger = Vec::with_capacity(order);
            for m in 0..order {
                let u = entry(format!("U/{}/{m}", lm.name))?;
                if u.shape.len() != 2 || u.shape[0] != lm.shape[m] || core.shape().get(m) != Some(&u.shape[1]) {
                    return Err(malformed(&format!("factor {m} of {:?} has shape {:?}", lm.name, u.shape)));
                }
                factors.push(Matrix::from_row_slice(u.shape[0], u.shape[1], &u.data));
                let s = entry(format!("ledger/{}/{m}", lm.name))?;
                let (rows, cols) = *lm
                    .unfoldings
                    .get(m)
                    .ok_or_else(|| malformed("ledger dimensions missing"))?;
                if s.shape.len() != 2 || s.shape[0] != 2 {
                    return Err(malformed(&format!("ledger {m} of {:?} has shape {:?}", lm.name, s.shape)));
                }
                let n = s.shape[1];
                ledger.push(Spectrum {
                    singular_values: s.data[..n].to_vec(),
                    ratios: s.data[n..].to_vec(),
                    rows,
                    cols,
                });
            }
            let mu_ok = mu.order() == order
                && mu.shape().iter().zip(&lm.shape).all(|(&a, &b)| a == 1 || a == b);
            let models = lm.shape[0] / stacking.slab(lm.rows).max(1);
            if core.order() != order || !mu_ok || lm.shape != stacking.stacked_shape(models, lm.rows, lm.cols) {
                return Err(malformed(&format!("inconsistent shapes for layer {:?}", lm.name)));
            }
            let model = SubspaceModel {
                mu,
                factors,
                core,
                ledger,
                centering: meta.config.centering,
                stack_mode: 0,
                shape: lm.shape,
            };
            layers.insert(
                lm.name,
                LayerSubspace {
                    model,
                    rows: lm.rows,
                    cols: lm.cols,
                    dtype: lm.dtype,
                },
            );
        }
        Ok(Self {
            config: meta.config,
            layers,
            excluded: meta.excluded,
            layer_order: meta.layer_order,
            provenance: meta.provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct SubspaceMeta {
    kind: String,
    config: ExtractionConfig,
    excluded: Vec<String>,
    layer_order: Vec<String>,
    provenance: Vec<String>,
    layers: Vec<LayerMeta>,
}

#[derive(Serialize, Deserialize)]
struct LayerMeta {
    name: String,
    rows: usize,
    cols: usize,
    dtype: Dtype,
    shape: Vec<usize>,
    unfoldings: Vec<(usize, usize)>,
}

fn malformed(reason: &str) -> Error {
    Error::Parse(ParseError::Manifest {
        offset: HEADER_LEN,
        reason: reason.to_string(),
    })
}

fn tensor_entry(name: String, t: &DenseTensor) -> Entry {
    Entry {
        name,
        dtype: Dtype::F64,
        shape: t.shape().to_vec(),
        data: t.data().to_vec(),
    }
}

fn matrix_entry(name: String, m: &Matrix) -> Entry {
    Entry {
        name,
        dtype: Dtype::F64,
        shape: vec![m.nrows(), m.ncols()],
        data: row_major(m),
    }
}

/// Layers present in every model, in the first model's order, split into
/// included and excluded.
fn partition_layers(models: &[ModelWeights], rule: &LayerExclusion) -> (Vec<String>, Vec<String>) {
    let order: Vec<&String> = models[0].layers.keys().collect();
    let excluded_names: HashSet<&str> = match rule {
        LayerExclusion::FirstAndLast => [order.first(), order.last()]
            .into_iter()
            .flatten()
            .map(|s| s.as_str())
            .collect(),
        LayerExclusion::Named(names) => names.iter().map(String::as_str).collect(),
        LayerExclusion::None => HashSet::new(),
    };
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for name in order {
        if !models.iter().all(|m| m.layers.contains_key(name)) {
            continue;
        }
        if excluded_names.contains(name.as_str()) {
            excluded.push(name.clone());
        } else {
            included.push(name.clone());
        }
    }
    (included, excluded)
}

/// Stacks and decomposes every shared, non-excluded layer independently.
pub fn extract_universal(models: &[ModelWeights], config: &ExtractionConfig) -> Result<UniversalSubspace> {
    if models.is_empty() {
        return invalid("extraction needs at least one model");
    }
    let (included, excluded) = partition_layers(models, &config.exclusion);
    if included.is_empty() {
        return invalid(format!(
            "no shared layers remain after exclusion (excluded: {excluded:?})"
        ));
    }
    let hosvd_config = HosvdConfig {
        policies: config.policies.clone(),
        centering: config.centering,
        stack_mode: 0,
    };
    let fitted: Vec<(String, LayerSubspace)> = included
        .par_iter()
        .map(|name| {
            let x = stack_layer(models, name, config.stacking)?;
            let model = hosvd_truncated(&x, &hosvd_config)
                .map_err(|e| annotate(e, &format!("layer {name:?}")))?;
            let first = &models[0].layers[name];
            Ok((
                name.clone(),
                LayerSubspace {
                    model,
                    rows: first.matrix.nrows(),
                    cols: first.matrix.ncols(),
                    dtype: first.dtype,
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(UniversalSubspace {
        config: config.clone(),
        layers: fitted.into_iter().collect(),
        excluded,
        layer_order: models[0].layers.keys().cloned().collect(),
        provenance: models.iter().map(|m| m.model_id.clone()).collect(),
    })
}

fn annotate(e: Error, context: &str) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{context}: {m}")),
        Error::NumericalFailure(m) => Error::NumericalFailure(format!("{context}: {m}")),
        Error::DegenerateSpectrum(m) => Error::DegenerateSpectrum(format!("{context}: {m}")),
        other => other,
    }
}

/// One model expressed in a universal subspace: coefficients for every
/// included layer plus untouched copies of the remaining layers.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSet {
    pub model_id: String,
    pub coefficients: IndexMap<String, SliceCoefficients>,
    pub passthrough: IndexMap<String, Layer>,
}

impl CoefficientSet {
    pub fn parameter_count(&self) -> usize {
        self.coefficients.values().map(SliceCoefficients::len).sum()
    }

    pub fn to_container(&self) -> Container {
        let mut entries: Vec<Entry> = self
            .coefficients
            .iter()
            .map(|(name, c)| tensor_entry(format!("coeff/{name}"), &c.values))
            .collect();
        entries.extend(self.passthrough.iter().map(|(name, l)| Entry {
            name: format!("raw/{name}"),
            dtype: l.dtype,
            shape: vec![l.matrix.nrows(), l.matrix.ncols()],
            data: row_major(&l.matrix),
        }));
        Container {
            model_id: self.model_id.clone(),
            entries,
            meta: Some(serde_json::json!({ "kind": COEFFICIENTS_KIND })),
        }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let kind = c.meta.as_ref().and_then(|m| m.get("kind")).and_then(|k| k.as_str());
        if kind != Some(COEFFICIENTS_KIND) {
            return Err(malformed("not a coefficient file"));
        }
        let mut out = Self {
            model_id: c.model_id,
            coefficients: IndexMap::new(),
            passthrough: IndexMap::new(),
        };
        for e in c.entries {
            if let Some(name) = e.name.strip_prefix("coeff/") {
                let values = DenseTensor::new(e.shape.clone(), e.data)?;
                out.coefficients
                    .insert(name.to_string(), SliceCoefficients::new(values).with_label(name));
            } else if let Some(name) = e.name.strip_prefix("raw/") {
                if e.shape.len() != 2 {
                    return Err(malformed(&format!("passthrough {name:?} is not a matrix")));
                }
                let matrix = Matrix::from_row_slice(e.shape[0], e.shape[1], &e.data);
                out.passthrough.insert(name.to_string(), Layer { matrix, dtype: e.dtype });
            } else {
                return Err(malformed(&format!("unexpected entry {:?}", e.name)));
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::read(path)?)
    }
}

pub fn project_model(u: &UniversalSubspace, w: &ModelWeights) -> Result<CoefficientSet> {
    let missing: Vec<&str> = u
        .layers
        .keys()
        .filter(|n| !w.layers.contains_key(*n))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return invalid(format!("model {:?} lacks layers {missing:?}", w.model_id));
    }
    let coefficients: Vec<(String, SliceCoefficients)> = u
        .layers
        .keys()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&name| Ok((name.clone(), u.project_layer(name, &w.layers[name].matrix)?)))
        .collect::<Result<_>>()?;
    Ok(CoefficientSet {
        model_id: w.model_id.clone(),
        coefficients: coefficients.into_iter().collect(),
        passthrough: w
            .layers
            .iter()
            .filter(|(n, _)| !u.layers.contains_key(*n))
            .map(|(n, l)| (n.clone(), l.clone()))
            .collect(),
    })
}

pub fn reconstruct_model(u: &UniversalSubspace, c: &CoefficientSet) -> Result<ModelWeights> {
    let missing: Vec<&String> = u.layers.keys().filter(|n| !c.coefficients.contains_key(*n)).collect();
    let extra: Vec<&String> = c.coefficients.keys().filter(|n| !u.layers.contains_key(*n)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return invalid(format!(
            "coefficient set does not match the subspace (missing {missing:?}, unexpected {extra:?})"
        ));
    }
    let rebuilt: Vec<(String, Matrix)> = u
        .layers
        .keys()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&name| Ok((name.clone(), u.reconstruct_layer(name, &c.coefficients[name])?)))
        .collect::<Result<_>>()?;
    let mut rebuilt: IndexMap<String, Matrix> = rebuilt.into_iter().collect();
    let mut w = ModelWeights::new(c.model_id.clone());
    let mut emit = |w: &mut ModelWeights, name: &str| -> Result<()> {
        if let Some(m) = rebuilt.shift_remove(name) {
            w.push(name, m, u.layers[name].dtype)
        } else if let Some(l) = c.passthrough.get(name) {
            w.push(name, l.matrix.clone(), l.dtype)
        } else {
            Ok(())
        }
    };
    for name in &u.layer_order {
        emit(&mut w, name)?;
    }
    let leftovers: Vec<String> = u
        .layers
        .keys()
        .chain(c.passthrough.keys())
        .filter(|n| !w.layers.contains_key(*n))
        .cloned()
        .collect();
    for name in leftovers {
        emit(&mut w, &name)?;
    }
    Ok(w)
}

/// How a merge was carried out.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MergeReport {
    pub formula: &'static str,
    pub weights: Vec<f64>,
    pub merged_layers: Vec<String>,
    /// Layers outside the subspace, averaged element-wise with the same weights.
    pub averaged_passthrough: Vec<String>,
    /// Layers outside the subspace that are missing from some model or
    /// disagree in shape; they are left out of the merged model.
    pub omitted: Vec<String>,
}

/// Weighted mean of the models' coefficients, reconstructed. Uniform weights
/// by default. Layers outside the subspace are averaged element-wise when
/// every model has them with one shape.
pub fn merge_models(
    u: &UniversalSubspace,
    models: &[ModelWeights],
    weights: Option<&[f64]>,
) -> Result<(ModelWeights, MergeReport)> {
    if models.len() < 2 {
        return invalid(format!("merging needs at least 2 models, got {}", models.len()));
    }
    let weights = match weights {
        None => vec![1.0 / models.len() as f64; models.len()],
        Some(w) => {
            if w.len() != models.len() {
                return invalid(format!("{} merge weights for {} models", w.len(), models.len()));
            }
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return invalid("merge weights must be finite and nonnegative");
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return invalid(format!("merge weights sum to {sum}, not 1"));
            }
            w.to_vec()
        }
    };
    let projected: Vec<CoefficientSet> = models
        .par_iter()
        .map(|m| project_model(u, m))
        .collect::<Result<_>>()?;
    let mut coefficients = IndexMap::new();
    for name in u.layers.keys() {
        let first = &projected[0].coefficients[name].values;
        let mut acc = vec![0.0; first.len()];
        for (p, &wt) in projected.iter().zip(&weights) {
            for (a, v) in acc.iter_mut().zip(p.coefficients[name].values.data()) {
                *a += wt * v;
            }
        }
        let values = DenseTensor::new(first.shape().to_vec(), acc)?;
        coefficients.insert(name.clone(), SliceCoefficients::new(values).with_label(name));
    }

    let mut passthrough = IndexMap::new();
    let mut averaged = Vec::new();
    let mut omitted = Vec::new();
    for (name, layer) in &models[0].layers {
        if u.layers.contains_key(name) {
            continue;
        }
        let shape = layer.matrix.shape();
        if models.iter().all(|m| m.layer(name).is_some_and(|x| x.shape() == shape)) {
            let mut acc = Matrix::zeros(shape.0, shape.1);
            for (m, &wt) in models.iter().zip(&weights) {
                acc += m.layer(name).expect("checked") * wt;
            }
            passthrough.insert(name.clone(), Layer { matrix: acc, dtype: layer.dtype });
            averaged.push(name.clone());
        } else {
            omitted.push(name.clone());
        }
    }
    for m in &models[1..] {
        for name in m.layers.keys() {
            if !u.layers.contains_key(name) && !models[0].layers.contains_key(name) && !omitted.contains(name) {
                omitted.push(name.clone());
            }
        }
    }
    let set = CoefficientSet {
        model_id: "merged".into(),
        coefficients,
        passthrough,
    };
    let merged = reconstruct_model(u, &set)?;
    Ok((
        merged,
        MergeReport {
            formula: "coefficient averaging: c = sum_i w_i c_i, W = reconstruct(c)",
            weights,
            merged_layers: u.layers.keys().cloned().collect(),
            averaged_passthrough: averaged,
            omitted,
        },
    ))
}
