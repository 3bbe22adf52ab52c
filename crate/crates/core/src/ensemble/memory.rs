//! Storage accounting for an ensemble kept as one shared basis plus
//! per-model coefficients.

use serde::Serialize;

use super::subspace::UniversalSubspace;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MemorySpec {
    /// Number of models `T`.
    pub models: u64,
    pub per_model_params: u64,
    pub basis_params: u64,
    pub coeff_params_per_model: u64,
    pub mean_params: u64,
}

/// `T * P / (basis + mean + T * c)`.
pub fn memory_savings(spec: &MemorySpec) -> Result<f64> {
    if spec.models == 0 || spec.per_model_params == 0 {
        return invalid("model count and per-model parameter count must be positive");
    }
    let denominator = spec.basis_params as f64
        + spec.mean_params as f64
        + spec.models as f64 * spec.coeff_params_per_model as f64;
    if denominator == 0.0 {
        return invalid("basis, mean and coefficient counts are all zero");
    }
    Ok(spec.models as f64 * spec.per_model_params as f64 / denominator)
}

/// Coefficients trained when adapting `k` coefficients in each of `layers`
/// subspace-bearing matrices.
pub fn trainable_parameters(k: u64, layers: u64) -> u64 {
    k * layers
}

impl MemorySpec {
    /// Accounting for `models` models stored against a fitted subspace.
    pub fn for_subspace(u: &UniversalSubspace, models: u64) -> Self {
        Self {
            models,
            per_model_params: u.included_parameters() as u64,
            basis_params: u.basis_parameters() as u64,
            coeff_params_per_model: u.coefficients_per_model() as u64,
            mean_params: u.mean_parameters() as u64,
        }
    }
}

/// Coefficient-only adaptation budget against a full fine-tune.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AdaptationBudget {
    pub k: u64,
    pub layers: u64,
    pub full_params: u64,
}

impl AdaptationBudget {
    /// 16 coefficients on each of 600 subspace-bearing matrices of a
    /// ViT-base sized network (86M weights).
    pub fn vit_base() -> Self {
        Self {
            k: 16,
            layers: 600,
            full_params: 86_000_000,
        }
    }

    pub fn trainable(&self) -> u64 {
        trainable_parameters(self.k, self.layers)
    }
}

/// A named, documented parameterization.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryPreset {
    pub name: &'static str,
    pub description: &'static str,
    pub spec: MemorySpec,
}

impl MemoryPreset {
    /// 500 rank-16 adapter pairs on a 4096-wide matrix (131072 weights per
    /// model) against 64 shared directions of width 4096 and 512
    /// coefficients per model, with no stored mean.
    pub fn lora_row_stacked() -> Self {
        Self {
            name: "lora-row-stacked",
            description: "T=500; per model A (16x4096) + B (4096x16) = 131072; basis 64 x 4096 = 262144; 512 coefficients per model; no mean",
            spec: MemorySpec {
                models: 500,
                per_model_params: 131_072,
                basis_params: 262_144,
                coeff_params_per_model: 512,
                mean_params: 0,
            },
        }
    }

    /// 500 rank-16 adapters on the query and value projections of a 32-block
    /// decoder with 4096-wide hidden state and 1024-wide grouped value heads.
    /// Each adapter matrix is flattened and modelled by its mean plus 25
    /// principal components.
    pub fn mistral_lora() -> Self {
        const P: u64 = 32 * (2 * 16 * 4096 + 16 * 4096 + 16 * 1024);
        Self {
            name: "mistral-7b-lora",
            description: "T=500 rank-16 q/v adapters over 32 blocks (P = 6815744); per-matrix PCA keeping 25 components plus the mean; 25 coefficients x 128 matrices per model",
            spec: MemorySpec {
                models: 500,
                per_model_params: P,
                basis_params: 25 * P,
                coeff_params_per_model: 25 * 4 * 32,
                mean_params: P,
            },
        }
    }

    /// 500 full fine-tunes of a 12-block, 768-wide encoder with 3072-wide
    /// MLP (four attention and two MLP matrices per block, embedding and head
    /// excluded). Each matrix is flattened and modelled by its mean plus 3
    /// principal components.
    pub fn vit_base() -> Self {
        const P: u64 = 12 * (4 * 768 * 768 + 2 * 768 * 3072);
        Self {
            name: "vit-base",
            description: "T=500 full fine-tunes, 72 matrices (P = 84934656); per-matrix PCA keeping 3 components plus the mean; 3 coefficients x 72 matrices per model",
            spec: MemorySpec {
                models: 500,
                per_model_params: P,
                basis_params: 3 * P,
                coeff_params_per_model: 3 * 72,
                mean_params: P,
            },
        }
    }

    pub fn all() -> Vec<Self> {
        vec![Self::lora_row_stacked(), Self::mistral_lora(), Self::vit_base()]
    }

    pub fn ratio(&self) -> f64 {
        memory_savings(&self.spec).expect("presets are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_example() {
        let r = MemoryPreset::lora_row_stacked().ratio();
        assert_eq!(r, 65_536_000.0 / 518_144.0);
        assert!((r - 126.5).abs() < 0.05);
    }

    #[test]
    fn overhead_case() {
        let r = memory_savings(&MemorySpec {
            models: 1,
            per_model_params: 100,
            basis_params: 100,
            coeff_params_per_model: 100,
            mean_params: 0,
        })
        .unwrap();
        assert!(r < 1.0);
    }

    #[test]
    fn zero_denominator() {
        let spec = MemorySpec {
            models: 3,
            per_model_params: 10,
            basis_params: 0,
            coeff_params_per_model: 0,
            mean_params: 0,
        };
        assert!(memory_savings(&spec).is_err());
    }

    #[test]
    fn presets() {
        let m = MemoryPreset::mistral_lora().ratio();
        assert!((18.5..19.5).contains(&m), "{m}");
        assert!(MemoryPreset::vit_base().ratio() >= 100.0);
        assert_eq!(trainable_parameters(16, 600), 9600);
    }
}
