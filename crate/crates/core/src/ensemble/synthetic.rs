//! Ensembles with a known per-layer subspace, for testing and examples.
//!
//! Layer `l` of model `i` is `W = (C_i + m) Q_l^T + N` where `Q_l` is a
//! fixed `cols x rank` orthonormal basis, `C_i` is a standard Gaussian
//! `rows x rank` matrix, `m` is the offset of the model's cluster (zero for a
//! single cluster) and `N` is Gaussian noise scaled to `noise` times the
//! Frobenius norm of the clean layer.

use indexmap::IndexMap;

use super::container::Dtype;
use super::ModelWeights;
use crate::error::{invalid, Result};
use crate::rng::{gaussian_matrix, orthonormal_columns, seeded};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedConfig {
    /// `(name, rows, cols)` in model order.
    pub layers: Vec<(String, usize, usize)>,
    pub rank: usize,
    pub noise: f64,
    pub clusters: usize,
    /// Norm scale of cluster offsets relative to a unit Gaussian coefficient.
    pub cluster_separation: f64,
    pub seed: u64,
}

impl PlantedConfig {
    /// Five layers (an input and an output layer around three hidden ones),
    /// rank 16, relative noise 1e-3.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            layers: vec![
                ("embed".into(), 8, 32),
                ("block0.attn".into(), 8, 48),
                ("block1.mlp".into(), 8, 64),
                ("block2.attn".into(), 16, 32),
                ("head".into(), 4, 32),
            ],
            rank: 16,
            noise: 1e-3,
            clusters: 1,
            cluster_separation: 0.0,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedEnsemble {
    pub config: PlantedConfig,
    /// Planted `cols x rank` basis per layer.
    pub bases: IndexMap<String, Matrix>,
    centres: Vec<IndexMap<String, Matrix>>,
}

impl PlantedEnsemble {
    pub fn new(config: PlantedConfig) -> Result<Self> {
        if config.layers.is_empty() || config.rank == 0 || config.clusters == 0 {
            return invalid("planted ensemble needs layers, a positive rank and at least one cluster");
        }
        if !(config.noise >= 0.0 && config.cluster_separation >= 0.0) {
            return invalid("noise and cluster separation must be nonnegative");
        }
        let mut bases = IndexMap::new();
        for (i, (name, rows, cols)) in config.layers.iter().enumerate() {
            if config.rank > *cols || *rows == 0 {
                return invalid(format!("layer {name:?} ({rows}x{cols}) cannot hold rank {}", config.rank));
            }
            bases.insert(name.clone(), orthonormal_columns(&mut seeded(&[config.seed, 0, i as u64]), *cols, config.rank));
        }
        let centres = (0..config.clusters)
            .map(|c| Self::draw_centre(&config, &[config.seed, 1, c as u64]))
            .collect();
        Ok(Self {
            config,
            bases,
            centres,
        })
    }

    fn draw_centre(config: &PlantedConfig, stream: &[u64]) -> IndexMap<String, Matrix> {
        let mut rng = seeded(stream);
        config
            .layers
            .iter()
            .map(|(name, rows, _)| {
                (name.clone(), gaussian_matrix(&mut rng, *rows, config.rank) * config.cluster_separation)
            })
            .collect()
    }

    fn build(&self, id: String, stream: &[u64], centre: &IndexMap<String, Matrix>) -> ModelWeights {
        let mut rng = seeded(stream);
        let mut w = ModelWeights::new(id);
        for (name, rows, cols) in &self.config.layers {
            let coeffs = gaussian_matrix(&mut rng, *rows, self.config.rank) + &centre[name];
            let clean = coeffs * self.bases[name].transpose();
            let noise = gaussian_matrix(&mut rng, *rows, *cols);
            let scale = self.config.noise * clean.norm() / noise.norm().max(f64::MIN_POSITIVE);
            w.push(name.clone(), clean + noise * scale, Dtype::F64)
                .expect("generated layers are finite and unique");
        }
        w
    }

    /// Model `index`, assigned to cluster `index % clusters`.
    pub fn model(&self, index: u64) -> ModelWeights {
        let cluster = (index % self.config.clusters as u64) as usize;
        self.build(format!("planted-{index}"), &[self.config.seed, 2, index], &self.centres[cluster])
    }

    /// Models `0..count`.
    pub fn models(&self, count: u64) -> Vec<ModelWeights> {
        (0..count).map(|i| self.model(i)).collect()
    }

    /// A model sharing the bases but drawn around a cluster offset never
    /// used by [`PlantedEnsemble::model`].
    pub fn out_of_distribution(&self, index: u64) -> ModelWeights {
        let centre = Self::draw_centre(&self.config, &[self.config.seed, 3, index]);
        self.build(format!("ood-{index}"), &[self.config.seed, 4, index], &centre)
    }
}
