use serde::Serialize;

use super::subspace::UniversalSubspace;
use crate::report::{Cell, Table};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerScree {
    pub layer: String,
    pub singular_values: Vec<f64>,
    pub ratios: Vec<f64>,
}

/// Explained-variance ratios of every layer's feature (last) mode plus their
/// layer average. Shorter spectra are zero-padded before averaging; the
/// standard deviation is the population one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScreeReport {
    pub layers: Vec<LayerScree>,
    pub mean_ratios: Vec<f64>,
    pub std_ratios: Vec<f64>,
}

pub const MEAN_ROW: &str = "*mean*";
pub const STD_ROW: &str = "*std*";

pub fn scree_report(u: &UniversalSubspace) -> ScreeReport {
    ScreeReport::from_layers(
        u.layers
            .iter()
            .map(|(name, l)| {
                let s = l.model.ledger.last().expect("models have at least one mode");
                LayerScree {
                    layer: name.clone(),
                    singular_values: s.singular_values.clone(),
                    ratios: s.ratios.clone(),
                }
            })
            .collect(),
    )
}

impl ScreeReport {
    pub fn from_layers(layers: Vec<LayerScree>) -> Self {
        let width = layers.iter().map(|l| l.ratios.len()).max().unwrap_or(0);
        let n = layers.len().max(1) as f64;
        let at = |l: &LayerScree, i: usize| l.ratios.get(i).copied().unwrap_or(0.0);
        let mean: Vec<f64> = (0..width)
            .map(|i| layers.iter().map(|l| at(l, i)).sum::<f64>() / n)
            .collect();
        let std = (0..width)
            .map(|i| {
                let var = layers.iter().map(|l| (at(l, i) - mean[i]).powi(2)).sum::<f64>() / n;
                var.sqrt()
            })
            .collect();
        Self {
            layers,
            mean_ratios: mean,
            std_ratios: std,
        }
    }

    /// Cumulative sum of the averaged ratios.
    pub fn mean_cumulative(&self) -> Vec<f64> {
        self.mean_ratios
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }

    /// Copy keeping only the first `n` components of every series.
    pub fn truncated(&self, n: usize) -> Self {
        let cut = |v: &Vec<f64>| v.iter().copied().take(n).collect();
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerScree {
                    layer: l.layer.clone(),
                    singular_values: cut(&l.singular_values),
                    ratios: cut(&l.ratios),
                })
                .collect(),
            mean_ratios: cut(&self.mean_ratios),
            std_ratios: cut(&self.std_ratios),
        }
    }

    /// One row per (layer, component), then the layer average as
    /// [`MEAN_ROW`] rows and its spread as [`STD_ROW`] rows.
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["component_index", "layer", "sigma", "ratio", "cumulative"]);
        for l in &self.layers {
            let mut cum = 0.0;
            for (i, (s, r)) in l.singular_values.iter().zip(&l.ratios).enumerate() {
                cum += r;
                t.push(vec![i.into(), l.layer.as_str().into(), (*s).into(), (*r).into(), cum.into()]);
            }
        }
        for (i, (r, c)) in self.mean_ratios.iter().zip(self.mean_cumulative()).enumerate() {
            t.push(vec![i.into(), MEAN_ROW.into(), Cell::Empty, (*r).into(), c.into()]);
        }
        for (i, r) in self.std_ratios.iter().enumerate() {
            t.push(vec![i.into(), STD_ROW.into(), Cell::Empty, (*r).into(), Cell::Empty]);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(name: &str, ratios: &[f64]) -> LayerScree {
        LayerScree {
            layer: name.into(),
            singular_values: ratios.iter().map(|r| r.sqrt()).collect(),
            ratios: ratios.to_vec(),
        }
    }

    #[test]
    fn single_layer_aggregate_is_the_layer() {
        let r = ScreeReport::from_layers(vec![layer("a", &[0.7, 0.2, 0.1])]);
        assert_eq!(r.mean_ratios, [0.7, 0.2, 0.1]);
        assert_eq!(r.std_ratios, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_layer_average() {
        let r = ScreeReport::from_layers(vec![layer("a", &[1.0, 0.0]), layer("b", &[0.5, 0.5])]);
        assert_eq!(r.mean_ratios, [0.75, 0.25]);
        assert_eq!(r.std_ratios, [0.25, 0.25]);
    }

    #[test]
    fn padding_and_truncation() {
        let r = ScreeReport::from_layers(vec![layer("a", &[1.0]), layer("b", &[0.5, 0.5])]);
        assert_eq!(r.mean_ratios, [0.75, 0.25]);
        let t = r.truncated(1);
        assert_eq!(t.mean_ratios, [0.75]);
        assert_eq!(t.layers[1].ratios, [0.5]);
    }

    #[test]
    fn table_rows() {
        let r = ScreeReport::from_layers(vec![layer("a", &[0.75, 0.25])]);
        let csv = r.table().to_csv();
        assert!(csv.starts_with("component_index,layer,sigma,ratio,cumulative\n0,a,"));
        assert!(csv.contains("1,*mean*,,0.25,1\n"));
    }
}
