//! Merge several models by averaging their subspace coefficients.

use universal_subspace::ensemble::synthetic::{PlantedConfig, PlantedEnsemble};
use universal_subspace::spectral::RankPolicy;
use universal_subspace::ensemble::{extract_universal, merge_models, ExtractionConfig};

fn main() -> universal_subspace::Result<()> {
    let ensemble = PlantedEnsemble::new(PlantedConfig::desk_scale(5))?;
    let models = ensemble.models(12);
    let u = extract_universal(&models, &ExtractionConfig::default().with_policy(RankPolicy::FixedK { k: 16 }))?;

    let (_, uniform) = merge_models(&u, &models[..4], None)?;
    println!("{}", serde_json::to_string_pretty(&uniform).unwrap());

    let weights = [0.7, 0.1, 0.1, 0.1];
    let (merged, _) = merge_models(&u, &models[..4], Some(&weights))?;
    let layer = "block1.mlp";
    let expect = models[..4]
        .iter()
        .zip(weights)
        .map(|(m, w)| m.layer(layer).unwrap() * w)
        .reduce(|a, b| a + b)
        .unwrap();
    let got = merged.layer(layer).unwrap();
    println!("{layer}: distance from weighted element-wise mean {:.2e}", (got - &expect).norm() / expect.norm());
    Ok(())
}
