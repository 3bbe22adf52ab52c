//! Extract a universal subspace from a planted ensemble and check how well
//! it describes models it never saw.

use universal_subspace::ensemble::synthetic::{PlantedConfig, PlantedEnsemble};
use universal_subspace::ensemble::{extract_universal, project_model, reconstruct_model, scree_report, ExtractionConfig};
use universal_subspace::ensemble::ModelWeights;
use universal_subspace::spectral::RankPolicy;

fn relative_error(a: &ModelWeights, b: &ModelWeights, layer: &str) -> f64 {
    let (x, y) = (a.layer(layer).unwrap(), b.layer(layer).unwrap());
    (x - y).norm() / y.norm()
}

fn main() -> universal_subspace::Result<()> {
    let ensemble = PlantedEnsemble::new(PlantedConfig::desk_scale(11))?;
    let models = ensemble.models(50);
    let scree = scree_report(&extract_universal(&models, &ExtractionConfig::default())?);
    let cum = scree.mean_cumulative();
    for n in [1, 4, 15, 16, 17] {
        println!("mean cumulative variance at {n:>2} components {:.6}", cum[n - 1]);
    }

    // tau = 0.95 stops one direction short of the planted rank.
    for policy in [RankPolicy::default(), RankPolicy::CumulativeVariance { tau: 0.9999 }] {
        let u = extract_universal(&models, &ExtractionConfig::default().with_policy(policy.clone()))?;
        let ranks: Vec<_> = u.layers.values().map(|l| l.model.ranks()).collect();
        println!("{policy:?}: ranks {ranks:?}, excluded {:?}", u.excluded);
        for (label, model) in [("held-out", ensemble.model(10_000)), ("out-of-distribution", ensemble.out_of_distribution(0))] {
            let back = reconstruct_model(&u, &project_model(&u, &model)?)?;
            let worst = u.layers.keys().map(|l| relative_error(&back, &model, l)).fold(0.0, f64::max);
            println!("  {label}: worst layer relative error {worst:.3e}");
        }
    }
    Ok(())
}
