//! Fit a new layer inside a fixed subspace from input/output pairs, in
//! closed form and by gradient descent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use universal_subspace::ensemble::synthetic::{PlantedConfig, PlantedEnsemble};
use universal_subspace::spectral::RankPolicy;
use universal_subspace::ensemble::{adapt_coefficients, extract_universal, AdaptMethod, ExtractionConfig};
use universal_subspace::Matrix;

fn main() -> universal_subspace::Result<()> {
    let ensemble = PlantedEnsemble::new(PlantedConfig::desk_scale(4))?;
    let u = extract_universal(&ensemble.models(30), &ExtractionConfig::default().with_policy(RankPolicy::FixedK { k: 16 }))?;
    let layer = "block1.mlp";
    let target = ensemble.model(777).layer(layer).unwrap().clone();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Matrix::from_fn(200, target.ncols(), |_, _| StandardNormal.sample(&mut rng));
    let y = &x * target.transpose();

    for method in [
        AdaptMethod::ClosedForm { ridge: None },
        AdaptMethod::Gradient { lr: None, epochs: 500 },
    ] {
        let (c, report) = adapt_coefficients(&u, layer, &x, &y, method)?;
        let w = u.reconstruct_layer(layer, &c)?;
        println!(
            "{method:?}: {} trainable, residual {:.2e}, weight error {:.2e}",
            report.trainable_params,
            report.relative_residual,
            (&w - &target).norm() / target.norm()
        );
    }
    Ok(())
}
