//! Storage ratio of one shared basis plus per-model coefficients.

use universal_subspace::ensemble::synthetic::{PlantedConfig, PlantedEnsemble};
use universal_subspace::ensemble::{extract_universal, memory_savings, AdaptationBudget, ExtractionConfig, MemoryPreset, MemorySpec};

fn main() -> universal_subspace::Result<()> {
    for p in MemoryPreset::all() {
        println!("{:<18} {:>9.2}x  {}", p.name, p.ratio(), p.description);
    }
    let budget = AdaptationBudget::vit_base();
    println!("adapting {} coefficients in {} layers trains {} parameters", budget.k, budget.layers, budget.trainable());

    let ensemble = PlantedEnsemble::new(PlantedConfig::desk_scale(1))?;
    let models = ensemble.models(40);
    let u = extract_universal(&models, &ExtractionConfig::default())?;
    for t in [40, 1_000, 100_000] {
        let spec = MemorySpec::for_subspace(&u, t);
        println!("planted ensemble, T = {t:>6}: {:.2}x", memory_savings(&spec)?);
    }
    Ok(())
}
