//! Regenerates the small model files under `fixtures/`.
//!
//! ```text
//! cargo run --example write_fixture -- crates/core/fixtures
//! ```

use universal_subspace::ensemble::synthetic::{PlantedConfig, PlantedEnsemble};
use universal_subspace::ensemble::save_weights;

fn main() -> universal_subspace::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    std::fs::create_dir_all(&dir).expect("create output directory");
    let ensemble = PlantedEnsemble::new(PlantedConfig {
        layers: vec![
            ("embed".into(), 4, 8),
            ("block0".into(), 4, 8),
            ("block1".into(), 6, 8),
            ("head".into(), 2, 8),
        ],
        rank: 3,
        noise: 1e-3,
        clusters: 1,
        cluster_separation: 0.0,
        seed: 2024,
    })?;
    for i in 0..3 {
        let path = format!("{dir}/model_{i}.uws");
        save_weights(&ensemble.model(i), &path)?;
        println!("wrote {path}");
    }
    let bad = format!("{dir}/bad_magic.uws");
    std::fs::write(&bad, b"NOPE\x00\x00\x00\x00\x00\x00\x00\x00").expect("write bad file");
    println!("wrote {bad}");
    Ok(())
}
