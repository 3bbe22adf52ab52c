//! The four rank-selection rules on one spectrum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use universal_subspace::spectral::{hard_threshold, select_rank, thin_svd, RankPolicy, Spectrum};
use universal_subspace::Matrix;

fn main() -> universal_subspace::Result<()> {
    let (rows, cols, rank, sigma) = (120, 80, 6, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = Normal::new(0.0, 1.0).unwrap();
    let a = Matrix::from_fn(rows, rank, |_, _| n.sample(&mut rng));
    let b = Matrix::from_fn(rank, cols, |_, _| n.sample(&mut rng));
    let m = a * b + Matrix::from_fn(rows, cols, |_, _| sigma * n.sample(&mut rng));

    let svd = thin_svd(&m)?;
    let spectrum = Spectrum::new(svd.singular_values.clone(), rows, cols)?;
    println!("planted rank {rank}, noise sigma {sigma}");
    println!("hard threshold (known sigma) {:.3}", hard_threshold(&svd.singular_values, rows, cols, Some(sigma)));
    for policy in [
        RankPolicy::CumulativeVariance { tau: 0.95 },
        RankPolicy::CumulativeVariance { tau: 0.9999 },
        RankPolicy::EigenFloor { epsilon: 1e-4 },
        RankPolicy::HardThreshold { noise_sigma: Some(sigma) },
        RankPolicy::HardThreshold { noise_sigma: None },
        RankPolicy::FixedK { k: 10 },
    ] {
        println!("{policy:?} -> {}", select_rank(&spectrum, &policy)?);
    }
    Ok(())
}
