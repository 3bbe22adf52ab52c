//! Truncated HOSVD of a noisy low-multilinear-rank tensor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use universal_subspace::hosvd::{hosvd_truncated, project_slice, reconstruct_slice, Centering, HosvdConfig};
use universal_subspace::spectral::RankPolicy;
use universal_subspace::{DenseTensor, Matrix};

fn main() -> universal_subspace::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut gauss = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));

    // Core of size 3x2x2 expanded along every mode, plus small noise.
    let core = DenseTensor::new(vec![3, 2, 2], gauss(1, 12).iter().copied().collect())?;
    let mut x = core;
    for (mode, dim) in [20, 10, 8].into_iter().enumerate() {
        x = x.mode_product(&gauss(dim, x.shape()[mode]), mode)?;
    }
    let noise = DenseTensor::new(x.shape().to_vec(), gauss(1, x.len()).iter().map(|v| 1e-3 * v).collect())?;
    let x = x.broadcast_add(&noise)?;

    let cfg = HosvdConfig::uniform(RankPolicy::CumulativeVariance { tau: 0.999 }).with_centering(Centering::Global);
    let model = hosvd_truncated(&x, &cfg)?;
    println!("selected ranks {:?}", model.ranks());
    for (mode, s) in model.ledger.iter().enumerate() {
        let head: Vec<String> = s.singular_values.iter().take(5).map(|v| format!("{v:.3}")).collect();
        println!("mode {mode}: sigma = [{}, ...]", head.join(", "));
    }
    let err = x.broadcast_sub(&model.reconstruct()?)?.frobenius_norm() / x.frobenius_norm();
    println!("relative reconstruction error {err:.2e}");

    // Project one slice along mode 0 and rebuild it.
    let idx = 4;
    let slice = DenseTensor::from_fn(vec![1, 10, 8], |i| x.get(&[idx, i[1], i[2]]))?;
    let c = project_slice(&model, &slice)?;
    let back = reconstruct_slice(&model, &c)?;
    println!(
        "slice {idx}: {} coefficients, error {:.2e}",
        c.len(),
        slice.broadcast_sub(&back)?.frobenius_norm() / slice.frobenius_norm()
    );
    Ok(())
}
