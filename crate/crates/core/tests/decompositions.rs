mod common;

use common::*;
use proptest::prelude::*;
use universal_subspace::hosvd::{
    hosvd_truncated, project_slice, reconstruct_slice, secondary_subspace, Centering, HosvdConfig,
    SliceCoefficients,
};
use universal_subspace::spectral::{thin_svd, RankPolicy};
use universal_subspace::{DenseTensor, Error, Matrix};

fn tensor_strategy() -> impl Strategy<Value = DenseTensor> {
    prop::collection::vec(1usize..5, 1..=4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(-10.0f64..10.0, n).prop_map(move |data| DenseTensor::new(shape.clone(), data).unwrap())
    })
}

fn diff_norm(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn unfold_matches_index_formula() {
    let mut r = rng(1);
    for shape in [vec![2, 3], vec![3, 1, 4], vec![2, 3, 4, 2], vec![5]] {
        let t = random_tensor(&mut r, &shape);
        for mode in 0..shape.len() {
            assert_eq!(t.unfold(mode).unwrap(), unfold_by_index(&t, mode), "{shape:?} mode {mode}");
        }
    }
}

#[test]
fn documented_unfolding() {
    let t = DenseTensor::new(vec![2, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
    let m0 = Matrix::from_row_slice(2, 4, &[1., 3., 2., 4., 5., 7., 6., 8.]);
    assert_eq!(t.unfold(0).unwrap(), m0);
    assert_eq!(unfold_by_index(&t, 0), m0);
}

#[test]
fn mode_product_matches_unfolded_product() {
    let mut r = rng(2);
    let t = random_tensor(&mut r, &[3, 4, 5]);
    for mode in 0..3 {
        let m = random_matrix(&mut r, 2, t.shape()[mode]);
        let direct = t.mode_product(&m, mode).unwrap();
        let mut shape = t.shape().to_vec();
        shape[mode] = 2;
        let oracle = DenseTensor::fold(&(&m * unfold_by_index(&t, mode)), mode, &shape).unwrap();
        assert!(diff_norm(&direct, &oracle) < 1e-12);
    }
}

#[test]
fn thin_svd_matches_jacobi() {
    let mut r = rng(3);
    for (rows, cols) in [(7, 4), (4, 7), (10, 10), (1, 5), (6, 1)] {
        let a = random_matrix(&mut r, rows, cols);
        let svd = thin_svd(&a).unwrap();
        let oracle = singular_values(&a);
        for (s, o) in svd.singular_values.iter().zip(&oracle) {
            assert!((s - o).abs() < 1e-12 * oracle[0].max(1.0));
        }
        assert!((svd.reconstruct() - &a).amax() < 1e-12);
        assert!(orthonormality_error(&svd.u) < 1e-12 && orthonormality_error(&svd.v) < 1e-12);
    }
}

#[test]
fn thin_svd_rank_deficient() {
    let mut r = rng(4);
    for _ in 0..50 {
        let a = random_matrix(&mut r, 9, 2) * random_matrix(&mut r, 2, 6);
        let svd = thin_svd(&a).unwrap();
        assert!((svd.reconstruct() - &a).amax() < 1e-12 * a.amax().max(1.0));
        let oracle = singular_values(&a);
        assert!(svd.singular_values[2] < 1e-12 * oracle[0]);
    }
}

#[test]
fn secondary_subspace_splits_variance() {
    let mut r = rng(5);
    let x = DenseTensor::from_matrix(&random_matrix(&mut r, 12, 6));
    let cfg = HosvdConfig::uniform(RankPolicy::FixedK { k: 2 }).with_centering(Centering::Feature);
    let primary = hosvd_truncated(&x, &cfg).unwrap();
    let secondary = secondary_subspace(&x, &primary, 4).unwrap();
    for (p, s) in primary.factors.iter().zip(&secondary.factors) {
        assert!((p.transpose() * s).amax() < 1e-8);
    }
    let xc = to_dense(&(x.to_matrix() - Matrix::from_fn(12, 6, |_, j| primary.mu.data()[j])));
    let total = frobenius(&xc).powi(2);
    let sigma = singular_values(&from_dense(&xc));
    let primary_var: f64 = sigma.iter().take(2).map(|s| s * s).sum();
    let secondary_var: f64 = secondary.ledger[1].singular_values.iter().take(4).map(|s| s * s).sum();
    assert!((primary_var + secondary_var - total).abs() < 1e-8 * total);
}

#[test]
fn secondary_of_exact_subspace_is_degenerate() {
    let mut r = rng(6);
    let x = DenseTensor::from_matrix(&(random_matrix(&mut r, 10, 2) * random_matrix(&mut r, 2, 5)));
    let cfg = HosvdConfig::uniform(RankPolicy::FixedK { k: 5 }).with_centering(Centering::Global);
    let primary = hosvd_truncated(&x, &cfg).unwrap();
    assert!(matches!(secondary_subspace(&x, &primary, 1), Err(Error::DegenerateSpectrum(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_inverts_unfold(t in tensor_strategy(), pick in 0usize..4) {
        let mode = pick % t.order();
        let back = DenseTensor::fold(&t.unfold(mode).unwrap(), mode, t.shape()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn error_nonincreasing_in_rank(seed in 0u64..1000) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[6, 5, 4]);
        let mut last = f64::INFINITY;
        for k in 1..=4 {
            let cfg = HosvdConfig::uniform(RankPolicy::FixedK { k }).with_centering(Centering::Global);
            let m = hosvd_truncated(&x, &cfg).unwrap();
            let err = diff_norm(&m.reconstruct().unwrap(), &x);
            prop_assert!(err <= last + 1e-10);
            last = err;
        }
    }

    #[test]
    fn projection_is_pythagorean_and_linear(seed in 0u64..1000) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[8, 5, 4]);
        let cfg = HosvdConfig::uniform(RankPolicy::FixedK { k: 3 }).with_centering(Centering::Feature);
        let m = hosvd_truncated(&x, &cfg).unwrap();
        let s = random_tensor(&mut r, &[1, 5, 4]);
        let c = project_slice(&m, &s).unwrap();
        let back = reconstruct_slice(&m, &c).unwrap();
        let centred = s.broadcast_sub(&m.mu).unwrap();
        let resid = diff_norm(&back, &s);
        let lhs = centred.frobenius_norm().powi(2);
        let rhs = c.values.frobenius_norm().powi(2) + resid * resid;
        prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.max(1.0));

        // With the mean removed, projection is linear.
        let mut zero_mu = m.clone();
        zero_mu.mu = DenseTensor::zeros(m.mu.shape().to_vec()).unwrap();
        let a = random_tensor(&mut r, &[1, 5, 4]);
        let b = random_tensor(&mut r, &[1, 5, 4]);
        let combo = a.scale(2.0).broadcast_add(&b.scale(-0.5)).unwrap();
        let lhs = project_slice(&zero_mu, &combo).unwrap().values;
        let rhs = project_slice(&zero_mu, &a).unwrap().values.scale(2.0)
            .broadcast_add(&project_slice(&zero_mu, &b).unwrap().values.scale(-0.5)).unwrap();
        prop_assert!(diff_norm(&lhs, &rhs) < 1e-10);

        let zero = SliceCoefficients::new(DenseTensor::zeros(c.values.shape().to_vec()).unwrap());
        prop_assert!(diff_norm(&reconstruct_slice(&m, &zero).unwrap(), &m.mu) < 1e-12);
    }
}
