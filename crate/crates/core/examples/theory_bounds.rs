//! Evaluate the operator and subspace bounds, then compare them with one
//! sampled ensemble.

use universal_subspace::theory::{
    davis_kahan_check, learned_empirical, population_operator, sample_ensemble, subspace_distance,
    symmetric_op_norm, ensemble_bounds, top_k_projector, BoundParameters, SyntheticEnsembleConfig,
};

fn main() -> universal_subspace::Result<()> {
    let p = BoundParameters::new(1.0, 0.5, 100, 0.1, 0.01).with_gamma(0.5);
    let b = ensemble_bounds(&p)?;
    println!("B=1 delta=0.5 T=100 eta=0.1 gamma=0.5: op {:.6}, subspace {:.6}", b.op_bound, b.subspace_bound.unwrap());

    let (d, k, t, eta) = (32, 3, 400, 0.02);
    let cfg = SyntheticEnsembleConfig::planted(d, k, t, 2.0, eta, 17);
    let e = sample_ensemble(&cfg)?;
    let s = population_operator(&cfg, &e.basis)?;
    let s_tilde = learned_empirical(&e.tasks)?;
    let exact = top_k_projector(&s, k)?;
    let learned = top_k_projector(&s_tilde, k)?;
    let op_err = symmetric_op_norm(&(&s_tilde.matrix - &s.matrix))?;
    let sub_err = subspace_distance(&learned.projector, &exact.projector)?;

    let etas = vec![eta; t];
    let bounds = ensemble_bounds(&BoundParameters::from_etas(cfg.b, 0.05, &etas).with_gamma(exact.gamma))?;
    println!("d={d} k={k} T={t}: kappa(S) = {:.3}, gap {:.4}", s.effective_rank, exact.gamma);
    println!("  operator error {op_err:.4} <= {:.4}", bounds.op_bound);
    println!("  subspace error {sub_err:.4} <= {:.4}", bounds.subspace_bound.unwrap());
    let dk = davis_kahan_check(&s.matrix, &s_tilde.matrix, k)?;
    println!("  perturbation inequality: {:.4} <= {:.4} ({})", dk.lhs, dk.rhs, dk.holds);
    Ok(())
}
