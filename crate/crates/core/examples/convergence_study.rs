//! Operator error against ensemble size, with and without per-task error.

use universal_subspace::theory::{convergence_study, ConvergenceConfig};

fn main() -> universal_subspace::Result<()> {
    for eta in [0.0, 0.5] {
        let cfg = ConvergenceConfig {
            d: 32,
            trials: 20,
            eta,
            ..ConvergenceConfig::default()
        };
        let r = convergence_study(&cfg)?;
        println!("eta = {eta}, floor {:.3}, gap {:.4}", r.floor, r.gamma);
        for g in &r.grid {
            println!(
                "  T={:<4} op error {:.4} (bound {:.3})  subspace error {:.4}",
                g.t, g.mean_op_error, g.op_bound, g.mean_subspace_error
            );
        }
        match r.slope {
            Some(s) => println!("  log-log slope {s:.3}"),
            None => println!("  slope undefined"),
        }
    }
    Ok(())
}
