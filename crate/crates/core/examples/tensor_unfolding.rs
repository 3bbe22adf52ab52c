//! Mode unfoldings, folding back, and mode products on a small tensor.

use universal_subspace::{DenseTensor, Matrix};

fn main() -> universal_subspace::Result<()> {
    let t = DenseTensor::new(vec![2, 3, 4], (0..24).map(f64::from).collect())?;
    for mode in 0..t.order() {
        let m = t.unfold(mode)?;
        println!("mode {mode} unfolding ({}x{}):{m}", m.nrows(), m.ncols());
        assert_eq!(DenseTensor::fold(&m, mode, t.shape())?, t);
    }

    // Averaging matrix applied along mode 1 collapses it to extent 1.
    let avg = Matrix::from_element(1, 3, 1.0 / 3.0);
    let reduced = t.mode_product(&avg, 1)?;
    println!("after mode-1 product: shape {:?}", reduced.shape());
    let gap = reduced.broadcast_sub(&t.mean_along(1)?)?.frobenius_norm();
    println!("distance from mean_along: {gap:.1e}");
    Ok(())
}
