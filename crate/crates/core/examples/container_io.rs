//! Write, read and deliberately corrupt a weight container.

use universal_subspace::ensemble::container::Container;
use universal_subspace::ensemble::{load_weights, save_weights, Dtype, ModelWeights};
use universal_subspace::Matrix;

fn main() -> universal_subspace::Result<()> {
    let w = ModelWeights::new("demo")
        .with_layer("proj", Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.25), Dtype::F64)?
        .with_layer("gate", Matrix::from_fn(2, 4, |i, j| (i + j) as f64), Dtype::F32)?;
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("demo.uws");
    save_weights(&w, &path)?;
    let back = load_weights(&path)?;
    println!("round trip equal: {}", back == w);

    let bytes = std::fs::read(&path).expect("read back");
    println!("{} bytes, {} parameters", bytes.len(), w.parameter_count());
    for (label, broken) in [
        ("truncated", bytes[..bytes.len() - 3].to_vec()),
        ("bad magic", [b"XXXX", &bytes[4..]].concat()),
        ("manifest length", {
            let mut b = bytes.clone();
            b[8] ^= 0x40;
            b
        }),
    ] {
        match Container::decode(&broken) {
            Ok(_) => println!("{label}: decoded"),
            Err(e) => println!("{label}: {e} (offset {})", e.offset()),
        }
    }
    Ok(())
}
