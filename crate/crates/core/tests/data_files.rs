//! The bundled MNIST subset loads with the expected shape and scaling.

use std::path::PathBuf;

use aevb::dataio::{default_image_shape, load_dataset};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[test]
fn bundled_mnist_subset_has_expected_shape() {
    let dir = data_dir();
    let ds = load_dataset(
        &dir.join("mnist10k-images-idx3-ubyte.gz"),
        Some(&dir.join("mnist10k-labels-idx1-ubyte.gz")),
    )
    .unwrap();
    assert_eq!((ds.len(), ds.dim()), (10_000, 784));
    assert_eq!(default_image_shape(ds.dim()), (28, 28));
    let labels = ds.labels.as_ref().unwrap();
    assert_eq!(labels.len(), 10_000);
    assert!(labels.iter().all(|&l| l < 10));
    let mut counts = [0usize; 10];
    labels.iter().for_each(|&l| counts[l as usize] += 1);
    assert!(counts.iter().all(|&c| c > 500), "{counts:?}");

    let x = ds.x.as_slice();
    assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(x.iter().any(|&v| v == 1.0) && x.iter().any(|&v| v == 0.0));
    // Digits are dark-background: most pixels are zero.
    let zeros = x.iter().filter(|&&v| v == 0.0).count() as f64 / x.len() as f64;
    assert!((0.7..0.9).contains(&zeros), "{zeros}");
}
