//! Writes a dataset as IDX files and reads it back.
//!
//! cargo run --example idx_roundtrip

use langevin::data::{encode_idx_images, encode_idx_labels, synthetic, Dataset};

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("langevin_idx_roundtrip");
    std::fs::create_dir_all(&dir)?;
    let data = synthetic(100, 10, 28, 4)?;
    let images = dir.join("images-idx3-ubyte");
    let labels = dir.join("labels-idx1-ubyte");
    std::fs::write(&images, encode_idx_images(&data.images))?;
    std::fs::write(&labels, encode_idx_labels(&data.labels)?)?;

    let back = Dataset::from_idx_files("roundtrip", &images, &labels)?;
    let max_err = data
        .images
        .data()
        .iter()
        .zip(back.images.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("{} examples, {:?} pixels", back.len(), back.side());
    println!("labels equal: {}, max pixel error {max_err:.2e}", back.labels == data.labels);
    println!("label histogram {:?}", back.label_histogram(10));
    Ok(())
}
