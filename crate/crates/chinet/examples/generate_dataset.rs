//! Write the synthetic quadratic-parity dataset as IDX files, ready for the
//! `chinet` CLI:
//!
//! ```bash
//! cargo run --release --example generate_dataset -- data/
//! cargo run --release -p chinet -- train \
//!     --train-images data/train-images.idx --train-labels data/train-labels.idx \
//!     --test-images data/test-images.idx --test-labels data/test-labels.idx
//! ```

use chinet::train::dataset::{write_idx_images, write_idx_labels, QuadParity};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::path::PathBuf;

fn main() -> chinet::Result<()> {
    let dir: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "data".into()).into();
    std::fs::create_dir_all(&dir)?;
    let side = 10;
    let gen = QuadParity::new(side);

    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let (train_px, train_lab) = gen.sample(6000, &mut rng);
    let (test_px, test_lab) = gen.sample(1000, &mut rng);

    write_idx_images(&dir.join("train-images.idx"), 6000, side, side, &train_px)?;
    write_idx_labels(&dir.join("train-labels.idx"), &train_lab)?;
    write_idx_images(&dir.join("test-images.idx"), 1000, side, side, &test_px)?;
    write_idx_labels(&dir.join("test-labels.idx"), &test_lab)?;

    println!("wrote 6000 train / 1000 test samples ({side}x{side}) to {}", dir.display());
    println!("labels mix five linear templates with one strictly bilinear sign product");
    Ok(())
}
