//! Dataset ingestion: IDX containers, raw interleaved RGB with grayscale
//! conversion, and synthetic generators for desk-scale experiments.

use crate::error::{ChiError, Result};
use crate::linalg::Matrix;
use rand::Rng;
use std::fs;
use std::io::Read;
use std::path::Path;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Grayscale images in `[0,1]`, one row per sample, with integer labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// image shape (rows, cols) for reshaping emitted feature images
    pub image_shape: (usize, usize),
    pub split: String,
}

impl Dataset {
    pub fn new(
        images: Matrix,
        labels: Vec<usize>,
        image_shape: (usize, usize),
        split: &str,
    ) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(ChiError::Format(format!(
                "count mismatch: {} images vs {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if !images.is_finite() {
            return Err(ChiError::Numeric("dataset contains non-finite pixels".into()));
        }
        let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        Ok(Dataset {
            images,
            labels,
            n_classes,
            image_shape,
            split: split.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.images.cols()
    }
}

fn read_u32_be(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| ChiError::Format(format!("truncated file while reading {what}")))?;
    Ok(u32::from_be_bytes(buf))
}

/// Parse big-endian IDX image + label files into a dataset. Pixels are
/// scaled to `[0,1]` by `/255`.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: &str) -> Result<Dataset> {
    let mut img = fs::File::open(images_path).map_err(|e| {
        ChiError::Format(format!("cannot open {}: {e}", images_path.display()))
    })?;
    let magic = read_u32_be(&mut img, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(ChiError::Format(format!(
            "bad magic {magic:#010x} in {}, expected {IDX_IMAGES_MAGIC:#010x} (image file)",
            images_path.display()
        )));
    }
    let n = read_u32_be(&mut img, "image count")? as usize;
    let rows = read_u32_be(&mut img, "image rows")? as usize;
    let cols = read_u32_be(&mut img, "image cols")? as usize;
    let mut pixels = vec![0u8; n * rows * cols];
    img.read_exact(&mut pixels)
        .map_err(|_| ChiError::Format(format!("truncated pixel data in {}", images_path.display())))?;

    let labels = load_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(ChiError::Format(format!(
            "count mismatch: {} images vs {} labels",
            n,
            labels.len()
        )));
    }

    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let images = Matrix::from_vec(n, rows * cols, data)?;
    Dataset::new(images, labels, (rows, cols), split)
}

pub fn load_idx_labels(labels_path: &Path) -> Result<Vec<usize>> {
    let mut lab = fs::File::open(labels_path).map_err(|e| {
        ChiError::Format(format!("cannot open {}: {e}", labels_path.display()))
    })?;
    let magic = read_u32_be(&mut lab, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(ChiError::Format(format!(
            "bad magic {magic:#010x} in {}, expected {IDX_LABELS_MAGIC:#010x} (label file)",
            labels_path.display()
        )));
    }
    let n = read_u32_be(&mut lab, "label count")? as usize;
    let mut bytes = vec![0u8; n];
    lab.read_exact(&mut bytes)
        .map_err(|_| ChiError::Format(format!("truncated label data in {}", labels_path.display())))?;
    Ok(bytes.into_iter().map(|b| b as usize).collect())
}

/// Sidecar metadata for a raw interleaved-RGB file.
#[derive(Debug, Clone, Copy)]
pub struct RawMeta {
    pub n: usize,
    pub height: usize,
    pub width: usize,
}

/// Load raw interleaved RGB bytes, grayscale them with the luma weights
/// `0.299 r + 0.587 g + 0.114 b`, and scale to `[0,1]`. Labels come from an
/// IDX label file.
pub fn load_raw_rgb(rgb_path: &Path, labels_path: &Path, meta: RawMeta, split: &str) -> Result<Dataset> {
    let bytes = fs::read(rgb_path)
        .map_err(|e| ChiError::Format(format!("cannot open {}: {e}", rgb_path.display())))?;
    let expected = meta.n * meta.height * meta.width * 3;
    if bytes.len() != expected {
        return Err(ChiError::Format(format!(
            "size mismatch: {} has {} bytes, metadata implies {}",
            rgb_path.display(),
            bytes.len(),
            expected
        )));
    }
    let d = meta.height * meta.width;
    let mut data = Vec::with_capacity(meta.n * d);
    for px in bytes.chunks_exact(3) {
        let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
        data.push(y / 255.0);
    }
    let labels = load_idx_labels(labels_path)?;
    if labels.len() != meta.n {
        return Err(ChiError::Format(format!(
            "count mismatch: {} images vs {} labels",
            meta.n,
            labels.len()
        )));
    }
    let images = Matrix::from_vec(meta.n, d, data)?;
    Dataset::new(images, labels, (meta.height, meta.width), split)
}

/// Write images in IDX format (big-endian header, one byte per pixel).
pub fn write_idx_images(path: &Path, n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), n * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}

/// Linearly separable Gaussian blobs (sanity-check data).
pub fn blobs(n: usize, d: usize, n_classes: usize, spread: f64, rng: &mut impl Rng) -> Dataset {
    let mut centers = Matrix::zeros(n_classes, d);
    for c in 0..n_classes {
        for j in 0..d {
            centers.set(c, j, rng.gen_range(-1.0..1.0));
        }
    }
    let mut images = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % n_classes;
        labels.push(c);
        for j in 0..d {
            images.set(i, j, centers.get(c, j) + spread * gaussian(rng));
        }
    }
    Dataset::new(images, labels, (1, d), "blobs").expect("finite by construction")
}

/// Synthetic ten-class image task whose label mixes a linearly readable part
/// with a strictly quadratic part.
///
/// The image splits into three disjoint regions: a template band encoding
/// `m ∈ 0..5` as one of five lit column blocks, and two sign patches carrying
/// independent random signs `s_a, s_b ∈ {±1}`. The class is
/// `m + 5·[s_a·s_b > 0]`. No single pixel depends on the sign product, so a
/// linear readout recovers `m` but must guess the parity, capping it near
/// 50%; one bilinear interaction across the patches recovers it exactly.
pub struct QuadParity {
    pub side: usize,
}

impl QuadParity {
    pub fn new(side: usize) -> Self {
        assert!(side >= 10, "need at least a 10-pixel side");
        QuadParity { side }
    }

    /// Sample `n` examples as byte images plus labels.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> (Vec<u8>, Vec<u8>) {
        let side = self.side;
        let d = side * side;
        let template_rows = side / 2; // top half: template band
        let patch_split = side * 4 / 5; // remaining rows split between the sign patches
        let band = side / 5;
        let mut pixels = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let m = rng.gen_range(0..5usize);
            let s_a = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let s_b = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let q = if s_a * s_b > 0.0 { 1usize } else { 0 };
            labels.push((q * 5 + m) as u8);
            for r in 0..side {
                for c in 0..side {
                    let v = if r < template_rows {
                        // column block [m·band, (m+1)·band) lit
                        if c >= m * band && c < (m + 1) * band {
                            0.5 + 0.35
                        } else {
                            0.5 - 0.05
                        }
                    } else if r < patch_split {
                        0.5 + 0.30 * s_a
                    } else {
                        0.5 + 0.30 * s_b
                    };
                    let v = v + 0.01 * gaussian(rng);
                    pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        (pixels, labels)
    }

    /// Sample directly into a dataset (no file round trip).
    pub fn dataset(&self, n: usize, split: &str, rng: &mut impl Rng) -> Dataset {
        let (pixels, labels) = self.sample(n, rng);
        let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
        let images = Matrix::from_vec(n, self.side * self.side, data).expect("sized");
        Dataset::new(
            images,
            labels.into_iter().map(|l| l as usize).collect(),
            (self.side, self.side),
            split,
        )
        .expect("finite")
    }
}

/// Standard-normal sample via Box-Muller.
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Add i.i.d. Gaussian noise with standard deviation `sigma` to every pixel.
/// Training-time only; `sigma = 0` leaves the batch untouched.
pub fn add_noise(batch: &mut Matrix, sigma: f64, rng: &mut impl Rng) {
    if sigma == 0.0 {
        return;
    }
    for v in batch.data_mut() {
        *v += sigma * gaussian(rng);
    }
}
