//! Lossless image emission for atoms and feature projections: binary PGM for
//! grayscale inputs, binary PPM with a diverging palette (negative red,
//! positive blue) for signed weight patterns, and a raw-value CSV sidecar.

use crate::error::{ChiError, Result};
use std::io::Write;
use std::path::Path;

/// Grayscale P5, min-max normalised per image.
pub fn write_pgm(path: &Path, values: &[f64], rows: usize, cols: usize) -> Result<()> {
    check_shape(values, rows, cols)?;
    let (min, max) = min_max(values);
    let span = (max - min).max(f64::MIN_POSITIVE);
    let mut out = Vec::with_capacity(values.len() + 32);
    write!(out, "P5\n{cols} {rows}\n255\n")?;
    for &v in values {
        out.push((((v - min) / span) * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Colour P6 with a symmetric diverging palette: white at zero, red for
/// negative weights, blue for positive.
pub fn write_ppm_diverging(path: &Path, values: &[f64], rows: usize, cols: usize) -> Result<()> {
    check_shape(values, rows, cols)?;
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = scale.max(f64::MIN_POSITIVE);
    let mut out = Vec::with_capacity(values.len() * 3 + 32);
    write!(out, "P6\n{cols} {rows}\n255\n")?;
    for &v in values {
        let s = ((v.abs() / scale) * 255.0).round().clamp(0.0, 255.0) as u8;
        let fade = 255 - s;
        if v < 0.0 {
            out.extend_from_slice(&[255, fade, fade]); // toward red
        } else {
            out.extend_from_slice(&[fade, fade, 255]); // toward blue
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Raw numeric sidecar, one image row per CSV line.
pub fn write_value_csv(path: &Path, values: &[f64], cols: usize) -> Result<()> {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            if i % cols == 0 {
                out.push('\n');
            } else {
                out.push(',');
            }
        }
        out.push_str(&format!("{v}"));
    }
    out.push('\n');
    std::fs::write(path, out)?;
    Ok(())
}

fn check_shape(values: &[f64], rows: usize, cols: usize) -> Result<()> {
    if values.len() != rows * cols {
        return Err(ChiError::Dim(format!(
            "image has {} values, expected {rows}x{cols}",
            values.len()
        )));
    }
    Ok(())
}

fn min_max(values: &[f64]) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
    }
    if !min.is_finite() {
        (0.0, 1.0)
    } else {
        (min, max)
    }
}
