//! Artifact directories: `<out>/<command>/<timestamp>/` with exactly one run
//! manifest each, CSV tables as the source of truth, and optional SVG plots.

use crate::error::Result;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub duration_seconds: f64,
}

/// An artifact directory under `<out>/<command>/<timestamp>/`.
pub struct ReportBundle {
    dir: PathBuf,
    command: String,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started: Instant,
}

impl ReportBundle {
    pub fn create(out_root: &Path, command: &str) -> Result<Self> {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
        let mut dir = out_root.join(command).join(&stamp);
        let mut suffix = 1;
        while dir.exists() {
            dir = out_root.join(command).join(format!("{stamp}-{suffix}"));
            suffix += 1;
        }
        std::fs::create_dir_all(&dir)?;
        Ok(ReportBundle {
            dir,
            command: command.to_string(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: vec![],
            outputs: vec![],
            started: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn set_config<T: Serialize>(&mut self, cfg: &T) {
        self.config = serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null);
    }

    pub fn record_input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    /// Resolve a file inside the bundle and record it as an output.
    pub fn file(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.outputs.push(name.to_string());
        p
    }

    /// Record an output written by other means (e.g. a manifest twin).
    pub fn note_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    /// Write the run manifest; call once, last.
    pub fn finish(self) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("serialisable");
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(self.dir)
    }
}

/// Write a CSV with a header row; every value printed with full precision.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 32 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format_field(*v));
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn format_field(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Minimal SVG polyline plot, one line per series, x/y auto-scaled.
pub fn write_svg_lines(
    path: &Path,
    title: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let palette = ["#2c7bb6", "#d7191c", "#1a9641", "#fdae61", "#7b3294"];

    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (_, pts) in series {
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !x0.is_finite() {
        x0 = 0.0;
        x1 = 1.0;
        y0 = 0.0;
        y1 = 1.0;
    }
    let xs = (x1 - x0).max(1e-12);
    let ys = (y1 - y0).max(1e-12);
    let px = |x: f64| M + (x - x0) / xs * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / ys * (H - 2.0 * M);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n<text x=\"{}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        title
    ));
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M,
        H - M
    ));
    for (i, (name, pts)) in series.iter().enumerate() {
        let colour = palette[i % palette.len()];
        let mut d = String::new();
        for (j, &(x, y)) in pts.iter().enumerate() {
            d.push_str(if j == 0 { "M" } else { "L" });
            d.push_str(&format!("{:.2},{:.2} ", px(x), py(y)));
        }
        svg.push_str(&format!(
            "<path d=\"{d}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{colour}\">{name}</text>\n",
            W - M - 120.0,
            M + 16.0 * i as f64
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{:.4} .. {:.4}</text>\n",
        W / 2.0,
        H - 12.0,
        x0,
        x1
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}
