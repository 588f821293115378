//! The executable surface: `chinet <train|eval|odt|sweep|compare-svd|
//! features|explain>`. One command per process; artifact directories carry a
//! run manifest; CSV is the source of truth, SVG plots are convenience.

mod config;
mod report;

pub use config::{load_train_config, parse_train_config};
pub use report::{write_csv, write_svg_lines, ReportBundle, RunManifest};

use crate::error::{ChiError, Result};
use crate::interpret::{self, image, ActivationMode};
use crate::model::ChiNet;
use crate::odt::{
    diagonalise, effective_dim, local_svd, orthogonalise, select_ranks, truncate,
    truncation_sweep, TruncationPlan,
};
use crate::persist::{self, Checkpoint};
use crate::train::{
    self, evaluate, fold_norm, load_idx, load_raw_rgb, train_relu_baseline, Dataset, RawMeta,
    TrainConfig,
};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "chinet", version, about = "bilinear tree-network classifiers: train, compress, interpret")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a norm-folded, symmetrised checkpoint
    Train(TrainArgs),
    /// Report accuracy and mean loss of a checkpoint on a dataset
    Eval(EvalArgs),
    /// Orthogonalise, diagonalise and truncate a checkpoint
    Odt(OdtArgs),
    /// Cumulative truncation sweep: accuracy/loss/norm per removed dimension
    Sweep(SweepArgs),
    /// Per-core SVD spectra versus the diagonalised bond spectra
    CompareSvd(CompareSvdArgs),
    /// Per-class eigenfeatures and atom images from a diagonalised checkpoint
    Features(FeaturesArgs),
    /// Explain one test input: per-feature scores that sum to the logits
    Explain(ExplainArgs),
}

#[derive(Args)]
struct DataOpts {
    /// IDX image file (or raw interleaved RGB with --raw-rgb)
    #[arg(long)]
    images: PathBuf,
    /// IDX label file
    #[arg(long)]
    labels: PathBuf,
    /// treat --images as raw interleaved RGB bytes, grayscaled on load
    #[arg(long)]
    raw_rgb: bool,
    /// image width (required for --raw-rgb)
    #[arg(long)]
    width: Option<usize>,
    /// image height (required for --raw-rgb)
    #[arg(long)]
    height: Option<usize>,
}

impl DataOpts {
    fn load(&self, split: &str) -> Result<Dataset> {
        if self.raw_rgb {
            let (w, h) = match (self.width, self.height) {
                (Some(w), Some(h)) => (w, h),
                _ => {
                    return Err(ChiError::Config(
                        "--raw-rgb requires --width and --height".into(),
                    ))
                }
            };
            let labels = train::dataset::load_idx_labels(&self.labels)?;
            load_raw_rgb(
                &self.images,
                &self.labels,
                RawMeta {
                    n: labels.len(),
                    height: h,
                    width: w,
                },
                split,
            )
        } else {
            load_idx(&self.images, &self.labels, split)
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train_images: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    #[arg(long)]
    test_images: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    /// key = value config file; defaults mirror the reference setup
    #[arg(long)]
    config: Option<PathBuf>,
    /// overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// overrides the config epoch count
    #[arg(long)]
    epochs: Option<usize>,
    /// also train the ReLU baseline and a linear model for the parity table
    #[arg(long)]
    baseline: bool,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataOpts,
}

#[derive(Args)]
struct OdtArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// relative precision target for rank selection
    #[arg(long, conflicts_with = "ranks")]
    epsilon: Option<f64>,
    /// explicit ranks per bond, comma separated (e.g. 2,3,13,6)
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataOpts,
    /// emit every n-th removal step
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// also write SVG line plots
    #[arg(long)]
    svg: bool,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareSvdArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// also write SVG line plots
    #[arg(long)]
    svg: bool,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    /// diagonalised checkpoint (output of `chinet odt`)
    #[arg(long)]
    checkpoint: PathBuf,
    /// eigenvectors per class to emit as images
    #[arg(long, default_value_t = 6)]
    top: usize,
    /// image width for reshaping (default: square when possible)
    #[arg(long)]
    width: Option<usize>,
    /// image height for reshaping
    #[arg(long)]
    height: Option<usize>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    /// diagonalised checkpoint (output of `chinet odt`)
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataOpts,
    /// index of the input to explain
    #[arg(long)]
    input: usize,
    /// features listed per class in the report
    #[arg(long, default_value_t = 8)]
    top: usize,
    /// score features with λ·⟨v,a⟩ instead of λ·⟨v,a⟩²
    #[arg(long)]
    unsquared: bool,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

/// Entry point: parse, dispatch, map errors to exit codes
/// (0 success, 2 usage/config, 1 data/numeric).
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_threads();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Odt(a) => cmd_odt(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::CompareSvd(a) => cmd_compare_svd(a),
        Command::Features(a) => cmd_features(a),
        Command::Explain(a) => cmd_explain(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// `CHINET_THREADS` caps worker threads (default: hardware count).
fn init_threads() {
    if let Ok(v) = std::env::var("CHINET_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn load_net_for_analysis(path: &Path) -> Result<ChiNet> {
    let ck = persist::load(path)?;
    let net = ck.net;
    if net.is_dense_symmetric() {
        Ok(net)
    } else {
        Ok(net.symmetrise())
    }
}

fn load_diag(path: &Path) -> Result<crate::odt::DiagonalisedNet> {
    let ck = persist::load(path)?;
    ck.into_diagonalised().map_err(|_| {
        ChiError::Format(format!(
            "{} is not a diagonalised checkpoint — run `chinet odt` first",
            path.display()
        ))
    })
}

fn image_shape(d: usize, width: Option<usize>, height: Option<usize>) -> (usize, usize) {
    match (width, height) {
        (Some(w), Some(h)) if w * h == d => (h, w),
        _ => {
            let side = (d as f64).sqrt().round() as usize;
            if side * side == d {
                (side, side)
            } else {
                (1, d)
            }
        }
    }
}

fn metrics_rows(metrics: &[train::EpochMetric]) -> Vec<Vec<f64>> {
    metrics
        .iter()
        .map(|m| vec![m.epoch as f64, m.train_loss, m.test_acc, m.lr])
        .collect()
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => load_train_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = a.epochs {
        cfg.epochs = epochs;
    }

    let train_opts = DataOpts {
        images: a.train_images.clone(),
        labels: a.train_labels.clone(),
        raw_rgb: false,
        width: None,
        height: None,
    };
    let test_opts = DataOpts {
        images: a.test_images.clone(),
        labels: a.test_labels.clone(),
        raw_rgb: false,
        width: None,
        height: None,
    };
    let train_ds = train_opts.load("train")?;
    let test_ds = test_opts.load("test")?;
    let n_classes = train_ds.n_classes.max(test_ds.n_classes);
    let d = train_ds.input_dim();

    let mut bundle = ReportBundle::create(&a.out, "train")?;
    bundle.set_seed(cfg.seed);
    bundle.set_config(&cfg);
    bundle.record_input(&a.train_images);
    bundle.record_input(&a.train_labels);
    bundle.record_input(&a.test_images);
    bundle.record_input(&a.test_labels);

    let bond_dims = vec![cfg.hidden_dim; cfg.depth + 1];
    let mut init_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let net0 = ChiNet::random_factored(d, &bond_dims, n_classes, &mut init_rng);
    let out = train::train(net0, &train_ds, &test_ds, &cfg)?;

    let folded = fold_norm(&out.net, &out.states);
    let sym = folded.symmetrise();
    let ck_path = bundle.file("checkpoint.chin");
    persist::save(&ck_path, &Checkpoint::plain(sym.clone()))?;
    bundle.note_output("checkpoint.chin.json");

    let metrics_path = bundle.file("metrics.csv");
    write_csv(&metrics_path, "epoch,train_loss,test_acc,lr", &metrics_rows(&out.metrics))?;

    let (acc, loss) = evaluate(&sym, &test_ds)?;
    println!("trained {} epochs: test accuracy {:.4}, mean loss {:.4}", cfg.epochs, acc, loss);

    if a.baseline {
        let (mlp, mlp_states, mlp_metrics) =
            train_relu_baseline(d, &bond_dims, &train_ds, &test_ds, &cfg)?;
        let m_path = bundle.file("baseline_metrics.csv");
        write_csv(&m_path, "epoch,train_loss,test_acc,lr", &metrics_rows(&mlp_metrics))?;
        let (bacc, _) = mlp.evaluate(&test_ds, &mlp_states);
        let (linear, lin_states, lin_metrics) =
            train_relu_baseline(d, &[], &train_ds, &test_ds, &cfg)?;
        let l_path = bundle.file("linear_metrics.csv");
        write_csv(&l_path, "epoch,train_loss,test_acc,lr", &metrics_rows(&lin_metrics))?;
        let (lacc, _) = linear.evaluate(&test_ds, &lin_states);
        println!("relu baseline accuracy {bacc:.4}, linear model accuracy {lacc:.4}");
    }

    let dir = bundle.finish()?;
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ck = persist::load(&a.checkpoint)?;
    let ds = a.data.load("test")?;
    if ds.n_classes > ck.net.n_classes() {
        return Err(ChiError::Dim(format!(
            "dataset has labels up to {}, model has {} classes",
            ds.n_classes - 1,
            ck.net.n_classes()
        )));
    }
    let (acc, loss) = evaluate(&ck.net, &ds)?;
    println!("accuracy {acc:.6}");
    println!("loss {loss:.6}");
    Ok(())
}

fn cmd_odt(a: OdtArgs) -> Result<()> {
    let net = load_net_for_analysis(&a.checkpoint)?;
    let depth = net.depth();
    let onet = orthogonalise(&net)?;
    let spectrum = diagonalise(&onet)?;
    let plan = match (&a.ranks, a.epsilon) {
        (Some(ranks), _) => TruncationPlan {
            ranks: ranks.clone(),
            epsilon: None,
        },
        (None, Some(eps)) => select_ranks(&spectrum, eps, depth)?,
        (None, None) => {
            return Err(ChiError::Config(
                "odt needs either --epsilon or --ranks".into(),
            ))
        }
    };
    let dnet = truncate(&onet, &spectrum, &plan)?;

    let mut bundle = ReportBundle::create(&a.out, "odt")?;
    bundle.record_input(&a.checkpoint);
    bundle.set_config(&serde_json::json!({
        "epsilon": a.epsilon,
        "ranks": plan.ranks,
    }));

    let dims = onet.bond_dims();
    println!("bond dims {:?} -> ranks {:?}", dims, plan.ranks);

    #[derive(serde::Serialize)]
    struct BondReport {
        bond: usize,
        dim: usize,
        rank: usize,
        effective_dim: f64,
        eigenvalues: Vec<f64>,
    }
    let mut bonds = Vec::new();
    for (i, s) in spectrum.spectra.iter().enumerate() {
        let sv: Vec<f64> = s.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
        bonds.push(BondReport {
            bond: i + 1,
            dim: dims[i],
            rank: plan.ranks[i],
            effective_dim: effective_dim(&sv).unwrap_or(0.0),
            eigenvalues: s.eigenvalues.clone(),
        });
    }
    let spec_json = serde_json::json!({
        "epsilon": plan.epsilon,
        "bonds": bonds,
    });
    let spath = bundle.file("spectrum.json");
    std::fs::write(&spath, format!("{:#}\n", spec_json))?;

    let ck_path = bundle.file("truncated.chin");
    persist::save(&ck_path, &Checkpoint::diagonalised(dnet))?;
    bundle.note_output("truncated.chin.json");
    let dir = bundle.finish()?;
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let net = load_net_for_analysis(&a.checkpoint)?;
    let ds = a.data.load("test")?;
    let onet = orthogonalise(&net)?;
    let spectrum = diagonalise(&onet)?;
    let rows = truncation_sweep(&onet, &spectrum, &ds, a.stride)?;

    let mut bundle = ReportBundle::create(&a.out, "sweep")?;
    bundle.record_input(&a.checkpoint);
    bundle.set_config(&serde_json::json!({"stride": a.stride}));
    let csv_path = bundle.file("sweep.csv");
    let csv_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| vec![r.removed_frac, r.accuracy, r.loss, r.frobenius])
        .collect();
    write_csv(&csv_path, "removed_frac,accuracy,loss,frobenius", &csv_rows)?;

    if a.svg {
        for (name, f) in [
            ("accuracy", 1usize),
            ("loss", 2),
            ("frobenius", 3),
        ] {
            let pts: Vec<(f64, f64)> = csv_rows.iter().map(|r| (r[0], r[f])).collect();
            let p = bundle.file(&format!("sweep_{name}.svg"));
            write_svg_lines(&p, &format!("{name} vs removed dimensions"), &[(name, pts)])?;
        }
    }
    println!(
        "sweep: {} rows, baseline accuracy {:.4}, final accuracy {:.4}",
        rows.len(),
        rows.first().map(|r| r.accuracy).unwrap_or(0.0),
        rows.last().map(|r| r.accuracy).unwrap_or(0.0)
    );
    let dir = bundle.finish()?;
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn cmd_compare_svd(a: CompareSvdArgs) -> Result<()> {
    let net = load_net_for_analysis(&a.checkpoint)?;
    let svd_spectra = local_svd(&net)?;
    let onet = orthogonalise(&net)?;
    let spectrum = diagonalise(&onet)?;
    let odt_spectra: Vec<Vec<f64>> = spectrum
        .spectra
        .iter()
        .map(|s| {
            let sv: Vec<f64> = s.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
            let max = sv.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
            sv.iter().map(|v| v / max).collect()
        })
        .collect();

    let mut bundle = ReportBundle::create(&a.out, "compare-svd")?;
    bundle.record_input(&a.checkpoint);

    let spectra_rows = |spectra: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut rows = Vec::new();
        for (b, s) in spectra.iter().enumerate() {
            for (i, &v) in s.iter().enumerate() {
                rows.push(vec![(b + 1) as f64, i as f64, v]);
            }
        }
        rows
    };
    let svd_path = bundle.file("svd_spectra.csv");
    write_csv(&svd_path, "bond,index,value", &spectra_rows(&svd_spectra))?;
    let odt_path = bundle.file("odt_spectra.csv");
    write_csv(&odt_path, "bond,index,value", &spectra_rows(&odt_spectra))?;

    let mut eff_rows = Vec::new();
    println!("bond  svd_eff  odt_eff");
    for b in 0..svd_spectra.len() {
        let svd_eff = effective_dim(&svd_spectra[b])?;
        let odt_eff = effective_dim(&odt_spectra[b])?;
        println!("{:>4}  {:>7.1}  {:>7.1}", b + 1, svd_eff, odt_eff);
        eff_rows.push(vec![(b + 1) as f64, svd_eff, odt_eff]);
    }
    let eff_path = bundle.file("effective_dims.csv");
    write_csv(&eff_path, "bond,svd,odt", &eff_rows)?;

    if a.svg {
        for (name, spectra) in [("svd", &svd_spectra), ("odt", &odt_spectra)] {
            let series: Vec<(String, Vec<(f64, f64)>)> = spectra
                .iter()
                .enumerate()
                .map(|(b, s)| {
                    (
                        format!("bond {}", b + 1),
                        s.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect(),
                    )
                })
                .collect();
            let series_ref: Vec<(&str, Vec<(f64, f64)>)> = series
                .iter()
                .map(|(n, p)| (n.as_str(), p.clone()))
                .collect();
            let p = bundle.file(&format!("{name}_spectra.svg"));
            write_svg_lines(&p, &format!("{name} normalised spectra"), &series_ref)?;
        }
    }
    let dir = bundle.finish()?;
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn cmd_features(a: FeaturesArgs) -> Result<()> {
    let dnet = load_diag(&a.checkpoint)?;
    let d = dnet.net.input_dim();
    let (rows, cols) = image_shape(d, a.width, a.height);
    let features = interpret::extract_features(&dnet)?;

    let mut bundle = ReportBundle::create(&a.out, "features")?;
    bundle.record_input(&a.checkpoint);
    bundle.set_config(&serde_json::json!({"top": a.top}));

    let mut eig_rows = Vec::new();
    for feats in &features {
        for f in feats {
            eig_rows.push(vec![f.class as f64, f.rank as f64, f.eigenvalue]);
        }
    }
    let fcsv = bundle.file("features.csv");
    write_csv(&fcsv, "class,rank,eigenvalue", &eig_rows)?;

    for (c, feats) in features.iter().enumerate() {
        for f in interpret::display_features(feats).into_iter().take(a.top) {
            let base = format!("class{}_rank{}", c, f.rank);
            let ppm = bundle.file(&format!("{base}.ppm"));
            image::write_ppm_diverging(&ppm, &f.input_projection, rows, cols)?;
            let csv = bundle.file(&format!("{base}.csv"));
            image::write_value_csv(&csv, &f.input_projection, cols)?;
        }
    }

    // atoms of the embedding, most important first
    let atoms = interpret::atoms(&dnet);
    let atom_rows: Vec<Vec<f64>> = atoms
        .iter()
        .enumerate()
        .map(|(i, at)| vec![i as f64, at.row as f64, at.importance])
        .collect();
    let acsv = bundle.file("atoms.csv");
    write_csv(&acsv, "rank,row,importance", &atom_rows)?;
    for (i, at) in atoms.iter().take(a.top).enumerate() {
        let ppm = bundle.file(&format!("atom{}.ppm", i));
        image::write_ppm_diverging(&ppm, &at.vector[1..], rows, cols)?;
        let csv = bundle.file(&format!("atom{}.csv", i));
        image::write_value_csv(&csv, &at.vector[1..], cols)?;
    }

    // interaction-matrix anatomy per layer
    let mut anatomy = Vec::new();
    for (i, core) in dnet.net.cores.iter().enumerate() {
        if let crate::model::LayerCore::Dense(c) = core {
            let frac = interpret::constant_fraction(c, dnet.constant_coords[i]);
            anatomy.push(vec![(i + 1) as f64, frac]);
        }
    }
    let anat = bundle.file("constant_fractions.csv");
    write_csv(&anat, "layer,constant_fraction", &anatomy)?;

    println!(
        "wrote {} classes x up to {} feature images, {} atoms",
        features.len(),
        a.top,
        atoms.len().min(a.top)
    );
    let dir = bundle.finish()?;
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn cmd_explain(a: ExplainArgs) -> Result<()> {
    let dnet = load_diag(&a.checkpoint)?;
    let ds = a.data.load("test")?;
    if a.input >= ds.len() {
        return Err(ChiError::Dim(format!(
            "--input {} out of range (dataset has {} samples)",
            a.input,
            ds.len()
        )));
    }
    let x = ds.images.row(a.input).to_vec();
    let features = interpret::extract_features(&dnet)?;
    let mode = if a.unsquared {
        ActivationMode::Linear
    } else {
        ActivationMode::Squared
    };
    let report = interpret::explain(&dnet, &features, &x, mode, a.top)?;

    let mut bundle = ReportBundle::create(&a.out, "explain")?;
    bundle.record_input(&a.checkpoint);
    bundle.record_input(&a.data.images);
    bundle.set_config(&serde_json::json!({
        "input": a.input, "top": a.top, "mode": mode,
    }));

    let rpath = bundle.file("report.json");
    let mut text = serde_json::to_string_pretty(&report).expect("serialisable");
    text.push('\n');
    std::fs::write(&rpath, text)?;

    let (rows, cols) = (ds.image_shape.0, ds.image_shape.1);
    let ipath = bundle.file("input.pgm");
    image::write_pgm(&ipath, &x, rows, cols)?;
    // input-space projections of each class's strongest feature
    for ce in &report.classes {
        if let Some(top) = ce.top_features.first() {
            if let Some(f) = features[ce.class].iter().find(|f| f.rank == top.rank) {
                let ppm = bundle.file(&format!("class{}_top.ppm", ce.class));
                image::write_ppm_diverging(&ppm, &f.input_projection, rows, cols)?;
            }
        }
    }

    println!(
        "input {}: true label {}, predicted {}, residual {:.3e}",
        a.input, ds.labels[a.input], report.predicted, report.reconstruction_residual
    );
    let dir = bundle.finish()?;
    println!("artifacts in {}", dir.display());
    Ok(())
}
