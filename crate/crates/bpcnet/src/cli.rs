//! Subcommands and their exit codes: 0 success, 1 usage or configuration
//! error, 2 data or format error, 3 failed numerical check.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use bpcnet_core::data::LabeledDataset;
use bpcnet_core::eval::{mutation_table, reconstruction_mse};
use bpcnet_core::gradcheck::{gradient_suite, DEFAULT_TOLERANCE};
use bpcnet_core::model::Model;
use bpcnet_core::train::train_autoencoder;
use bpcnet_core::wilcoxon::wilcoxon_one_sided;
use bpcnet_core::{Rng, Tensor};
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::error::Error;
use crate::imagedir::load_image_dir;
use crate::mnist::load_mnist;
use crate::pnm::{read_pnm, write_pgm, write_ppm};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bpcnet", version, about = "Metadata-conditioned attention autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Regenerate images under every class and write the grid.
    Mutate(MutateArgs),
    /// Mean squared reconstruction error on labelled IDX data.
    Eval(EvalArgs),
    /// Compare every gradient against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Exact one-sided signed-rank test that `a` exceeds `b`.
    Wilcoxon(WilcoxonArgs),
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["images", "data_dir"]))]
struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// IDX image file.
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Directory of PGM/PPM images.
    #[arg(long, requires = "csv", conflicts_with = "images")]
    data_dir: Option<PathBuf>,
    /// `filename,class_label` CSV describing --data-dir.
    #[arg(long, requires = "data_dir")]
    csv: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["images", "image"]))]
struct MutateArgs {
    #[arg(long)]
    model: PathBuf,
    /// IDX image file to sample from.
    #[arg(long)]
    images: Option<PathBuf>,
    /// A single PGM/PPM image.
    #[arg(long, conflicts_with = "images")]
    image: Option<PathBuf>,
    /// Number of images (grid columns).
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// PGM (grey models) or PPM (colour models) to write.
    #[arg(long)]
    out: PathBuf,
    /// Seed for picking samples from --images.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Evaluate only the first n samples.
    #[arg(long)]
    max_samples: Option<usize>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
}

#[derive(Debug, Args)]
struct WilcoxonArgs {
    /// Whitespace-separated floats.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

/// A terminal outcome other than success.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<bpcnet_core::Error> for Failure {
    fn from(e: bpcnet_core::Error) -> Self {
        Error::from(e).into()
    }
}

fn data_failure(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_DATA,
        msg: msg.into(),
    }
}

type Outcome = Result<(), Failure>;

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::{DisplayHelp, DisplayVersion};
            let text = e.render().ansi().to_string();
            return if matches!(e.kind(), DisplayHelp | DisplayVersion) {
                let _ = write!(out, "{text}");
                0
            } else {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Mutate(a) => cmd_mutate(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Wilcoxon(a) => cmd_wilcoxon(a, out),
    };
    let _ = out.flush();
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.msg);
            f.code
        }
    }
}

/// `v` with six significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.5}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        format!("{:.*}", (5 - exp).max(0) as usize, v)
    } else {
        format!("{v:.5e}")
    }
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Outcome {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let spec = &cfg.model;
    let dataset = match (&a.images, &a.labels, &a.data_dir, &a.csv) {
        (Some(images), Some(labels), None, None) => load_mnist(images, labels, spec.meta_dim, cfg.max_samples)?,
        (None, None, Some(dir), Some(csv)) => {
            let ds = load_image_dir(dir, csv, Some((spec.image_h, spec.image_w)))?;
            match cfg.max_samples {
                Some(n) => ds.take(n)?,
                None => ds,
            }
        }
        _ => {
            return Err(Failure {
                code: EXIT_USAGE,
                msg: "give either --images and --labels or --data-dir and --csv".into(),
            })
        }
    };
    let mut model = Model::build(spec, &mut Rng::new(cfg.train.seed))?;
    let history = train_autoencoder(&mut model, &dataset, &cfg.train, |epoch, loss, _| {
        let _ = writeln!(out, "epoch {epoch} loss {}", sig6(loss));
        let _ = out.flush();
    })?;
    if history.iter().any(|l| !l.is_finite()) {
        return Err(Failure {
            code: EXIT_CHECK,
            msg: "training diverged (non-finite loss); no checkpoint written".into(),
        });
    }
    save_checkpoint(&model, &a.out)?;
    Ok(())
}

fn cmd_mutate(a: MutateArgs, out: &mut dyn Write) -> Outcome {
    let model = load_checkpoint(&a.model)?;
    let spec = model.spec().clone();
    let images = match (&a.images, &a.image) {
        (Some(path), None) => pick_idx(path, &spec, a.count, a.seed)?,
        (None, Some(path)) => single_image(path, &spec)?,
        _ => unreachable!("clap enforces exactly one source"),
    };
    let table = mutation_table(&model, &images, spec.meta_dim)?;
    let (h, w, c) = (table.pixel_height(), table.pixel_width(), table.channels);
    match c {
        1 => write_pgm(&table.canvas.reshape(&[h, w])?, &a.out)?,
        3 => write_ppm(&table.canvas, &a.out)?,
        _ => return Err(data_failure(format!("{c}-channel grids cannot be written"))),
    }
    let _ = writeln!(out, "mutation_table {}x{} tiles {h}x{w} pixels", table.rows, table.cols);
    Ok(())
}

/// `count` distinct samples of an IDX file, chosen by `seed`.
fn pick_idx(path: &Path, spec: &bpcnet_core::model::ModelSpec, count: usize, seed: u64) -> Result<Tensor, Failure> {
    let f = crate::idx::load_idx_images(path)?;
    if (f.rows, f.cols, 1) != (spec.image_h, spec.image_w, spec.channels) {
        return Err(data_failure(format!(
            "{}x{} images do not fit a {}x{}x{} model",
            f.rows, f.cols, spec.image_h, spec.image_w, spec.channels
        )));
    }
    if count == 0 || count > f.count() {
        return Err(data_failure(format!("--count {count} with {} images available", f.count())));
    }
    let mut order: Vec<usize> = (0..f.count()).collect();
    Rng::new(seed).shuffle(&mut order);
    Ok(f.images.select_cols(&order[..count])?)
}

fn single_image(path: &Path, spec: &bpcnet_core::model::ModelSpec) -> Result<Tensor, Failure> {
    let img = read_pnm(path)?;
    if img.shape()[2] != spec.channels {
        return Err(data_failure(format!("image has {} channels, model expects {}", img.shape()[2], spec.channels)));
    }
    let img = bpcnet_core::data::rescale_bilinear(&img, spec.image_h, spec.image_w)?;
    Ok(bpcnet_core::data::hwc_to_column(&img)?)
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Outcome {
    let model = load_checkpoint(&a.model)?;
    let ds: LabeledDataset = load_mnist(&a.images, &a.labels, model.spec().meta_dim, a.max_samples)?;
    bpcnet_core::train::check_compatible(&model, &ds)?;
    if a.batch_size == 0 {
        return Err(Failure {
            code: EXIT_USAGE,
            msg: "--batch-size must be at least 1".into(),
        });
    }
    let mse = reconstruction_mse(&model, &ds, a.batch_size)?;
    let _ = writeln!(out, "reconstruction_mse {mse:.6}");
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Outcome {
    let reports = gradient_suite(a.seed)?;
    let mut failed = 0;
    for r in &reports {
        let verdict = if r.passed(a.tol) { "ok" } else { "FAIL" };
        if !r.passed(a.tol) {
            failed += 1;
        }
        let _ = writeln!(out, "{:<18} max_rel_error {:.3e} {verdict}", r.name, r.max_rel_error);
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_CHECK,
            msg: format!("{failed} of {} checks exceed tolerance {:e}", reports.len(), a.tol),
        });
    }
    Ok(())
}

fn read_floats(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| data_failure(format!("{}: {e}", path.display())))?;
    text.split_whitespace()
        .enumerate()
        .map(|(i, tok)| {
            tok.parse::<f64>()
                .map_err(|_| data_failure(format!("{}: value {} ({tok:?}) is not a number", path.display(), i + 1)))
        })
        .collect()
}

fn cmd_wilcoxon(a: WilcoxonArgs, out: &mut dyn Write) -> Outcome {
    let xa = read_floats(&a.a)?;
    let xb = read_floats(&a.b)?;
    if xa.len() != xb.len() {
        return Err(data_failure(format!("{} values in --a but {} in --b", xa.len(), xb.len())));
    }
    let p = wilcoxon_one_sided(&xa, &xb).map_err(|e| data_failure(e.to_string()))?;
    let _ = writeln!(out, "p_value {p:.6}");
    Ok(())
}
