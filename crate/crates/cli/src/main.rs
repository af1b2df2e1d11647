//! `mmr`: data generation, training, reconstruction, evaluation and
//! ablation runs.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure during training.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmr_core::checkpoint::Checkpoint;
use mmr_core::config::RunConfig;
use mmr_core::data::{self, load_image, load_raster, save_raster, PhantomSpec};
use mmr_core::metrics::{report_table, MetricReport, Metrics};
use mmr_core::model::Variant;
use mmr_core::mri::{default_center_fraction, CartesianMask};
use mmr_core::train::{self, Split, Trainer};
use mmr_core::{Error, Tensor};

#[derive(Parser)]
#[command(name = "mmr", version, about = "Multi-modal MRI reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic reference/target pairs and a manifest.
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        /// Subdirectory of `out` receiving the pairs.
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, default_value_t = 6)]
        shapes: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
    },
    /// Write a column mask as a 1 x width raster of zeros and ones.
    GenMask {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        acceleration: f64,
        /// Defaults to 0.08 below 8x and 0.04 from 8x.
        #[arg(long)]
        center_fraction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; logs, checkpoints and the resolved config go to `out`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Reconstruct one target image from its zero-filled input.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        tar_undersampled: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ground truth; enables the error map.
        #[arg(long)]
        target: Option<PathBuf>,
        /// Where to write |reconstruction - target|; defaults to
        /// `<out>` with an `_error` suffix.
        #[arg(long)]
        error_out: Option<PathBuf>,
    },
    /// Print a mean±std table for the zero-filled baseline and the model.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root written by `gen-data`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        /// Mask raster from `gen-mask`; defaults to the checkpoint's mask.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Train each variant with the same config and compare them.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "sum_spatial,sum_frequency,no_asff,full")]
        variants: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration.
    DefaultConfig,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(command: Command) -> mmr_core::Result<()> {
    match command {
        Command::GenData {
            seed,
            count,
            size,
            out,
            split,
            shapes,
            noise,
        } => gen_data(seed, count, size, &out, &split, shapes, noise),
        Command::GenMask {
            width,
            acceleration,
            center_fraction,
            seed,
            out,
        } => {
            let cf = center_fraction.unwrap_or_else(|| default_center_fraction(acceleration));
            let mask = CartesianMask::generate(width, acceleration, cf, seed)?;
            save_raster(&Tensor::new(&[1, width], mask.values())?, &out)?;
            println!("{} of {width} columns sampled", mask.count());
            Ok(())
        }
        Command::Train { config, out, resume } => {
            let mut trainer = match resume {
                Some(p) => Trainer::resume(&Checkpoint::load(p)?)?,
                None => Trainer::from_config(read_config(&config)?)?,
            };
            let s = trainer.run(&out)?;
            println!("{}", report_table(&[("zero_filled", &s.baseline), ("model", &s.last.report)]));
            Ok(())
        }
        Command::Reconstruct {
            checkpoint,
            reference,
            tar_undersampled,
            out,
            target,
            error_out,
        } => reconstruct(&checkpoint, &reference, &tar_undersampled, &out, target, error_out),
        Command::Evaluate {
            checkpoint,
            data,
            split,
            mask,
        } => evaluate(&checkpoint, &data, &split, mask),
        Command::Ablate { config, variants, out } => ablate(&config, &variants, &out),
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_text());
            Ok(())
        }
    }
}

fn read_config(path: &Path) -> mmr_core::Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::parse(&text)
}

fn gen_data(
    seed: u64,
    count: usize,
    size: usize,
    out: &Path,
    split: &str,
    shapes: usize,
    noise: f64,
) -> mmr_core::Result<()> {
    if size < data::phantom::MIN_SIZE {
        return Err(Error::Config(format!(
            "--size must be at least {}, got {size}",
            data::phantom::MIN_SIZE
        )));
    }
    let spec = PhantomSpec {
        num_shapes: shapes,
        noise_sigma: noise,
        ..PhantomSpec::new(seed, size)
    };
    let rows = data::write_split(out, split, &spec, seed, count)?;
    println!(
        "wrote {} pairs to {}",
        rows.len(),
        data::dataset::manifest_path(out, split).display()
    );
    Ok(())
}

/// Load a `[H, W]` raster as `[1, 1, H, W]`.
fn load_nchw(path: &Path) -> mmr_core::Result<Tensor> {
    let x = load_image(path)?;
    let (h, w) = (x.dim(0), x.dim(1));
    x.into_reshaped(&[1, 1, h, w])
}

fn reconstruct(
    checkpoint: &Path,
    reference: &Path,
    tar_undersampled: &Path,
    out: &Path,
    target: Option<PathBuf>,
    error_out: Option<PathBuf>,
) -> mmr_core::Result<()> {
    let (model, mut store, _) = train::load_model(&Checkpoint::load(checkpoint)?)?;
    let r = load_nchw(reference)?;
    let zf = load_nchw(tar_undersampled)?;
    let y = train::predict(&model, &mut store, &zf, &r)?;
    let (h, w) = (y.dim(2), y.dim(3));
    let y = y.into_reshaped(&[h, w])?;
    save_raster(&y, out)?;
    if let Some(t) = target {
        let gt = load_image(&t)?;
        let err = y.zip_map(&gt, |a, b| (a - b).abs())?;
        let path = error_out.unwrap_or_else(|| error_path(out));
        save_raster(&err, &path)?;
        let m = Metrics::compute(&y, &gt)?;
        println!("psnr {:.3} ssim {:.4} nmse {:.5}", m.psnr, m.ssim, m.nmse);
        println!("error map written to {}", path.display());
    }
    Ok(())
}

fn error_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("recon");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("mmri");
    out.with_file_name(format!("{stem}_error.{ext}"))
}

fn evaluate(checkpoint: &Path, data_root: &Path, split: &str, mask: Option<PathBuf>) -> mmr_core::Result<()> {
    let (model, mut store, config) = train::load_model(&Checkpoint::load(checkpoint)?)?;
    let pairs = data::load_split(data_root, split)?;
    let width = pairs[0].target.dim(1);
    let mask = match mask {
        Some(p) => {
            let m = load_raster(&p)?;
            CartesianMask::from_columns(m.data().iter().map(|&v| v > 0.5).collect())?
        }
        None => config.mask(width)?,
    };
    let split = Split::prepare(&pairs, &mask)?;
    let mut report = MetricReport::default();
    for i in 0..split.len() {
        let (zf, r, gt) = split.batch(&[i])?;
        let y = train::predict(&model, &mut store, &zf, &r)?;
        report.push(Metrics::compute(
            &y.index_axis0(0).index_axis0(0),
            &gt.index_axis0(0).index_axis0(0),
        )?);
    }
    print!("{}", report_table(&[("zero_filled", &split.baseline()?), ("model", &report)]));
    Ok(())
}

fn ablate(config: &Path, variants: &[String], out: &Path) -> mmr_core::Result<()> {
    let base = read_config(config)?;
    let variants: Vec<Variant> = variants
        .iter()
        .map(|v| v.trim().parse())
        .collect::<mmr_core::Result<_>>()?;
    let (train_pairs, val_pairs) = train::load_data(&base)?;
    let mut rows: Vec<(String, MetricReport)> = Vec::new();
    for v in variants {
        let mut cfg = base.clone();
        cfg.model.variant = v;
        log::info!("training variant {v}");
        let mut trainer = Trainer::new(cfg, &train_pairs, &val_pairs)?;
        let s = trainer.run(&out.join(v.name()))?;
        if rows.is_empty() {
            rows.push(("zero_filled".into(), s.baseline.clone()));
        }
        rows.push((v.name().into(), s.last.report));
    }
    let table = report_table(&rows.iter().map(|(n, r)| (n.as_str(), r)).collect::<Vec<_>>());
    fs::write(out.join("ablation.tsv"), &table)?;
    print!("{table}");
    Ok(())
}
