//! Training loop, evaluation and batch-norm calibration.
//!
//! Step `s` draws its batch from a generator seeded with `(seed, s)`, so a
//! run restored from a checkpoint replays the same batches.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, RunningStats, Tape};
use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::data::{load_split, synthesize, Pair};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, Metrics};
use crate::model::Model;
use crate::mri::{zero_filled, CartesianMask};
use crate::nn::Ctx;
use crate::ops::{self, BnMode};
use crate::optim::AdamW;
use crate::tensor::Tensor;

/// Steps averaged into the reported final training loss.
pub const FINAL_LOSS_WINDOW: usize = 20;

pub const LOSS_LOG: &str = "loss.tsv";
pub const METRICS_LOG: &str = "metrics.tsv";
pub const METRICS_HEADER: &str = "step\tloss\tpsnr\tssim\tnmse";
pub const CONFIG_FILE: &str = "config.txt";
pub const FINAL_CHECKPOINT: &str = "checkpoint.mmrc";

/// Undersampled inputs and ground truth, one `[H, W]` image per pair.
#[derive(Clone, Debug)]
pub struct Split {
    pub zero_filled: Vec<Tensor>,
    pub reference: Vec<Tensor>,
    pub target: Vec<Tensor>,
}

impl Split {
    pub fn prepare(pairs: &[Pair], mask: &CartesianMask) -> Result<Self> {
        let mut s = Split {
            zero_filled: Vec::with_capacity(pairs.len()),
            reference: Vec::with_capacity(pairs.len()),
            target: Vec::with_capacity(pairs.len()),
        };
        for p in pairs {
            s.zero_filled.push(zero_filled(&p.target, mask)?);
            s.reference.push(p.reference.clone());
            s.target.push(p.target.clone());
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// `(zero_filled, reference, target)`, each `[B, 1, H, W]`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor, Tensor)> {
        let pick = |v: &[Tensor]| -> Result<Tensor> {
            let items: Vec<Tensor> = indices.iter().map(|&i| v[i].clone()).collect();
            let x = Tensor::stack(&items)?;
            let s = x.shape().to_vec();
            x.into_reshaped(&[s[0], 1, s[1], s[2]])
        };
        Ok((pick(&self.zero_filled)?, pick(&self.reference)?, pick(&self.target)?))
    }

    /// Zero-filled baseline against ground truth.
    pub fn baseline(&self) -> Result<MetricReport> {
        let mut r = MetricReport::default();
        for (zf, gt) in self.zero_filled.iter().zip(&self.target) {
            r.push(Metrics::compute(zf, gt)?);
        }
        Ok(r)
    }
}

/// Validation loss plus per-sample metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub report: MetricReport,
}

/// Reconstruct `[B, 1, H, W]` inputs with running batch-norm statistics.
pub fn predict(model: &Model, store: &mut ParamStore, zero_filled: &Tensor, reference: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let mut ctx = Ctx::new(&tape, store, BnMode::Eval);
    let y = model.forward(&mut ctx, tape.constant(zero_filled.clone()), tape.constant(reference.clone()))?;
    Ok((*y.value()).clone())
}

/// Pairs for the `train` and `val` splits.
pub fn load_data(config: &RunConfig) -> Result<(Vec<Pair>, Vec<Pair>)> {
    match &config.data {
        DataSource::Synthetic => {
            let spec = config.phantom();
            let train = synthesize(&spec, config.data_seed, 0, config.train_count)?;
            // held-out pairs continue the same stream
            let val = synthesize(&spec, config.data_seed, config.train_count, config.val_count)?;
            Ok((train, val))
        }
        DataSource::Dir(root) => Ok((load_split(root, "train")?, load_split(root, "val")?)),
    }
}

/// Model and store for a checkpoint, plus its configuration.
pub fn load_model(ckpt: &Checkpoint) -> Result<(Model, ParamStore, RunConfig)> {
    let config = RunConfig::parse(&ckpt.config)?;
    let (model, mut store) = Model::new(&config.model, config.seed)?;
    let mut opt = AdamW::new(config.adam, &store);
    ckpt.restore(&mut store, &mut opt)?;
    Ok((model, store, config))
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    pub store: ParamStore,
    pub opt: AdamW,
    /// Completed optimization steps.
    pub step: u64,
    pub mask: CartesianMask,
    pub train: Split,
    pub val: Split,
}

/// Outcome of [`Trainer::run`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    /// Training loss of every step, starting at step 1.
    pub losses: Vec<f64>,
    pub initial: Evaluation,
    pub last: Evaluation,
    pub baseline: MetricReport,
}

impl RunSummary {
    /// Mean training loss over the last [`FINAL_LOSS_WINDOW`] steps.
    pub fn final_loss(&self) -> f64 {
        let k = self.losses.len().min(FINAL_LOSS_WINDOW);
        self.losses[self.losses.len() - k..].iter().sum::<f64>() / k as f64
    }
}

impl Trainer {
    pub fn new(config: RunConfig, train: &[Pair], val: &[Pair]) -> Result<Self> {
        config.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(Error::Config("train and val splits must be nonempty".into()));
        }
        let shape = train[0].target.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::invalid("trainer", format!("expected [H, W] images, got {shape:?}")));
        }
        for p in train.iter().chain(val) {
            if p.target.shape() != shape || p.reference.shape() != shape {
                return Err(Error::shape("trainer", &shape, p.target.shape()));
            }
        }
        let mask = config.mask(shape[1])?;
        let (model, store) = Model::new(&config.model, config.seed)?;
        let opt = AdamW::new(config.adam, &store);
        Ok(Self {
            train: Split::prepare(train, &mask)?,
            val: Split::prepare(val, &mask)?,
            config,
            model,
            store,
            opt,
            step: 0,
            mask,
        })
    }

    pub fn from_config(config: RunConfig) -> Result<Self> {
        let (train, val) = load_data(&config)?;
        Self::new(config, &train, &val)
    }

    /// Continue a run from a checkpoint.
    pub fn resume(ckpt: &Checkpoint) -> Result<Self> {
        let config = RunConfig::parse(&ckpt.config)?;
        let mut t = Self::from_config(config)?;
        t.restore(ckpt)?;
        Ok(t)
    }

    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.restore(&mut self.store, &mut self.opt)?;
        self.step = ckpt.step;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self.step, &self.store, &self.opt, self.config.to_text())
    }

    /// Training indices for step `step` (1-based).
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        let n = self.train.len();
        let b = self.config.batch_size;
        if b <= n {
            rand::seq::index::sample(&mut rng, n, b).into_vec()
        } else {
            use rand::Rng;
            (0..b).map(|_| rng.random_range(0..n)).collect()
        }
    }

    /// One optimization step; returns its training loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let step = self.step + 1;
        let (zf, reference, target) = self.train.batch(&self.batch_indices(step))?;
        let tape = Tape::new();
        let loss = {
            let mut ctx = Ctx::new(&tape, &mut self.store, BnMode::Train);
            let y = self.model.forward(&mut ctx, tape.constant(zf), tape.constant(reference))?;
            ops::l1_loss(y, tape.constant(target))?
        };
        let value = loss.value().item();
        self.store.zero_grad();
        if value.is_finite() {
            tape.backward_into(loss, &mut self.store)?;
        }
        drop(tape);
        let grads_finite = self.store.params().iter().all(|p| p.grad.is_finite());
        if !value.is_finite() || !grads_finite {
            let report = self.norm_report();
            for line in report.lines() {
                log::error!("{line}");
            }
            return Err(Error::NonFinite(format!(
                "training loss {value} at step {step}; parameter and gradient norms:\n{report}"
            )));
        }
        self.opt.update(&mut self.store)?;
        self.step = step;
        Ok(value)
    }

    /// `name  |theta|  |grad|` per parameter.
    pub fn norm_report(&self) -> String {
        let mut s = String::from("parameter\tnorm\tgrad_norm\n");
        for p in self.store.params() {
            let _ = writeln!(s, "{}\t{:e}\t{:e}", p.name, p.value.norm_sq().sqrt(), p.grad.norm_sq().sqrt());
        }
        s
    }

    /// Re-estimate batch-norm statistics as the plain average over fixed
    /// training batches, leaving every parameter untouched.
    pub fn calibrate(&mut self) -> Result<()> {
        for (_, s) in self.store.all_stats_mut() {
            *s = RunningStats::uninitialized(s.channels());
        }
        let n = self.train.len();
        let b = self.config.batch_size.max(2).min(n.max(1));
        for k in 0..self.config.calibration_batches.max(1) {
            let idx: Vec<usize> = (0..b).map(|j| (k * b + j) % n).collect();
            let (zf, reference, _) = self.train.batch(&idx)?;
            let tape = Tape::new();
            let mut ctx = Ctx::new(&tape, &mut self.store, BnMode::Calibrate);
            self.model.forward(&mut ctx, tape.constant(zf), tape.constant(reference))?;
        }
        Ok(())
    }

    /// Calibrate, then reconstruct every held-out pair.
    pub fn evaluate(&mut self) -> Result<Evaluation> {
        self.calibrate()?;
        let mut report = MetricReport::default();
        let mut l1 = 0.0;
        let mut count = 0usize;
        let idx: Vec<usize> = (0..self.val.len()).collect();
        for chunk in idx.chunks(self.config.batch_size) {
            let (zf, reference, target) = self.val.batch(chunk)?;
            let y = predict(&self.model, &mut self.store, &zf, &reference)?;
            for (j, _) in chunk.iter().enumerate() {
                let (yh, gt) = (y.index_axis0(j), target.index_axis0(j));
                let (yh, gt) = (yh.index_axis0(0), gt.index_axis0(0));
                l1 += yh.data().iter().zip(gt.data()).map(|(a, b)| (a - b).abs()).sum::<f64>();
                count += gt.len();
                report.push(Metrics::compute(&yh, &gt)?);
            }
        }
        Ok(Evaluation {
            loss: l1 / count as f64,
            report,
        })
    }

    /// Train up to `config.steps`, writing logs and checkpoints into `out`.
    pub fn run(&mut self, out: &Path) -> Result<RunSummary> {
        fs::create_dir_all(out)?;
        fs::write(out.join(CONFIG_FILE), self.config.to_text())?;
        let mut loss_log = fs::File::create(out.join(LOSS_LOG))?;
        writeln!(loss_log, "step\tloss")?;
        let mut metrics_log = fs::File::create(out.join(METRICS_LOG))?;
        writeln!(metrics_log, "{METRICS_HEADER}")?;
        let write_row = |log: &mut fs::File, step: u64, e: &Evaluation| -> Result<()> {
            let m = e.report.mean();
            writeln!(log, "{step}\t{}\t{}\t{}\t{}", e.loss, m.psnr, m.ssim, m.nmse)?;
            Ok(())
        };

        let baseline = self.val.baseline()?;
        let b = baseline.mean();
        log::info!(
            "zero-filled baseline: psnr {:.3} ssim {:.4} nmse {:.5}",
            b.psnr,
            b.ssim,
            b.nmse
        );
        let initial = self.evaluate()?;
        write_row(&mut metrics_log, self.step, &initial)?;
        log::info!("step {} {}", self.step, summary(&initial));

        let mut losses = Vec::new();
        let mut last = None;
        while self.step < self.config.steps {
            let loss = match self.train_step() {
                Ok(l) => l,
                Err(e @ Error::NonFinite(_)) => {
                    fs::write(out.join("nonfinite_dump.tsv"), self.norm_report())?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            losses.push(loss);
            writeln!(loss_log, "{}\t{loss}", self.step)?;
            if self.step % self.config.log_every == 0 || self.step == 1 {
                log::info!("step {} loss {loss:.6}", self.step);
            }
            let done = self.step == self.config.steps;
            let step = self.step;
            let every = |k: u64| k > 0 && step % k == 0;
            if every(self.config.eval_every) || done {
                let e = self.evaluate()?;
                write_row(&mut metrics_log, self.step, &e)?;
                log::info!("step {} {}", self.step, summary(&e));
                last = Some(e);
            }
            if every(self.config.checkpoint_every) && !done {
                self.checkpoint().save(checkpoint_path(out, Some(self.step)))?;
            }
        }
        self.checkpoint().save(checkpoint_path(out, None))?;
        Ok(RunSummary {
            losses,
            last: last.unwrap_or_else(|| initial.clone()),
            initial,
            baseline,
        })
    }
}

fn summary(e: &Evaluation) -> String {
    let m = e.report.mean();
    format!(
        "val loss {:.6} psnr {:.3} ssim {:.4} nmse {:.5}",
        e.loss, m.psnr, m.ssim, m.nmse
    )
}

/// `checkpoint_<step>.mmrc`, or the final `checkpoint.mmrc`.
pub fn checkpoint_path(out: &Path, step: Option<u64>) -> PathBuf {
    match step {
        Some(s) => out.join(format!("checkpoint_{s}.mmrc")),
        None => out.join(FINAL_CHECKPOINT),
    }
}
