//! Optimisation loop, learning-rate schedule, checkpointing and metrics.

mod data;
mod prefetch;

pub use data::{augment, collate, crop, hflip, position_rng, rot90, sample_patch, vflip, AugmentFlags, Batch};
pub use prefetch::{num_workers_from_env, NUM_WORKERS_ENV};

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use smgarn_autograd::{clip_global_norm, Element, Graph};

use crate::checkpoint::{epoch_file_name, Checkpoint};
use crate::config::{parse_flag, parse_value};
use crate::error::{Error, Result};
use crate::evaluation::{psnr, ssim};
use crate::model::{loss_graph, smgarn_forward, total_loss, LossBundle, ModelConfig, Smgarn};
use crate::synthesis::SnowSample;

const SHUFFLE_PURPOSE: u64 = 0;
pub(crate) const BATCH_PURPOSE: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_halve_every: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lambda: f64,
    pub augment: AugmentFlags,
    /// Global gradient-norm limit; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Evaluate PSNR/SSIM on the training images every this many epochs;
    /// 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 128,
            batch_size: 16,
            lr_init: 1e-4,
            lr_halve_every: 100,
            epochs: 100,
            seed: 0,
            lambda: 1.0,
            augment: AugmentFlags::default(),
            grad_clip: None,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.batch_size == 0 || self.lr_halve_every == 0 {
            return Err(Error::Config(
                "patch_size, batch_size and lr_halve_every must be >= 1".into(),
            ));
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return Err(Error::Config(format!("lr_init must be positive, got {}", self.lr_init)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting; `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        match key {
            "patch_size" => self.patch_size = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr_init" => self.lr_init = parse_value(key, value)?,
            "lr_halve_every" => self.lr_halve_every = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "hflip" => self.augment.hflip = parse_flag(key, value)?,
            "vflip" => self.augment.vflip = parse_flag(key, value)?,
            "rot90" => self.augment.rot90 = parse_flag(key, value)?,
            "grad_clip" => {
                self.grad_clip = match value {
                    "none" | "off" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "eval_every" => self.eval_every = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let s = |k: &str, v: String| (k.to_string(), v);
        vec![
            s("patch_size", self.patch_size.to_string()),
            s("batch_size", self.batch_size.to_string()),
            s("lr_init", self.lr_init.to_string()),
            s("lr_halve_every", self.lr_halve_every.to_string()),
            s("epochs", self.epochs.to_string()),
            s("seed", self.seed.to_string()),
            s("lambda", self.lambda.to_string()),
            s("hflip", self.augment.hflip.to_string()),
            s("vflip", self.augment.vflip.to_string()),
            s("rot90", self.augment.rot90.to_string()),
            s(
                "grad_clip",
                self.grad_clip.map_or("none".to_string(), |c| c.to_string()),
            ),
            s("eval_every", self.eval_every.to_string()),
        ]
    }
}

/// `lr_init * 2^-floor(epoch / lr_halve_every)` for a 0-based epoch.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = (epoch / cfg.lr_halve_every.max(1)) as i32;
    cfg.lr_init * 2f64.powi(-halvings)
}

/// One metrics row. Step rows leave `psnr`/`ssim` empty; evaluation rows
/// repeat the epoch's last step number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss_total: f64,
    pub loss_rec: f64,
    pub loss_mask: Option<f64>,
    pub lr: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

struct MetricsLog {
    writer: csv::Writer<File>,
}

impl MetricsLog {
    fn open(path: &Path) -> Result<Self> {
        let exists = path.is_file() && path.metadata().map(|m| m.len() > 0).unwrap_or(false);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let writer = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
        Ok(Self { writer })
    }

    fn write(&mut self, rec: &MetricsRecord) -> Result<()> {
        self.writer.serialize(rec)?;
        self.writer.flush().map_err(|e| Error::io(Path::new("metrics.csv"), e))
    }
}

pub const METRICS_FILE: &str = "metrics.csv";

/// Drives training of one model over an in-memory sample list.
pub struct Trainer<T: Element> {
    pub train: TrainConfig,
    pub state: Checkpoint<T>,
    pub metrics: Vec<MetricsRecord>,
    out_dir: Option<PathBuf>,
    log: Option<MetricsLog>,
    num_workers: usize,
}

impl<T: Element> Trainer<T> {
    /// Fresh model initialised from `train.seed`.
    pub fn new(model: ModelConfig, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let model = Smgarn::new(model, train.seed)?;
        Ok(Self::resume(Checkpoint::fresh(model), train))
    }

    /// Continues from a checkpoint; the next epoch is `state.epoch`.
    pub fn resume(state: Checkpoint<T>, train: TrainConfig) -> Self {
        Self {
            train,
            state,
            metrics: Vec::new(),
            out_dir: None,
            log: None,
            num_workers: 0,
        }
    }

    /// Writes per-epoch checkpoints and a per-step metrics CSV under `dir`.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.log = Some(MetricsLog::open(&dir.join(METRICS_FILE))?);
        self.out_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    /// Background batch preparation threads; 0 prepares batches inline.
    pub fn with_workers(mut self, n: usize) -> Self {
        self.num_workers = n;
        self
    }

    pub fn model(&self) -> &Smgarn<T> {
        &self.state.model
    }

    /// Whether batches must carry ground-truth masks: for mask supervision
    /// with `lambda > 0` or for ground-truth mask guidance.
    pub fn needs_mask(&self) -> bool {
        let case = self.state.model.config.guidance_case;
        (case.uses_mask_loss() && self.train.lambda > 0.0) || case.needs_gt_mask_input()
    }

    /// Rejects datasets that cannot drive this configuration.
    pub fn check_dataset(&self, samples: &[SnowSample]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        let p = self.train.patch_size;
        for s in samples {
            if s.clean.is_none() {
                return Err(Error::Dataset(format!("sample {} has no clean target (gt/)", s.id)));
            }
            if self.needs_mask() && s.mask.is_none() {
                return Err(Error::Dataset(format!(
                    "sample {} has no mask (mask/), required by {}",
                    s.id, self.state.model.config.guidance_case
                )));
            }
            let (h, w) = s.spatial();
            if p > h.min(w) {
                return Err(Error::Size(format!(
                    "sample {} is {h}x{w}, smaller than patch_size {p}",
                    s.id
                )));
            }
        }
        Ok(())
    }

    /// One optimisation step on a prepared batch.
    pub fn train_step(&mut self, batch: &Batch<T>, epoch: usize, lr: f64) -> Result<LossBundle> {
        let step = self.state.global_step;
        let cfg = &self.state.model.config;
        let (bundle, mut grads) = {
            let mut g = Graph::new(&self.state.model.params);
            let x = g.input(batch.snowy.clone().into_dyn());
            let y = g.input(batch.clean.clone().into_dyn());
            let m = batch.mask.as_ref().map(|m| g.input(m.clone().into_dyn()));
            let out = smgarn_forward(&mut g, cfg, x, m)?;
            let losses = loss_graph(&mut g, cfg, &out, y, m, self.train.lambda)?;
            let rec = g.scalar(losses.reconstruct)?.as_f64();
            let mask = losses.mask.map(|v| g.scalar(v).map(|s| s.as_f64())).transpose()?;
            let bundle = total_loss(rec, mask, self.train.lambda)?;
            let total = g.scalar(losses.total)?.as_f64();
            if !total.is_finite() {
                return Err(Error::NonFinite { epoch, step });
            }
            (bundle, g.backward(losses.total)?)
        };
        let norm = match self.train.grad_clip {
            Some(c) => clip_global_norm(&mut grads, c),
            None => grads.global_norm(),
        };
        if !norm.is_finite() {
            return Err(Error::NonFinite { epoch, step });
        }
        self.state.optimizer.update(&mut self.state.model.params, &grads, lr);
        self.state.global_step += 1;
        Ok(bundle)
    }

    /// Number of steps in one pass over `n` samples.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.train.batch_size)
    }

    /// Sample indices of every step of `epoch`.
    pub fn epoch_plan(&self, epoch: usize, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut position_rng(self.train.seed, epoch as u64, 0, SHUFFLE_PURPOSE));
        order.chunks(self.train.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Runs the remaining epochs up to `train.epochs`.
    pub fn run(&mut self, samples: &[SnowSample]) -> Result<()> {
        self.check_dataset(samples)?;
        while self.state.epoch < self.train.epochs {
            self.run_epoch(samples)?;
        }
        Ok(())
    }

    /// Trains epoch `state.epoch`, then logs and checkpoints.
    pub fn run_epoch(&mut self, samples: &[SnowSample]) -> Result<()> {
        let epoch = self.state.epoch;
        let lr = lr_schedule(epoch, &self.train);
        let plan = self.epoch_plan(epoch, samples.len());
        let ctx = prefetch::BatchContext {
            samples,
            plan: &plan,
            seed: self.train.seed,
            epoch,
            patch_size: self.train.patch_size,
            augment: self.train.augment,
            with_mask: self.needs_mask(),
            mask_channels: self.state.model.config.mask_channels,
        };
        let num_workers = self.num_workers;
        let mut last = None;
        prefetch::for_each_batch::<T, _>(&ctx, num_workers, |batch| {
            let bundle = self.train_step(&batch?, epoch, lr)?;
            let rec = MetricsRecord {
                epoch,
                step: self.state.global_step,
                loss_total: bundle.total,
                loss_rec: bundle.reconstruct,
                loss_mask: bundle.mask,
                lr,
                psnr: None,
                ssim: None,
            };
            self.record(rec.clone())?;
            last = Some(rec);
            Ok(())
        })?;
        self.state.epoch += 1;
        self.state.train = Some(self.train.clone());

        if self.train.eval_every > 0 && self.state.epoch.is_multiple_of(self.train.eval_every) {
            let (p, s) = self.evaluate_on(samples)?;
            if let Some(mut rec) = last {
                rec.psnr = Some(p);
                rec.ssim = Some(s);
                self.record(rec)?;
            }
        }
        if let Some(dir) = &self.out_dir {
            self.state.save(&dir.join(epoch_file_name(self.state.epoch)))?;
        }
        Ok(())
    }

    fn record(&mut self, rec: MetricsRecord) -> Result<()> {
        if let Some(log) = &mut self.log {
            log.write(&rec)?;
        }
        self.metrics.push(rec);
        Ok(())
    }

    /// Mean PSNR/SSIM of full-resolution predictions on `samples`.
    pub fn evaluate_on(&self, samples: &[SnowSample]) -> Result<(f64, f64)> {
        let (mut p, mut s, mut n) = (0.0, 0.0, 0usize);
        for sample in samples {
            let Some(clean) = &sample.clean else { continue };
            let pred = self.state.model.infer(&sample.snowy, sample.mask.as_ref())?;
            p += psnr(&pred.image, clean)?;
            s += ssim(&pred.image, clean)?;
            n += 1;
        }
        if n == 0 {
            return Err(Error::Dataset("no samples with clean targets to evaluate".into()));
        }
        Ok((p / n as f64, s / n as f64))
    }
}

/// Trains from scratch without touching the filesystem.
pub fn train_loop<T: Element>(
    model: &ModelConfig,
    train: &TrainConfig,
    samples: &[SnowSample],
) -> Result<(Checkpoint<T>, Vec<MetricsRecord>)> {
    let mut t = Trainer::<T>::new(model.clone(), train.clone())?;
    t.run(samples)?;
    Ok((t.state, t.metrics))
}
