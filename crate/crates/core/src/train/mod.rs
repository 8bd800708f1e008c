//! Adam optimisation on the step schedule, the training loop, evaluation and
//! checkpoint persistence.

mod adam;
mod checkpoint;
mod config;
mod eval;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, Record, MAGIC, VERSION};
pub use config::{lr_at, TrainConfig};
pub use eval::{
    clamp_unit, crop_to, derain_image, evaluate, predict, reflect_pad, score, score_pair, EvalReport, EvalRow,
    Estimator, Prediction, REFERENCE_RESULTS,
};

use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{to_tensor, Dataset, ImagePair};
use crate::error::{Error, Result};
use crate::loss::loss;
use crate::metrics::{mean_quality, quality_per_item, Colorspace, Quality};
use crate::nn::{Ctx, JdNet};
use crate::seed::{derive, Stream};
use crate::tensor::kernels::ssim::SsimConfig;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LAST_CHECKPOINT: &str = "last.jdn";

pub fn checkpoint_name(epoch: u32) -> String {
    format!("epoch-{epoch:05}.jdn")
}

/// One line of the metrics log. Quality fields are absent on epochs without evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub loss: f64,
    pub ssim: Option<f64>,
    pub psnr: Option<f64>,
    pub lr: f64,
}

/// Network, parameters and optimizer state of a run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: JdNet,
    pub store: ParamStore<f32>,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: u32,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, Stream::Init, 0));
        let (net, store) = JdNet::build::<f32, _>(&mut rng, cfg.net.clone())?;
        let adam = AdamState::new(&store);
        Ok(Trainer { cfg, net, store, adam, epoch: 0 })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        let (net, store, adam) = ck.restore()?;
        Ok(Trainer { cfg: ck.config.clone(), net, store, adam, epoch: ck.epoch })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.store, &self.adam, self.epoch, &self.cfg)
    }

    /// One optimizer step on a batch; returns the loss before the update. On error the
    /// parameters, optimizer state and BN running statistics are left as they were.
    pub fn step(&mut self, o: &Tensor<f32>, b: &Tensor<f32>, lr: f64) -> Result<f64> {
        let buffers: Vec<(ParamId, Vec<f32>)> = self
            .store
            .ids()
            .filter(|&id| !self.store.entry(id).trainable)
            .map(|id| (id, self.store.get(id).data().to_vec()))
            .collect();
        let result = self.try_step(o, b, lr);
        if result.is_err() {
            for (id, values) in buffers {
                self.store.set_values(id, &values)?;
            }
        }
        result
    }

    fn try_step(&mut self, o: &Tensor<f32>, b: &Tensor<f32>, lr: f64) -> Result<f64> {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &mut self.store, true);
        let o = ctx.graph.input(o.clone());
        let b = ctx.graph.input(b.clone());
        let out = self.net.forward(&mut ctx, o)?;
        let l = loss(&mut g, self.cfg.loss, out.b_hat, b, &SsimConfig::default())?;
        let value = g.value(l).item() as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite { name: format!("{} loss", self.cfg.loss) });
        }
        let grads = g.backward(l)?;
        self.store.zero_grads();
        grads.apply_to(&mut self.store);
        self.adam.step(&mut self.store, lr)?;
        Ok(value)
    }

    /// Runs the next epoch and returns its mean batch loss and learning rate.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<(f64, f64)> {
        let epoch = self.epoch + 1;
        let lr = lr_at(epoch, &self.cfg)?;
        let batches = data.epoch_batches::<f32>(self.cfg.seed, epoch as u64, self.cfg.batch_size, self.cfg.crop)?;
        let mut total = 0.0;
        for (o, b) in &batches {
            total += self.step(o, b, lr)?;
        }
        self.epoch = epoch;
        Ok((total / batches.len() as f64, lr))
    }

    /// Inference-mode quality on `pairs`, each centre-cropped to the training crop size
    /// when larger; outputs are clamped to `[0, 1]`.
    pub fn quality(&mut self, pairs: &[ImagePair]) -> Result<Quality> {
        let crop = self.cfg.crop;
        let cropped = pairs
            .iter()
            .map(|p| {
                let (w, h) = (crop.min(p.width()), crop.min(p.height()));
                let (x, y) = ((p.width() - w) / 2, (p.height() - h) / 2);
                Ok(ImagePair {
                    id: p.id.clone(),
                    rainy: p.rainy.crop(x, y, w, h)?,
                    clean: p.clean.crop(x, y, w, h)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut items = Vec::with_capacity(cropped.len());
        for chunk in cropped.chunks(self.cfg.batch_size) {
            let (o, b) = to_tensor::<f32>(chunk)?;
            let p = predict(&self.net, &mut self.store, &o)?;
            items.extend(quality_per_item(&clamp_unit(&p.b_hat), &b, Colorspace::Rgb, &SsimConfig::default())?);
        }
        Ok(mean_quality(&items))
    }
}

/// Where a run writes its log and checkpoints.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path)?;
        Ok(RunDir { path: path.to_path_buf() })
    }

    pub fn metrics(&self) -> PathBuf {
        self.path.join(METRICS_FILE)
    }

    pub fn last(&self) -> PathBuf {
        self.path.join(LAST_CHECKPOINT)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainSummary {
    pub epochs_run: u32,
    pub last: Option<EpochLog>,
    pub stopped_early: bool,
}

/// Trains from `trainer.epoch + 1` up to the configured epoch count. After each
/// epoch the log line is appended and `last.jdn` rewritten; numbered checkpoints are
/// kept every `checkpoint_every` epochs. `on_epoch` returning `false` stops the run.
/// A non-finite loss or gradient stops the run with an error and leaves the
/// checkpoints of the last completed epoch in place.
pub fn train(
    trainer: &mut Trainer,
    data: &Dataset,
    out: Option<&RunDir>,
    mut on_epoch: impl FnMut(&EpochLog) -> bool,
) -> Result<TrainSummary> {
    trainer.cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut log = match out {
        Some(dir) => Some(BufWriter::new(
            OpenOptions::new().create(true).append(true).open(dir.metrics())?,
        )),
        None => None,
    };
    let sample: Vec<ImagePair> = data.pairs.iter().take(trainer.cfg.eval_sample).cloned().collect();
    let mut summary = TrainSummary::default();
    while trainer.epoch < trainer.cfg.epochs {
        let (loss, lr) = trainer.run_epoch(data)?;
        let epoch = trainer.epoch;
        let evaluate = !sample.is_empty() && (epoch.is_multiple_of(trainer.cfg.eval_every) || epoch == trainer.cfg.epochs);
        let q = if evaluate { Some(trainer.quality(&sample)?) } else { None };
        let entry = EpochLog { epoch, loss, ssim: q.map(|q| q.ssim), psnr: q.map(|q| q.psnr), lr };
        if let Some(w) = &mut log {
            serde_json::to_writer(&mut *w, &entry)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        if let Some(dir) = out {
            let ck = trainer.checkpoint();
            ck.save(&dir.last())?;
            if trainer.cfg.checkpoint_every > 0 && epoch.is_multiple_of(trainer.cfg.checkpoint_every) {
                ck.save(&dir.path.join(checkpoint_name(epoch)))?;
            }
        }
        summary.epochs_run += 1;
        let keep_going = on_epoch(&entry);
        summary.last = Some(entry);
        if !keep_going {
            summary.stopped_early = trainer.epoch < trainer.cfg.epochs;
            break;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RainSynthConfig;
    use crate::nn::NetConfig;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            milestones: vec![],
            crop: 16,
            batch_size: 2,
            net: NetConfig { units: 1, channels: 4, ..NetConfig::tiny() },
            ..Default::default()
        }
    }

    #[test]
    fn loss_is_finite_and_epochs_advance() {
        let data = Dataset::synthetic(3, 20, 20, &RainSynthConfig::default()).unwrap();
        let mut t = Trainer::new(small_cfg()).unwrap();
        let s = train(&mut t, &data, None, |log| {
            assert!(log.loss.is_finite() && log.ssim.is_some());
            true
        })
        .unwrap();
        assert_eq!(s.epochs_run, 3);
        assert_eq!(t.epoch, 3);
        assert_eq!(t.adam.t, 6);
    }

    #[test]
    fn early_stop() {
        let data = Dataset::synthetic(2, 16, 16, &RainSynthConfig::default()).unwrap();
        let mut t = Trainer::new(small_cfg()).unwrap();
        let s = train(&mut t, &data, None, |_| false).unwrap();
        assert!(s.stopped_early);
        assert_eq!(t.epoch, 1);
    }
}
