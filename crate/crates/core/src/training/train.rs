use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{mix_seed, TrainConfig};
use super::optim::Adam;
use crate::error::{invalid, Result};
use crate::losses::evaluate_objective;
use crate::reconstructor::{ModelCheckpoint, UNetReconstructor};
use crate::scalar::Scalar;
use crate::sensing::{MeasurementBatch, SensingOperator};

const STREAM_INIT: u64 = 1;
const STREAM_ORDER: u64 = 2;
const STREAM_SHIFTS: u64 = 3;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_mc: Option<f64>,
    pub loss_ei: Option<f64>,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// JSONL sink, one [`StepRecord`] per optimizer step.
    pub log: Option<&'a mut dyn Write>,
    /// Directory for per-epoch checkpoints `epoch_{k}.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
}

pub struct TrainOutcome<T> {
    pub model: UNetReconstructor<T>,
    pub history: Vec<StepRecord>,
    pub epoch_means: Vec<f64>,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> ModelCheckpoint<T> {
        ModelCheckpoint::from_model(&self.model, &cfg.digest(), self.epoch_means.len())
    }
}

/// Freshly initialized network for `cfg` on `height x width` images.
pub fn initial_model<T: Scalar>(cfg: &TrainConfig, height: usize, width: usize) -> Result<UNetReconstructor<T>> {
    UNetReconstructor::new(cfg.model_config(height, width), mix_seed(cfg.seed, STREAM_INIT))
}

/// Trains a reconstructor on `data` under `cfg`.
///
/// Self-supervised regimes never see ground truth: it is dropped from the
/// batch before the first step. Supervised training without truths fails.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    data: &MeasurementBatch<T>,
    op: &SensingOperator<T>,
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let data = if cfg.regime.needs_truth() {
        if !data.has_truths() {
            return Err(invalid("supervised training needs ground-truth images"));
        }
        data.clone()
    } else {
        data.without_truths()
    };
    let mut model = initial_model::<T>(cfg, op.height(), op.width())?;
    let mut adam = Adam::<T>::new(model.params().len(), cfg.learning_rate);
    let objective = cfg.objective();
    let mut shift_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_SHIFTS));
    if let Some(dir) = &opts.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }

    let mut history = Vec::new();
    let mut epoch_means = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order_rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(cfg.seed, STREAM_ORDER), epoch as u64));
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let (value, grads) = evaluate_objective(objective, &batch, &model, op, &mut shift_rng, true)?;
            let grads = grads.expect("gradient requested");
            if !value.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(invalid(format!("non-finite loss or gradient at step {step}")));
            }
            adam.step(model.params_mut(), &grads);
            let record = StepRecord {
                step,
                epoch,
                loss_total: value.total.to_f64_lossy(),
                loss_mc: value.mc.map(|v| v.to_f64_lossy()),
                loss_ei: value.ei.map(|v| v.to_f64_lossy()),
            };
            if let Some(log) = opts.log.as_deref_mut() {
                serde_json::to_writer(&mut *log, &record)?;
                log.write_all(b"\n")?;
            }
            sum += record.loss_total;
            batches += 1;
            history.push(record);
            step += 1;
        }
        if let Some(log) = opts.log.as_deref_mut() {
            log.flush()?;
        }
        let mean = sum / batches as f64;
        log::info!("{} epoch {}: mean loss {mean:.6}", cfg.regime.name(), epoch + 1);
        epoch_means.push(mean);
        if let Some(dir) = &opts.checkpoint_dir {
            ModelCheckpoint::from_model(&model, &cfg.digest(), epoch + 1).save(dir.join(format!("epoch_{}.ckpt", epoch + 1)))?;
        }
    }
    Ok(TrainOutcome { model, history, epoch_means })
}

/// Opens `path` for appending, creating parent directories.
pub fn open_log(path: &Path) -> Result<fs::File> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}
