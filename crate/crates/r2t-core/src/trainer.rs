//! The training loop: per-epoch re-masking, cosine schedule, Adam with
//! global-norm clipping, fixed-mask validation, early stopping with weight
//! restore, checkpointing, and history logging.
//!
//! Everything random is drawn from streams derived from (seed, purpose,
//! epoch, index), so a run is reproducible regardless of thread count;
//! `reproducible_mode` additionally zeroes wall-clock fields so emitted
//! files are byte-identical across runs.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, CheckpointData, Dataset, EpochStats, RunManifest, TrainHistory};
use crate::nn::{
    clip_global_norm, combine_breakdowns, cosine_lr, training_loss_and_grad, AdamConfig,
    AdamState, LossBreakdown, Model, ModelConfig, ModelWeights, TrainingBatch,
};
use crate::preprocess::mask_input;
use crate::rng::{derive_rng, StreamKind};
use crate::symbolic::ParamCodec;
use crate::synth::SequenceSet;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Per-epoch masking fraction is drawn uniformly from this range.
    pub mask_fraction: (f64, f64),
    /// Fixed fraction for the validation mask, seeded once.
    pub val_mask_fraction: f64,
    pub val_split: f64,
    pub seed: u64,
    pub reproducible_mode: bool,
    pub lr0: f64,
    pub lr_min: f64,
    pub clip_norm: f64,
    pub adam: AdamConfig,
    /// Save a checkpoint every N epochs into the output directory; 0 = off.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            patience: 100,
            batch_size: 256,
            mask_fraction: (0.1, 0.3),
            val_mask_fraction: 0.2,
            val_split: 0.1,
            seed: 0,
            reproducible_mode: false,
            lr0: crate::nn::DEFAULT_LR0,
            lr_min: crate::nn::DEFAULT_LR_MIN,
            clip_norm: 1.0,
            adam: AdamConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience > self.epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.val_split > 0.0 && self.val_split < 0.5) {
            return Err(Error::Config(format!(
                "val_split {} must lie in (0, 0.5)",
                self.val_split
            )));
        }
        let (lo, hi) = self.mask_fraction;
        if !(0.0..=0.5).contains(&lo) || !(0.0..=0.5).contains(&hi) || lo > hi {
            return Err(Error::Config(format!(
                "mask_fraction ({lo}, {hi}) must be an ordered range within [0, 0.5]"
            )));
        }
        if !(0.0..=0.5).contains(&self.val_mask_fraction) {
            return Err(Error::Config(
                "val_mask_fraction must lie in [0, 0.5]".into(),
            ));
        }
        if !(self.lr0 > 0.0 && self.lr_min > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config(
                "lr0, lr_min and clip_norm must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything a finished run hands back.
pub struct TrainReport {
    /// Weights from the best-validation epoch.
    pub weights: ModelWeights<f32>,
    pub history: TrainHistory,
    pub best_val_loss: f64,
    pub best_val_breakdown: Option<LossBreakdown>,
    pub manifest: RunManifest,
}

/// State threaded through epochs; checkpointable.
struct LoopState {
    weights: ModelWeights<f32>,
    adam: AdamState<f32>,
    best_weights: ModelWeights<f32>,
    best_val: f64,
    best_epoch: usize,
    start_epoch: usize,
}

/// Train from scratch.
pub fn train(
    dataset: &Dataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    let weights = ModelWeights::init(model_config, config.seed);
    let state = LoopState {
        best_weights: weights.clone(),
        adam: AdamState::new(model_config),
        weights,
        best_val: f64::INFINITY,
        best_epoch: 0,
        start_epoch: 0,
    };
    run_epochs(dataset, model_config, config, out_dir, state)
}

/// Resume from a checkpoint; the cosine schedule picks up at the saved epoch.
pub fn resume(
    dataset: &Dataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
    checkpoint: &CheckpointData,
) -> Result<TrainReport> {
    let weights = ModelWeights::from_named(model_config, &checkpoint.weights)?;
    let mut adam = AdamState::new(model_config);
    adam.m = ModelWeights::from_named(model_config, &checkpoint.adam_m)?;
    adam.v = ModelWeights::from_named(model_config, &checkpoint.adam_v)?;
    adam.step = checkpoint.adam_step;
    let state = LoopState {
        best_weights: ModelWeights::from_named(model_config, &checkpoint.best_weights)?,
        adam,
        weights,
        best_val: checkpoint.best_val_loss,
        best_epoch: checkpoint.best_epoch as usize,
        start_epoch: checkpoint.epoch as usize,
    };
    run_epochs(dataset, model_config, config, out_dir, state)
}

fn run_epochs(
    dataset: &Dataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
    mut state: LoopState,
) -> Result<TrainReport> {
    model_config.validate()?;
    config.validate()?;
    if dataset.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "training needs at least 2 sequences, got {}",
            dataset.len()
        )));
    }
    let n = dataset.len();
    let n_val = ((n as f64 * config.val_split).round() as usize).clamp(1, n - 1);
    let n_train = n - n_val;
    let codec = ParamCodec::default();
    let model = Model::<f32>::new(model_config.clone())?;
    let mut history = TrainHistory::default();

    // validation batches are masked once with seeded streams, so the early
    // stopping signal is low-variance across epochs
    let val_records: Vec<&SequenceSet> = dataset.records[n_train..].iter().collect();
    let val_batches = build_masked_batches(
        &val_records,
        config.batch_size,
        &codec,
        |j| derive_rng(config.seed, &[StreamKind::ValMask as u64, j as u64]),
        config.val_mask_fraction,
    )?;

    let seed = config.seed;
    for epoch in state.start_epoch..config.epochs {
        let t0 = Instant::now();
        let lr = cosine_lr(epoch, config.epochs, config.lr0, config.lr_min);
        let mut epoch_rng = derive_rng(seed, &[StreamKind::Epoch as u64, epoch as u64]);
        let (mf_lo, mf_hi) = config.mask_fraction;
        let fraction = mf_lo + epoch_rng.random::<f64>() * (mf_hi - mf_lo);

        let mut order: Vec<usize> = (0..n_train).collect();
        let mut shuffle_rng = derive_rng(seed, &[StreamKind::Shuffle as u64, epoch as u64]);
        order.shuffle(&mut shuffle_rng);

        let mut train_sum = 0.0;
        let mut train_count = 0usize;
        for (batch_i, chunk) in order.chunks(config.batch_size).enumerate() {
            let records: Vec<&SequenceSet> =
                chunk.iter().map(|&i| &dataset.records[i]).collect();
            let mut blocks = Vec::with_capacity(records.len());
            for (&i, rec) in chunk.iter().zip(records.iter()) {
                let mut block = rec.input.clone();
                let mut rng =
                    derive_rng(seed, &[StreamKind::Mask as u64, epoch as u64, i as u64]);
                mask_input(&mut block, fraction, &mut rng)?;
                blocks.push(block);
            }
            let batch = TrainingBatch::<f32>::assemble(&records, Some(&blocks), &codec)?;
            let mut dropout_rng = derive_rng(
                seed,
                &[StreamKind::Dropout as u64, epoch as u64, batch_i as u64],
            );
            let fwd = model
                .forward(&state.weights, &batch.x, Some(&mut dropout_rng))
                .map_err(|e| training_err(epoch, batch_i, e))?;
            let out = training_loss_and_grad(&fwd.y, &batch, &codec, &Default::default())
                .map_err(|e| training_err(epoch, batch_i, e))?;
            if !out.breakdown.total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: batch_i,
                    reason: format!("non-finite loss {}", out.breakdown.total),
                });
            }
            let mut grads = model
                .backward(&state.weights, &fwd, &out.dy)
                .map_err(|e| training_err(epoch, batch_i, e))?;
            clip_global_norm(&mut grads, config.clip_norm);
            state
                .adam
                .step(&mut state.weights, &grads, &config.adam, lr);
            train_sum += out.breakdown.total * records.len() as f64;
            train_count += records.len();
        }
        let train_loss = train_sum / train_count.max(1) as f64;

        let val_breakdown = validation_loss(&model, &state.weights, &val_batches, &codec)?;
        let val_loss = val_breakdown.total;
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: 0,
                reason: format!("non-finite validation loss {val_loss}"),
            });
        }
        if val_loss < state.best_val {
            state.best_val = val_loss;
            state.best_epoch = epoch;
            state.best_weights = state.weights.clone();
        }
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr,
            wall_time_s: if config.reproducible_mode {
                0.0
            } else {
                t0.elapsed().as_secs_f64()
            },
        });

        if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
            if let Some(dir) = out_dir {
                save_state(dir, &state, epoch)?;
            }
        }
        if config.patience > 0 && epoch - state.best_epoch >= config.patience {
            break;
        }
    }

    history.best_epoch = state.best_epoch;
    let best_val_breakdown = if state.best_val.is_finite() {
        Some(validation_loss(&model, &state.best_weights, &val_batches, &codec)?)
    } else {
        None
    };

    let mut manifest = RunManifest::new("train");
    manifest.config = serde_json::to_value(config)
        .map_err(|e| Error::InvalidInput(format!("config serialization: {e}")))?;
    manifest.seeds.insert("train".into(), config.seed);
    manifest
        .metrics
        .insert("best_epoch".into(), state.best_epoch as f64);
    manifest
        .metrics
        .insert("best_val_loss".into(), state.best_val);
    manifest
        .metrics
        .insert("epochs_run".into(), history.epochs.len() as f64);
    manifest.metrics.insert("n_train".into(), n_train as f64);
    manifest.metrics.insert("n_val".into(), n_val as f64);

    Ok(TrainReport {
        weights: state.best_weights,
        history,
        best_val_loss: state.best_val,
        best_val_breakdown,
        manifest,
    })
}

fn training_err(epoch: usize, batch: usize, e: Error) -> Error {
    Error::Training {
        epoch,
        batch,
        reason: e.to_string(),
    }
}

fn build_masked_batches(
    records: &[&SequenceSet],
    batch_size: usize,
    codec: &ParamCodec,
    mut rng_for: impl FnMut(usize) -> rand_chacha::ChaCha8Rng,
    fraction: f64,
) -> Result<Vec<TrainingBatch<f32>>> {
    let mut batches = Vec::new();
    for (chunk_i, chunk) in records.chunks(batch_size).enumerate() {
        let mut blocks = Vec::with_capacity(chunk.len());
        for (j, rec) in chunk.iter().enumerate() {
            let mut block = rec.input.clone();
            let mut rng = rng_for(chunk_i * batch_size + j);
            mask_input(&mut block, fraction, &mut rng)?;
            blocks.push(block);
        }
        batches.push(TrainingBatch::assemble(chunk, Some(&blocks), codec)?);
    }
    Ok(batches)
}

/// Pooled validation loss over pre-built batches (dropout disabled).
fn validation_loss(
    model: &Model<f32>,
    weights: &ModelWeights<f32>,
    batches: &[TrainingBatch<f32>],
    codec: &ParamCodec,
) -> Result<LossBreakdown> {
    let mut parts = Vec::with_capacity(batches.len());
    for batch in batches {
        let fwd = model.forward(weights, &batch.x, None)?;
        let out = training_loss_and_grad(&fwd.y, batch, codec, &Default::default())?;
        parts.push((out.breakdown, batch.batch_size()));
    }
    combine_breakdowns(&parts)
        .ok_or_else(|| Error::InvalidInput("validation set is empty".into()))
}

/// Inference over records in evaluation mode: (N, 9) normalized predictions.
pub fn predict(
    model: &Model<f32>,
    weights: &ModelWeights<f32>,
    records: &[&SequenceSet],
    batch_size: usize,
    codec: &ParamCodec,
) -> Result<Array2<f32>> {
    let mut out = Array2::zeros((records.len(), crate::symbolic::PARAM_COUNT));
    let mut row = 0;
    for chunk in records.chunks(batch_size.max(1)) {
        let batch = TrainingBatch::<f32>::assemble(chunk, None, codec)?;
        let fwd = model.forward(weights, &batch.x, None)?;
        for r in 0..chunk.len() {
            for j in 0..crate::symbolic::PARAM_COUNT {
                out[[row + r, j]] = fwd.y[[r, j]];
            }
        }
        row += chunk.len();
    }
    Ok(out)
}

fn save_state(dir: &Path, state: &LoopState, epoch: usize) -> Result<()> {
    let data = CheckpointData {
        epoch: (epoch + 1) as u64,
        adam_step: state.adam.step,
        best_epoch: state.best_epoch as u64,
        best_val_loss: state.best_val,
        weights: state.weights.to_named(),
        adam_m: state.adam.m.to_named(),
        adam_v: state.adam.v.to_named(),
        best_weights: state.best_weights.to_named(),
    };
    io::save_checkpoint(&dir.join(format!("checkpoint_{epoch:05}.r2tc")), &data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::GenConfig;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_heads: 4,
            ffn_dim: 16,
            embed_hidden: 16,
            ..ModelConfig::default()
        }
    }

    fn tiny_dataset(n: u64, seed: u64) -> Dataset {
        let records = crate::synth::generate_block(seed, 0..n, &GenConfig::default()).unwrap();
        Dataset { records }
    }

    fn fast_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            patience: epochs.min(100),
            batch_size: 8,
            seed: 3,
            reproducible_mode: true,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_weights_and_empty_history() {
        let ds = tiny_dataset(8, 1);
        let cfg = TrainConfig {
            epochs: 0,
            patience: 0,
            ..fast_config(0)
        };
        let report = train(&ds, &tiny_model(), &cfg, None).unwrap();
        assert!(report.history.epochs.is_empty());
        let init = ModelWeights::<f32>::init(&tiny_model(), cfg.seed);
        assert_eq!(report.weights, init);
    }

    #[test]
    fn loss_decreases_on_tiny_run() {
        let ds = tiny_dataset(32, 2);
        let report = train(&ds, &tiny_model(), &fast_config(8), None).unwrap();
        assert_eq!(report.history.epochs.len(), 8);
        let first = report.history.epochs.first().unwrap().train_loss;
        let last = report.history.epochs.last().unwrap().train_loss;
        assert!(
            last < first,
            "training loss did not decrease: {first} -> {last}"
        );
    }

    #[test]
    fn best_epoch_is_argmin_of_validation() {
        let ds = tiny_dataset(32, 4);
        let report = train(&ds, &tiny_model(), &fast_config(6), None).unwrap();
        let argmin = report
            .history
            .epochs
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .unwrap()
            .epoch;
        assert_eq!(report.history.best_epoch, argmin);
        assert_eq!(
            report.best_val_loss,
            report.history.epochs[argmin].val_loss
        );
    }

    #[test]
    fn reproducible_runs_are_identical() {
        let ds = tiny_dataset(24, 5);
        let a = train(&ds, &tiny_model(), &fast_config(4), None).unwrap();
        let b = train(&ds, &tiny_model(), &fast_config(4), None).unwrap();
        assert_eq!(a.history.epochs, b.history.epochs);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn masks_differ_between_epochs() {
        let ds = tiny_dataset(4, 6);
        let rec = &ds.records[0];
        let mask_at = |epoch: u64| {
            let mut block = rec.input.clone();
            let mut rng = derive_rng(9, &[StreamKind::Mask as u64, epoch, 0]);
            mask_input(&mut block, 0.3, &mut rng).unwrap();
            block
        };
        assert_ne!(mask_at(0), mask_at(1));
    }

    #[test]
    fn patience_one_with_non_improving_validation_stops_after_two_epochs() {
        // a negligible learning rate keeps the validation loss from ever
        // improving on epoch 1, so patience 1 stops the run at two epochs
        // and the first epoch's weights are restored
        let ds = tiny_dataset(16, 7);
        let cfg = TrainConfig {
            epochs: 50,
            patience: 1,
            lr0: 1e-12,
            lr_min: 1e-13,
            batch_size: 8,
            seed: 2,
            reproducible_mode: true,
            ..TrainConfig::default()
        };
        let report = train(&ds, &tiny_model(), &cfg, None).unwrap();
        assert_eq!(report.history.epochs.len(), 2);
        assert_eq!(report.history.best_epoch, 0);
    }

    #[test]
    fn too_small_dataset_is_rejected() {
        let ds = tiny_dataset(1, 8);
        assert!(train(&ds, &tiny_model(), &fast_config(1), None).is_err());
    }

    #[test]
    fn checkpoint_resume_continues_schedule() {
        let ds = tiny_dataset(16, 9);
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            checkpoint_every: 2,
            ..fast_config(4)
        };
        let full = train(&ds, &tiny_model(), &cfg, Some(dir.path())).unwrap();
        let ckpt = io::load_checkpoint(&dir.path().join("checkpoint_00001.r2tc")).unwrap();
        assert_eq!(ckpt.epoch, 2);
        let resumed = resume(&ds, &tiny_model(), &cfg, None, &ckpt).unwrap();
        // resumed history covers epochs 2..4 with the same lr values
        assert_eq!(resumed.history.epochs.len(), 2);
        assert_eq!(resumed.history.epochs[0].epoch, 2);
        assert_eq!(
            resumed.history.epochs[0].lr,
            cosine_lr(2, cfg.epochs, cfg.lr0, cfg.lr_min)
        );
        assert_eq!(
            resumed.history.epochs[0].lr,
            full.history.epochs[2].lr
        );
        // identical streams ⇒ identical continued training
        assert_eq!(resumed.history.epochs[0].val_loss, full.history.epochs[2].val_loss);
        assert_eq!(resumed.weights, full.weights);
    }
}
