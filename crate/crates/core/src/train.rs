//! Siamese training loop: seeded shuffling, Adam with warmup and per-epoch decay,
//! validation-AUC early stopping, checkpoints and a JSON-lines history.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError, CheckpointMeta};
use crate::dataset::{GopRef, PairSample};
use crate::eval::{self, EvalError};
use crate::gop_store::{assemble_model_input, load_record, record_dir, GopStoreError, InputShape, ModelInput};
use crate::model::{pair_loss_grad, similarity, H4vdm, ModelError};
use crate::nn::{lr_at, Adam, AdamConfig, LrSchedule, NnError, Params};

pub const HISTORY_FILE: &str = "history.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// GOPs per gradient chunk. Chunks are reduced in a fixed order, so the summed
/// gradient does not depend on how many threads computed them.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("data unavailable: {0}")]
    DataUnavailable(String),
    #[error("non-finite loss in epoch {epoch}, batch {batch}; batch written to {}", dump.display())]
    NonFiniteLoss { epoch: usize, batch: usize, dump: PathBuf },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError {
    let path = path.display().to_string();
    move |source| TrainError::Io { path, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub decay: f64,
    /// Stop once this many consecutive epochs fail to improve validation AUC. 0 and 1
    /// both stop at the first non-improving epoch.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Serial gradient computation. Results are identical either way; this only
    /// rules out the thread pool.
    #[serde(default)]
    pub deterministic: bool,
    /// Write `epoch_<n>.ckpt` after every epoch.
    #[serde(default = "yes")]
    pub epoch_checkpoints: bool,
}

fn yes() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 72,
            warmup_epochs: 5,
            base_lr: 8e-6,
            decay: 0.97,
            patience: 5,
            max_epochs: 100,
            seed: 0,
            adam: AdamConfig::default(),
            deterministic: false,
            epoch_checkpoints: true,
        }
    }
}

impl TrainConfig {
    /// Settings for the tiny preset: the small model needs a larger step and a short
    /// warmup to move within a handful of epochs.
    pub fn tiny() -> Self {
        Self {
            batch_size: 24,
            warmup_epochs: 1,
            base_lr: 1e-3,
            decay: 0.9,
            patience: 3,
            max_epochs: 10,
            ..Self::default()
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            warmup_epochs: self.warmup_epochs,
            decay: self.decay,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(TrainError::Config(format!("decay {} outside (0, 1]", self.decay)));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(TrainError::Config(format!("base_lr {} must be positive", self.base_lr)));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Preloaded model inputs keyed by GOP.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    inputs: BTreeMap<GopRef, ModelInput>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, gop: GopRef, input: ModelInput) {
        self.inputs.insert(gop, input);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn get(&self, gop: &GopRef) -> Result<&ModelInput, TrainError> {
        self.inputs
            .get(gop)
            .ok_or_else(|| TrainError::DataUnavailable(format!("{}/{}/gop {}", gop.device, gop.video, gop.gop)))
    }

    /// Loads every GOP referenced by `pairs` from a record store.
    pub fn load(store: &Path, pairs: &[PairSample], shape: &InputShape) -> Result<Self, GopStoreError> {
        let refs: BTreeSet<&GopRef> = pairs.iter().flat_map(|p| [&p.a, &p.b]).collect();
        let loaded: Result<Vec<_>, GopStoreError> = refs
            .into_par_iter()
            .map(|r| {
                let rec = load_record(&record_dir(store, &r.device, &r.video, r.gop), shape)?;
                Ok((r.clone(), assemble_model_input(&rec, shape)?))
            })
            .collect();
        Ok(Self {
            inputs: loaded?.into_iter().collect(),
        })
    }
}

/// Unique GOPs of `pairs`, sorted.
fn unique_gops(pairs: &[PairSample]) -> Vec<GopRef> {
    let set: BTreeSet<&GopRef> = pairs.iter().flat_map(|p| [&p.a, &p.b]).collect();
    set.into_iter().cloned().collect()
}

fn map_maybe_par<I: Sync, O: Send>(items: &[I], serial: bool, f: impl Fn(&I) -> O + Sync + Send) -> Vec<O> {
    if serial {
        items.iter().map(f).collect()
    } else {
        items.par_iter().map(f).collect()
    }
}

/// Feature vectors of every GOP referenced by `pairs`.
pub fn features(
    model: &H4vdm<f32>,
    pairs: &[PairSample],
    source: &MemoryStore,
    serial: bool,
) -> Result<BTreeMap<GopRef, Vec<f32>>, TrainError> {
    let gops = unique_gops(pairs);
    let feats = map_maybe_par(&gops, serial, |g| -> Result<Vec<f32>, TrainError> {
        Ok(model.extract_feature(source.get(g)?)?)
    });
    gops.into_iter()
        .zip(feats)
        .map(|(g, f)| Ok((g, f?)))
        .collect()
}

/// Similarity score of every pair, in pair order.
pub fn score_pairs(
    model: &H4vdm<f32>,
    pairs: &[PairSample],
    source: &MemoryStore,
    serial: bool,
) -> Result<Vec<f64>, TrainError> {
    let feats = features(model, pairs, source, serial)?;
    pairs
        .iter()
        .map(|p| Ok(similarity(&feats[&p.a], &feats[&p.b])? as f64))
        .collect()
}

/// Mean pair loss of `batch` and its gradient, summed over GOPs in a fixed order.
pub fn batch_gradient(
    model: &H4vdm<f32>,
    batch: &[PairSample],
    source: &MemoryStore,
    serial: bool,
) -> Result<(f64, Vec<f64>, H4vdm<f32>), TrainError> {
    let gops = unique_gops(batch);
    let index: BTreeMap<&GopRef, usize> = gops.iter().enumerate().map(|(i, g)| (g, i)).collect();
    let fwd = map_maybe_par(&gops, serial, |g| -> Result<_, TrainError> { Ok(model.forward(source.get(g)?)?) });
    let fwd: Vec<_> = fwd.into_iter().collect::<Result<_, _>>()?;
    let scale = 1.0 / batch.len() as f32;
    let mut dr: Vec<Vec<f32>> = fwd.iter().map(|(r, _)| vec![0.0; r.len()]).collect();
    let mut losses = Vec::with_capacity(batch.len());
    for p in batch {
        let (ia, ib) = (index[&p.a], index[&p.b]);
        let (loss, ga, gb) = pair_loss_grad(&fwd[ia].0, &fwd[ib].0, p.label)?;
        losses.push(loss as f64);
        dr[ia].iter_mut().zip(ga).for_each(|(d, g)| *d += g * scale);
        dr[ib].iter_mut().zip(gb).for_each(|(d, g)| *d += g * scale);
    }
    let chunks: Vec<usize> = (0..gops.len()).step_by(GRAD_CHUNK).collect();
    let partial = map_maybe_par(&chunks, serial, |&start| -> Result<H4vdm<f32>, TrainError> {
        let mut g = model.zeros_like();
        for i in start..(start + GRAD_CHUNK).min(gops.len()) {
            model.backward(source.get(&gops[i])?, &fwd[i].1, &dr[i], &mut g)?;
        }
        Ok(g)
    });
    let mut grad: Option<H4vdm<f32>> = None;
    for g in partial {
        let g = g?;
        match grad.as_mut() {
            None => grad = Some(g),
            Some(acc) => acc.accumulate(&g)?,
        }
    }
    let grad = grad.unwrap_or_else(|| model.zeros_like());
    let mean = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
    Ok((mean, losses, grad))
}

/// One line of `history.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_auc: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: H4vdm<f32>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    /// Chosen on the validation scores of the best epoch.
    pub threshold: f64,
    pub history: Vec<EpochLog>,
    pub stopped_early: bool,
}

#[derive(Serialize)]
struct BatchDump<'a> {
    epoch: usize,
    batch: usize,
    lr: f64,
    pairs: &'a [PairSample],
    losses: &'a [f64],
}

/// Trains `model` in place and writes `history.jsonl`, `best.ckpt` and, if enabled,
/// `epoch_<n>.ckpt` into `out_dir`. Epochs are numbered from 0, as in [`lr_at`].
pub fn train(
    model: &mut H4vdm<f32>,
    train_pairs: &[PairSample],
    val_pairs: &[PairSample],
    source: &MemoryStore,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_pairs.is_empty() {
        return Err(TrainError::DataUnavailable("no training pairs".into()));
    }
    for g in unique_gops(train_pairs).iter().chain(&unique_gops(val_pairs)) {
        source.get(g)?;
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let history_path = out_dir.join(HISTORY_FILE);
    let mut history_file = BufWriter::new(File::create(&history_path).map_err(io_err(&history_path))?);

    let serial = config.deterministic;
    let schedule = config.schedule();
    let mut opt = Adam::new(config.adam, &*model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let start = Instant::now();

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, f64, H4vdm<f32>)> = None;
    let mut wait = 0;
    let mut stopped_early = false;
    for epoch in 0..config.max_epochs {
        let lr = lr_at(epoch, &schedule);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<PairSample> = idx.iter().map(|&i| train_pairs[i].clone()).collect();
            let (_, losses, grad) = batch_gradient(model, &batch, source, serial)?;
            if losses.iter().any(|l| !l.is_finite()) {
                let dump = out_dir.join(format!("nonfinite_epoch{epoch}_batch{b}.json"));
                let body = BatchDump {
                    epoch,
                    batch: b,
                    lr,
                    pairs: &batch,
                    losses: &losses,
                };
                let text = serde_json::to_string_pretty(&body).expect("dump serializes");
                fs::write(&dump, text).map_err(io_err(&dump))?;
                return Err(TrainError::NonFiniteLoss { epoch, batch: b, dump });
            }
            loss_sum += losses.iter().sum::<f64>();
            opt.update(model, &grad, lr)?;
        }
        let scores = score_pairs(model, val_pairs, source, serial)?;
        let labels: Vec<u8> = val_pairs.iter().map(|p| p.label).collect();
        let val_auc = eval::auc(&scores, &labels)?;
        let log = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / train_pairs.len() as f64,
            val_auc,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} loss {:.5} val_auc {val_auc:.4} ({:.1}s)",
            log.train_loss,
            log.elapsed_s
        );
        let line = serde_json::to_string(&log).expect("log serializes");
        writeln!(history_file, "{line}").map_err(io_err(&history_path))?;
        history_file.flush().map_err(io_err(&history_path))?;
        history.push(log);

        if config.epoch_checkpoints {
            let meta = CheckpointMeta {
                seed: config.seed,
                epoch: Some(epoch),
                threshold: None,
            };
            checkpoint::save(&out_dir.join(format!("epoch_{epoch}.ckpt")), model, meta)?;
        }
        if best.as_ref().map_or(true, |b| val_auc > b.0) {
            let threshold = eval::choose_threshold(&scores, &labels)?;
            let meta = CheckpointMeta {
                seed: config.seed,
                epoch: Some(epoch),
                threshold: Some(threshold),
            };
            checkpoint::save(&out_dir.join(BEST_CHECKPOINT), model, meta)?;
            best = Some((val_auc, epoch, threshold, model.clone()));
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                stopped_early = epoch + 1 < config.max_epochs;
                break;
            }
        }
    }
    let (best_val_auc, best_epoch, threshold, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_auc,
        threshold,
        history,
        stopped_early,
    })
}
