//! The pretraining loop: availability regimes, same-availability batches,
//! one mask scheme per step, validation over every scheme, early stopping,
//! and resumable checkpoints.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Batch, MultimodalData, PreparedSplit, SlotColumn};
use crate::error::{Error, Result};
use crate::fusion::{ModalityId, ModalitySet};
use crate::geo::LocationEncoder;
use crate::nn::{Graph, ParamStore};
use crate::objective::{sample_mask, LossBreakdown, LossVars, SmfModel, ZStats};
use crate::optim::{cosine_lr, OptimizerConfig, OptimizerState, ScheduleConfig};
use crate::rng::{stream_rng, Rng, RngState, Stream};
use crate::tensor::{backward, Tensor};

/// A model the trainer can drive.
pub trait Pretrainable {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn location_encoder(&self) -> Option<&LocationEncoder>;
    /// Fits the frozen input normalization on the training split.
    fn fit_input_stats(&mut self, train: &MultimodalData) -> Result<()>;
    fn batch_loss(&self, g: &mut Graph, batch: &Batch, masks: &mut Rng) -> Result<LossVars>;
    /// Deterministic validation loss of one batch.
    fn eval_loss(&self, batch: &Batch) -> Result<LossBreakdown>;
    /// Evaluation-time embedding of every row.
    fn embed(&self, batch: &Batch) -> Result<Tensor>;
    fn temperature(&self) -> f64;
}

/// Fits z-score statistics for a feature slot on the rows where it is
/// available.
pub fn fit_slot_stats(train: &MultimodalData, m: ModalityId) -> Result<ZStats> {
    let rows: Vec<usize> = (0..train.len())
        .filter(|&r| train.availability[r].contains(m))
        .collect();
    ZStats::fit(&train.features(m)?.gather_rows(&rows)?)
}

impl Pretrainable for SmfModel {
    fn store(&self) -> &ParamStore {
        &self.fusion.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.fusion.store
    }

    fn location_encoder(&self) -> Option<&LocationEncoder> {
        self.fusion.location_encoder().map(|(_, e)| e)
    }

    fn fit_input_stats(&mut self, train: &MultimodalData) -> Result<()> {
        for (i, s) in train.slots.iter().enumerate() {
            if matches!(s, SlotColumn::Features(_)) {
                let stats = fit_slot_stats(train, ModalityId(i))?;
                self.fusion.set_input_stats(ModalityId(i), &stats)?;
            }
        }
        Ok(())
    }

    fn batch_loss(&self, g: &mut Graph, batch: &Batch, masks: &mut Rng) -> Result<LossVars> {
        let scheme = sample_mask(batch.available, masks)?;
        self.loss(g, batch, &scheme)
    }

    fn eval_loss(&self, batch: &Batch) -> Result<LossBreakdown> {
        self.mean_scheme_loss(batch)
    }

    fn embed(&self, batch: &Batch) -> Result<Tensor> {
        self.fusion.embed(batch)
    }

    fn temperature(&self) -> f64 {
        self.fusion.temperature()
    }
}

/// Which modalities each location carries, besides its coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    All,
    /// Equal shares of locations with 1, 2, …, M extra modalities.
    Partial,
    /// Coordinates plus exactly one modality, spread evenly.
    Bimodal,
}

/// Availability sets for `n` locations over `slots` (slot 0 = coordinates).
pub fn availability_profile(n: usize, slots: usize, regime: Regime, rng: &mut Rng) -> Result<Vec<ModalitySet>> {
    if slots < 2 {
        return Err(Error::Contract("need coordinates plus at least one modality".into()));
    }
    let coords = ModalitySet::from_ids([ModalityId(0)]);
    let extras: Vec<ModalityId> = (1..slots).map(ModalityId).collect();
    let m = extras.len();
    let groups = match regime {
        Regime::All => return Ok(vec![ModalitySet::first(slots); n]),
        Regime::Partial | Regime::Bimodal => m,
    };
    let mut out = Vec::with_capacity(n);
    for gi in 0..groups {
        let size = n / groups + usize::from(gi < n % groups);
        for _ in 0..size {
            let set = match regime {
                Regime::Bimodal => {
                    let mut s = coords;
                    s.insert(extras[gi]);
                    s
                }
                _ => {
                    let chosen: Vec<ModalityId> =
                        extras.choose_multiple(rng, gi + 1).copied().collect();
                    coords.union(ModalitySet::from_ids(chosen))
                }
            };
            out.push(set);
        }
    }
    out.shuffle(rng);
    Ok(out)
}

/// Mutates a training batch before its step (e.g. augmentation).
pub trait BatchHook {
    fn prepare(&mut self, batch: &mut Batch, rng: &mut Rng) -> Result<()>;
}

pub struct NoHook;

impl BatchHook for NoHook {
    fn prepare(&mut self, _: &mut Batch, _: &mut Rng) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub optimizer: OptimizerConfig,
    pub val_every: u64,
    pub patience: Option<u64>,
}

impl TrainConfig {
    /// SGD with momentum 0.9, lr 3e-4, cosine decay, no warmup, 250
    /// epochs of 256-sample batches.
    pub fn synthetic() -> Self {
        Self {
            epochs: 250,
            batch_size: 256,
            lr: 3e-4,
            warmup_fraction: 0.0,
            optimizer: OptimizerConfig::sgd(0.9),
            val_every: 1,
            patience: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub train_contr: f64,
    pub train_recon: f64,
    pub train_total: f64,
    pub val_total: Option<f64>,
    pub lr: f64,
    pub tau: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_contr,train_recon,train_total,val_total,lr,tau";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.train_contr,
            self.train_recon,
            self.train_total,
            self.val_total.map(|v| v.to_string()).unwrap_or_default(),
            self.lr,
            self.tau
        )
    }
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in history {
        s.push_str(&m.csv_row());
        s.push('\n');
    }
    s
}

/// The metrics history stored in a trainer checkpoint.
pub fn checkpoint_history(ck: &Checkpoint) -> Result<Vec<EpochMetrics>> {
    let state: TrainerState = serde_json::from_value(ck.manifest.trainer.clone())
        .map_err(|e| Error::Contract(format!("trainer state: {e}")))?;
    Ok(state.history)
}

pub struct TrainData {
    pub train: PreparedSplit,
    pub val: PreparedSplit,
}

impl TrainData {
    pub fn new(train: MultimodalData, val: MultimodalData, encoder: Option<&LocationEncoder>) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Contract("train and validation splits must be non-empty".into()));
        }
        Ok(Self {
            train: PreparedSplit::new(train, encoder)?,
            val: PreparedSplit::new(val, encoder)?,
        })
    }
}

/// Mean validation loss over the batches of a split.
pub fn validation_loss<M: Pretrainable>(model: &M, split: &PreparedSplit, batch_size: usize) -> Result<f64> {
    let batches = split.batches(batch_size, None)?;
    let mut total = 0.0;
    for (set, rows) in &batches {
        total += model.eval_loss(&split.gather(rows, *set)?)?.total;
    }
    Ok(total / batches.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    history: Vec<EpochMetrics>,
    best_val: Option<f64>,
    best_epoch: u64,
    stopped: bool,
}

pub struct Trainer<M: Pretrainable> {
    pub model: M,
    pub cfg: TrainConfig,
    kind: String,
    fingerprint: String,
    opt: OptimizerState,
    schedule: ScheduleConfig,
    shuffle: Rng,
    masks: Rng,
    augment: Rng,
    epoch: u64,
    state: TrainerState,
    best: Option<Vec<Tensor>>,
}

impl<M: Pretrainable> Trainer<M> {
    /// Fits input statistics on the training split and sets up a fresh run.
    pub fn new(mut model: M, cfg: TrainConfig, data: &TrainData, seed: u64, kind: &str, fingerprint: &str) -> Result<Self> {
        if cfg.batch_size == 0 || cfg.val_every == 0 {
            return Err(Error::Contract("batch size and validation cadence must be positive".into()));
        }
        model.fit_input_stats(&data.train.data)?;
        let opt = OptimizerState::new(cfg.optimizer, model.store());
        let schedule = Self::schedule(&cfg, data)?;
        Ok(Self {
            model,
            cfg,
            kind: kind.to_string(),
            fingerprint: fingerprint.to_string(),
            opt,
            schedule,
            shuffle: stream_rng(seed, Stream::Shuffle),
            masks: stream_rng(seed, Stream::Masks),
            augment: stream_rng(seed, Stream::Augment),
            epoch: 0,
            state: TrainerState::default(),
            best: None,
        })
    }

    fn schedule(cfg: &TrainConfig, data: &TrainData) -> Result<ScheduleConfig> {
        let per_epoch = data.train.batches(cfg.batch_size, None)?.len() as u64;
        ScheduleConfig::with_warmup_fraction(cfg.lr, per_epoch * cfg.epochs, cfg.warmup_fraction)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn steps(&self) -> u64 {
        self.opt.step
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.state.history
    }

    pub fn is_done(&self) -> bool {
        self.state.stopped || self.epoch >= self.cfg.epochs
    }

    pub fn run_epoch(&mut self, data: &TrainData, hook: &mut dyn BatchHook) -> Result<EpochMetrics> {
        let batches = data.train.batches(self.cfg.batch_size, Some(&mut self.shuffle))?;
        let (mut c, mut r, mut t) = (0.0, 0.0, 0.0);
        let mut lr = cosine_lr(self.opt.step, &self.schedule);
        for (set, rows) in &batches {
            let mut batch = data.train.gather(rows, *set)?;
            hook.prepare(&mut batch, &mut self.augment)?;
            lr = cosine_lr(self.opt.step, &self.schedule);
            let grads = {
                let mut g = Graph::new(self.model.store(), true);
                let loss = self.model.batch_loss(&mut g, &batch, &mut self.masks)?;
                c += g.value(loss.contrastive).item()?;
                if let Some(rv) = loss.reconstruction {
                    r += g.value(rv).item()?;
                }
                let tv = g.value(loss.total).item()?;
                if !tv.is_finite() {
                    return Err(Error::Contract(format!(
                        "non-finite training loss at epoch {}",
                        self.epoch + 1
                    )));
                }
                t += tv;
                let grads = backward(&g.tape, loss.total)?;
                g.param_grads(&grads)
            };
            self.opt.apply(self.model.store_mut(), &grads, lr)?;
        }
        self.epoch += 1;
        let nb = batches.len() as f64;
        let validate = self.epoch % self.cfg.val_every == 0 || self.epoch == self.cfg.epochs;
        let val_total = if validate {
            Some(validation_loss(&self.model, &data.val, self.cfg.batch_size)?)
        } else {
            None
        };
        let m = EpochMetrics {
            epoch: self.epoch,
            train_contr: c / nb,
            train_recon: r / nb,
            train_total: t / nb,
            val_total,
            lr,
            tau: self.model.temperature(),
        };
        if let Some(v) = val_total {
            self.track_best(v);
        }
        self.state.history.push(m.clone());
        Ok(m)
    }

    fn track_best(&mut self, v: f64) {
        if self.state.best_val.map_or(true, |b| v < b) {
            self.state.best_val = Some(v);
            self.state.best_epoch = self.epoch;
            if self.cfg.patience.is_some() {
                self.best = Some(self.model.store().iter().map(|p| p.value.clone()).collect());
            }
        } else if let Some(p) = self.cfg.patience {
            if self.epoch - self.state.best_epoch >= p {
                self.state.stopped = true;
            }
        }
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn train(
        &mut self,
        data: &TrainData,
        hook: &mut dyn BatchHook,
        mut on_epoch: impl FnMut(&Self, &EpochMetrics) -> Result<()>,
    ) -> Result<()> {
        while !self.is_done() {
            let m = self.run_epoch(data, hook)?;
            on_epoch(self, &m)?;
        }
        Ok(())
    }

    /// The trained model (restored to its best validation state when early
    /// stopping is configured) and the metrics history.
    pub fn finish(mut self) -> (M, Vec<EpochMetrics>) {
        if let Some(best) = self.best.take() {
            for (p, b) in self.model.store_mut().iter_mut().zip(best) {
                p.value = b;
            }
        }
        (self.model, self.state.history)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_store(&self.kind, &self.fingerprint, self.model.store(), Some(&self.opt));
        ck.manifest.epoch = self.epoch;
        ck.manifest.step = self.opt.step;
        ck.manifest.rng = vec![
            ("shuffle".into(), RngState::capture(&self.shuffle)),
            ("masks".into(), RngState::capture(&self.masks)),
            ("augment".into(), RngState::capture(&self.augment)),
        ];
        ck.manifest.trainer = serde_json::to_value(&self.state)
            .map_err(|e| Error::Contract(format!("trainer state: {e}")))?;
        ck.manifest.has_best = self.best.is_some();
        ck.best = self.best.clone();
        Ok(ck)
    }

    /// Continues a run from `ck`. `model` must be built from the same
    /// configuration; its parameters and statistics are overwritten.
    pub fn resume(mut model: M, cfg: TrainConfig, data: &TrainData, ck: &Checkpoint, kind: &str, fingerprint: &str) -> Result<Self> {
        if ck.manifest.fingerprint != fingerprint {
            return Err(Error::Contract(format!(
                "checkpoint fingerprint {} does not match configuration {fingerprint}",
                ck.manifest.fingerprint
            )));
        }
        ck.restore_into(model.store_mut())?;
        let opt = ck
            .optimizer_state(model.store())?
            .ok_or_else(|| Error::Contract("checkpoint carries no optimizer state".into()))?;
        let rng = |name: &str| -> Result<Rng> {
            ck.manifest
                .rng
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Contract(format!("checkpoint lacks rng stream {name}")))?
                .1
                .restore()
        };
        let state: TrainerState = serde_json::from_value(ck.manifest.trainer.clone())
            .map_err(|e| Error::Contract(format!("trainer state: {e}")))?;
        let schedule = Self::schedule(&cfg, data)?;
        Ok(Self {
            model,
            cfg,
            kind: kind.to_string(),
            fingerprint: fingerprint.to_string(),
            opt,
            schedule,
            shuffle: rng("shuffle")?,
            masks: rng("masks")?,
            augment: rng("augment")?,
            epoch: ck.manifest.epoch,
            state,
            best: ck.best.clone(),
        })
    }
}
