//! Experiment configuration: one flat JSON document.
//!
//! Every field is optional; missing fields take the synthetic-benchmark
//! defaults. Unknown fields are rejected.
//!
//! | field | default | meaning |
//! |---|---|---|
//! | `seed` | 0 | root of every random stream |
//! | `grid` | 200 | points per side of the location grid |
//! | `lat_min`, `lat_max` | 36.9, 37.1 | latitude bounds |
//! | `lon_min`, `lon_max` | −122.1, −121.9 | longitude bounds |
//! | `train_fraction` | 0.8 | non-holdout share used for training |
//! | `d` | 9 | latent width |
//! | `heads` | 1 | attention heads (must divide `d`) |
//! | `contrastive_width` | 9 | contrastive head output |
//! | `lambda` | 0.0625 | reconstruction weight of `smf_full` |
//! | `tau_init` | 0.07 | initial temperature |
//! | `sigmas` | [1, 16, 256] | location-encoder scales |
//! | `frequencies` | 256 | Fourier frequencies per scale |
//! | `location_hidden` | [128, 128] | location MLP hidden widths |
//! | `modality_hidden` | 4 | hidden width of the baseline modality MLPs |
//! | `optimizer` | `sgd_momentum` | or `adamw` |
//! | `lr` | 3e-4 | base learning rate |
//! | `momentum` | 0.9 | SGD momentum |
//! | `beta1`, `beta2` | 0.9, 0.999 | AdamW betas |
//! | `weight_decay` | 0 | AdamW decoupled decay |
//! | `epochs` | 250 | |
//! | `batch_size` | 256 | |
//! | `warmup_fraction` | 0 | share of steps with linear warmup |
//! | `val_every` | 1 | epochs between validation passes |
//! | `patience` | null | early-stopping patience in validations |
//! | `regime` | `all` | availability: `all`, `partial`, `bimodal` |
//! | `kinds` | all five | baseline kinds to train |
//! | `out_dir` | `out` | output directory |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::pid::{BaselineKind, DatasetSpec, PidArch, PidExperiment};
use crate::train::{Regime, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub grid: usize,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub train_fraction: f64,
    pub d: usize,
    pub heads: usize,
    pub contrastive_width: usize,
    pub lambda: f64,
    pub tau_init: f64,
    pub sigmas: Vec<f64>,
    pub frequencies: usize,
    pub location_hidden: Vec<usize>,
    pub modality_hidden: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub val_every: u64,
    pub patience: Option<u64>,
    pub regime: Regime,
    pub kinds: Vec<BaselineKind>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ds = DatasetSpec::default();
        let arch = PidArch::default();
        let train = TrainConfig::synthetic();
        Self {
            seed: 0,
            grid: ds.grid,
            lat_min: ds.lat_min,
            lat_max: ds.lat_max,
            lon_min: ds.lon_min,
            lon_max: ds.lon_max,
            train_fraction: ds.train_fraction,
            d: arch.d,
            heads: arch.heads,
            contrastive_width: arch.contrastive_width,
            lambda: arch.lambda,
            tau_init: arch.tau_init,
            sigmas: arch.sigmas,
            frequencies: arch.frequencies,
            location_hidden: arch.location_hidden,
            modality_hidden: arch.modality_hidden,
            optimizer: train.optimizer.kind,
            lr: train.lr,
            momentum: train.optimizer.momentum,
            beta1: train.optimizer.beta1,
            beta2: train.optimizer.beta2,
            weight_decay: train.optimizer.weight_decay,
            epochs: train.epochs,
            batch_size: train.batch_size,
            warmup_fraction: train.warmup_fraction,
            val_every: train.val_every,
            patience: train.patience,
            regime: Regime::All,
            kinds: BaselineKind::ALL.to_vec(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn check(ok: bool, field: &str, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, message()))
    }
}

fn positive_finite(v: f64, field: &str) -> Result<()> {
    check(v.is_finite() && v > 0.0, field, || format!("must be a positive finite number, got {v}"))
}

impl ExperimentConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            // serde names the offending field in its message
            let field = e
                .to_string()
                .split('`')
                .nth(1)
                .unwrap_or("<document>")
                .to_string();
            Error::config(field, format!("{e}"))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        check(self.grid >= 2, "grid", || format!("needs at least 2 points per side, got {}", self.grid))?;
        for (f, v) in [("lat_min", self.lat_min), ("lat_max", self.lat_max), ("lon_min", self.lon_min), ("lon_max", self.lon_max)] {
            check(v.is_finite(), f, || format!("must be finite, got {v}"))?;
        }
        check(self.lat_min >= -90.0 && self.lat_max <= 90.0, "lat_max", || "latitudes must lie in [-90, 90]".into())?;
        check(self.lon_min >= -180.0 && self.lon_max <= 180.0, "lon_max", || {
            "longitudes must lie in [-180, 180]".into()
        })?;
        check(self.lat_min < self.lat_max, "lat_max", || "must exceed lat_min".into())?;
        check(self.lon_min < self.lon_max, "lon_max", || "must exceed lon_min".into())?;
        check(self.train_fraction > 0.0 && self.train_fraction < 1.0, "train_fraction", || {
            format!("must lie in (0, 1), got {}", self.train_fraction)
        })?;
        check(self.d > 0, "d", || "must be positive".into())?;
        check(self.heads > 0 && self.d % self.heads == 0, "heads", || {
            format!("{} does not divide d = {}", self.heads, self.d)
        })?;
        check(self.contrastive_width > 0, "contrastive_width", || "must be positive".into())?;
        check((0.0..=1.0).contains(&self.lambda), "lambda", || format!("must lie in [0, 1], got {}", self.lambda))?;
        positive_finite(self.tau_init, "tau_init")?;
        check(!self.sigmas.is_empty(), "sigmas", || "needs at least one scale".into())?;
        for (i, &s) in self.sigmas.iter().enumerate() {
            positive_finite(s, &format!("sigmas[{i}]"))?;
        }
        check(self.frequencies > 0, "frequencies", || "must be positive".into())?;
        for (i, &h) in self.location_hidden.iter().enumerate() {
            check(h > 0, &format!("location_hidden[{i}]"), || "must be positive".into())?;
        }
        check(self.modality_hidden > 0, "modality_hidden", || "must be positive".into())?;
        positive_finite(self.lr, "lr")?;
        check((0.0..1.0).contains(&self.momentum), "momentum", || format!("must lie in [0, 1), got {}", self.momentum))?;
        check((0.0..1.0).contains(&self.beta1), "beta1", || format!("must lie in [0, 1), got {}", self.beta1))?;
        check((0.0..1.0).contains(&self.beta2), "beta2", || format!("must lie in [0, 1), got {}", self.beta2))?;
        check(self.weight_decay.is_finite() && self.weight_decay >= 0.0, "weight_decay", || {
            format!("must be non-negative, got {}", self.weight_decay)
        })?;
        check(self.batch_size >= 2, "batch_size", || format!("needs at least 2 samples, got {}", self.batch_size))?;
        check((0.0..=1.0).contains(&self.warmup_fraction), "warmup_fraction", || {
            format!("must lie in [0, 1], got {}", self.warmup_fraction)
        })?;
        check(self.val_every > 0, "val_every", || "must be positive".into())?;
        check(self.patience != Some(0), "patience", || "must be positive when set".into())?;
        check(!self.kinds.is_empty(), "kinds", || "lists no baseline kind".into())?;
        for (i, k) in self.kinds.iter().enumerate() {
            check(!self.kinds[..i].contains(k), &format!("kinds[{i}]"), || format!("{k} listed twice"))?;
        }
        check(!self.out_dir.as_os_str().is_empty(), "out_dir", || "must not be empty".into())?;
        Ok(())
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            grid: self.grid,
            lat_min: self.lat_min,
            lat_max: self.lat_max,
            lon_min: self.lon_min,
            lon_max: self.lon_max,
            train_fraction: self.train_fraction,
        }
    }

    pub fn experiment(&self) -> PidExperiment {
        let optimizer = match self.optimizer {
            OptimizerKind::SgdMomentum => OptimizerConfig::sgd(self.momentum),
            OptimizerKind::Adamw => OptimizerConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                ..OptimizerConfig::adamw(self.weight_decay)
            },
        };
        PidExperiment {
            arch: PidArch {
                d: self.d,
                heads: self.heads,
                contrastive_width: self.contrastive_width,
                tau_init: self.tau_init,
                lambda: self.lambda,
                sigmas: self.sigmas.clone(),
                frequencies: self.frequencies,
                location_hidden: self.location_hidden.clone(),
                modality_hidden: self.modality_hidden,
            },
            train: TrainConfig {
                epochs: self.epochs,
                batch_size: self.batch_size,
                lr: self.lr,
                warmup_fraction: self.warmup_fraction,
                optimizer,
                val_every: self.val_every,
                patience: self.patience,
            },
            regime: self.regime,
        }
    }

    /// SHA-256 over every field that shapes data or models. `kinds` and
    /// `out_dir` are excluded so any subset of runs can be probed from any
    /// directory.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is an object");
        obj.remove("kinds");
        obj.remove("out_dir");
        // serde_json maps are ordered, so this text is canonical
        let text = serde_json::to_string(&v).expect("value serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
