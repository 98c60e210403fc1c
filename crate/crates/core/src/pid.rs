//! Synthetic redundancy / uniqueness / synergy benchmark: a coordinate grid
//! with two 3-d modalities, batch-constant unique dimensions during
//! training, five model kinds, ridge probes, and first-layer weight shares.

use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, MultimodalData, SlotColumn};
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionModel, ModalityId, ModalitySet, SlotKind};
use crate::geo::{GeoCoordinate, LocationEncoder, LocationEncoderConfig};
use crate::nn::{Graph, Mlp, ParamId, ParamStore};
use crate::objective::{info_nce_symmetric, LossBreakdown, LossVars, SmfModel, ZStats};
use crate::par::map_parallel;
use crate::probe::{alpha_grid, kfold_ridge_r2};
use crate::rng::{stream_rng, Rng, Stream};
use crate::tensor::{Tensor, Var};
use crate::train::{
    availability_profile, fit_slot_stats, BatchHook, EpochMetrics, Pretrainable, Regime, TrainConfig, TrainData,
    Trainer,
};

pub const MOD1: ModalityId = ModalityId(1);
pub const MOD2: ModalityId = ModalityId(2);
/// Column of the unique (batch-augmented) dimension in each modality.
pub const UNIQUE_DIM: usize = 2;

/// Grid geometry. The holdout region is the half-open lower-left quadrant
/// `[lat_min, lat_mid) × [lon_min, lon_mid)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub grid: usize,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    /// Share of the non-holdout points used for training.
    pub train_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            grid: 200,
            lat_min: 36.9,
            lat_max: 37.1,
            lon_min: -122.1,
            lon_max: -121.9,
            train_fraction: 0.8,
        }
    }
}

impl DatasetSpec {
    pub fn in_holdout(&self, c: GeoCoordinate) -> bool {
        let lat_mid = (self.lat_min + self.lat_max) / 2.0;
        let lon_mid = (self.lon_min + self.lon_max) / 2.0;
        (self.lat_min..lat_mid).contains(&c.lat()) && (self.lon_min..lon_mid).contains(&c.lon())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Holdout,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Holdout => "holdout",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "holdout" => Ok(Split::Holdout),
            _ => Err(Error::Contract(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSample {
    pub location: GeoCoordinate,
    pub mod1: [f64; 3],
    pub mod2: [f64; 3],
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub samples: Vec<SyntheticSample>,
}

/// Grid points with redundant dims equal to the grid position scaled to
/// [0, 1] (shared by both modalities) and unique dims drawn uniformly per
/// location. Non-holdout points are shuffled into train and val.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<SyntheticDataset> {
    if spec.grid < 2 || !(spec.lat_min < spec.lat_max) || !(spec.lon_min < spec.lon_max) {
        return Err(Error::Contract("grid needs at least 2 points per side and increasing bounds".into()));
    }
    if !(0.0..=1.0).contains(&spec.train_fraction) {
        return Err(Error::Contract(format!("train fraction {} outside [0, 1]", spec.train_fraction)));
    }
    let mut rng = stream_rng(seed, Stream::Data);
    let last = (spec.grid - 1) as f64;
    let mut samples = Vec::with_capacity(spec.grid * spec.grid);
    for i in 0..spec.grid {
        for j in 0..spec.grid {
            let (ri, rj) = (i as f64 / last, j as f64 / last);
            let lat = spec.lat_min + (spec.lat_max - spec.lat_min) * ri;
            let lon = spec.lon_min + (spec.lon_max - spec.lon_min) * rj;
            let location = GeoCoordinate::new(lat, lon)?;
            let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
            samples.push(SyntheticSample {
                location,
                mod1: [ri, rj, u1],
                mod2: [ri, rj, u2],
                split: if spec.in_holdout(location) { Split::Holdout } else { Split::Train },
            });
        }
    }
    let mut rest: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].split != Split::Holdout)
        .collect();
    rest.shuffle(&mut rng);
    let n_train = (spec.train_fraction * rest.len() as f64).round() as usize;
    for &i in &rest[n_train..] {
        samples[i].split = Split::Val;
    }
    Ok(SyntheticDataset { samples })
}

/// The 200×200 grid over [36.9, 37.1] × [−122.1, −121.9]: 10 000 holdout,
/// 24 000 train, and 6 000 val points.
pub fn generate_synthetic_dataset(seed: u64) -> Result<SyntheticDataset> {
    generate_dataset(&DatasetSpec::default(), seed)
}

pub const DATASET_HEADER: &str = "lat,lon,m1_1,m1_2,m1_3,m2_1,m2_2,m2_3,split";

impl SyntheticDataset {
    pub fn rows(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    /// Coordinates plus both modalities, every slot available.
    pub fn to_multimodal(&self, rows: &[usize]) -> Result<MultimodalData> {
        self.to_multimodal_with(rows, vec![ModalitySet::first(3); rows.len()])
    }

    pub fn to_multimodal_with(&self, rows: &[usize], availability: Vec<ModalitySet>) -> Result<MultimodalData> {
        let coords = rows.iter().map(|&r| self.samples[r].location).collect();
        let m1: Vec<[f64; 3]> = rows.iter().map(|&r| self.samples[r].mod1).collect();
        let m2: Vec<[f64; 3]> = rows.iter().map(|&r| self.samples[r].mod2).collect();
        MultimodalData::new(
            vec![
                SlotColumn::Location(coords),
                SlotColumn::Features(Tensor::from_rows(&m1)?),
                SlotColumn::Features(Tensor::from_rows(&m2)?),
            ],
            availability,
        )
    }

    pub fn split_data(&self, split: Split) -> Result<MultimodalData> {
        self.to_multimodal(&self.rows(split))
    }

    /// A split with availability drawn from `regime` (seeded per split).
    pub fn split_data_with(&self, split: Split, regime: Regime, seed: u64) -> Result<MultimodalData> {
        let rows = self.rows(split);
        let mut rng = stream_rng(seed ^ (split as u64 + 1), Stream::Availability);
        let availability = availability_profile(rows.len(), 3, regime, &mut rng)?;
        self.to_multimodal_with(&rows, availability)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.samples.len() * 120);
        s.push_str(DATASET_HEADER);
        s.push('\n');
        for x in &self.samples {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                x.location.lat(),
                x.location.lon(),
                x.mod1[0],
                x.mod1[1],
                x.mod1[2],
                x.mod2[0],
                x.mod2[1],
                x.mod2[2],
                x.split.as_str()
            ));
        }
        s
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(f, path)
    }

    pub fn parse_csv(reader: impl Read, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?
            .map_err(|e| Error::io(path, e))?;
        if header.trim_end() != DATASET_HEADER {
            return Err(parse_err(1, format!("expected header `{DATASET_HEADER}`")));
        }
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.trim_end().split(',').collect();
            if f.len() != 9 {
                return Err(parse_err(n, format!("expected 9 fields, got {}", f.len())));
            }
            let num = |k: usize| -> Result<f64> {
                f[k].parse::<f64>()
                    .map_err(|e| parse_err(n, format!("field {}: {e}", k + 1)))
            };
            let location = GeoCoordinate::new(num(0)?, num(1)?).map_err(|e| parse_err(n, e.to_string()))?;
            samples.push(SyntheticSample {
                location,
                mod1: [num(2)?, num(3)?, num(4)?],
                mod2: [num(5)?, num(6)?, num(7)?],
                split: f[8].parse().map_err(|e: Error| parse_err(n, e.to_string()))?,
            });
        }
        Ok(Self { samples })
    }
}

/// Replaces the unique dimension of each modality with one uniform draw per
/// modality shared by the whole batch. Only training batches qualify.
pub fn augment_batch_unique(batch: &mut Batch, split: Split, rng: &mut Rng) -> Result<()> {
    if split != Split::Train {
        return Err(Error::Contract(format!(
            "unique-dimension augmentation applies to training batches, not {}",
            split.as_str()
        )));
    }
    for m in [MOD1, MOD2] {
        if !batch.available.contains(m) {
            continue;
        }
        let value: f64 = rng.gen();
        let t = batch.features_mut(m)?;
        let w = t.cols();
        for row in t.data_mut().chunks_exact_mut(w) {
            row[UNIQUE_DIM] = value;
        }
    }
    Ok(())
}

/// Training hook applying [`augment_batch_unique`].
pub struct UniqueAugment;

impl BatchHook for UniqueAugment {
    fn prepare(&mut self, batch: &mut Batch, rng: &mut Rng) -> Result<()> {
        augment_batch_unique(batch, Split::Train, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    SmfFull,
    SmfContrastiveOnly,
    SmfReconstructionOnly,
    PairwiseContrastive,
    UnimodalContrastive,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::SmfFull,
        BaselineKind::SmfContrastiveOnly,
        BaselineKind::SmfReconstructionOnly,
        BaselineKind::PairwiseContrastive,
        BaselineKind::UnimodalContrastive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::SmfFull => "smf_full",
            BaselineKind::SmfContrastiveOnly => "smf_contrastive_only",
            BaselineKind::SmfReconstructionOnly => "smf_reconstruction_only",
            BaselineKind::PairwiseContrastive => "pairwise_contrastive",
            BaselineKind::UnimodalContrastive => "unimodal_contrastive",
        }
    }

    /// Loss weight of the SMF kinds.
    pub fn smf_lambda(self, full_lambda: f64) -> Option<f64> {
        match self {
            BaselineKind::SmfFull => Some(full_lambda),
            BaselineKind::SmfContrastiveOnly => Some(0.0),
            BaselineKind::SmfReconstructionOnly => Some(1.0),
            _ => None,
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown model kind `{s}`")))
    }
}

/// Architecture knobs shared by all kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct PidArch {
    pub d: usize,
    pub heads: usize,
    pub contrastive_width: usize,
    pub tau_init: f64,
    pub lambda: f64,
    pub sigmas: Vec<f64>,
    pub frequencies: usize,
    pub location_hidden: Vec<usize>,
    pub modality_hidden: usize,
}

impl Default for PidArch {
    fn default() -> Self {
        Self {
            d: 9,
            heads: 1,
            contrastive_width: 9,
            tau_init: 0.07,
            lambda: 0.0625,
            sigmas: vec![1.0, 16.0, 256.0],
            frequencies: 256,
            location_hidden: vec![128, 128],
            modality_hidden: 4,
        }
    }
}

impl PidArch {
    fn location(&self, seed: u64) -> LocationEncoderConfig {
        LocationEncoderConfig {
            sigmas: self.sigmas.clone(),
            frequencies: self.frequencies,
            hidden: self.location_hidden.clone(),
            output: self.d,
            seed,
        }
    }

    pub fn fusion(&self, seed: u64) -> FusionConfig {
        let mut cfg = FusionConfig::synthetic(seed);
        cfg.d = self.d;
        cfg.heads = self.heads;
        cfg.contrastive_width = self.contrastive_width;
        cfg.tau_init = self.tau_init;
        for s in &mut cfg.slots {
            match &mut s.kind {
                SlotKind::Location(lc) => *lc = self.location(seed),
                SlotKind::Features { hidden, .. } => *hidden = vec![self.modality_hidden],
            }
        }
        cfg
    }
}

/// Independent encoders aligned pairwise with InfoNCE; the evaluation
/// embedding concatenates every encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBaseline {
    pub store: ParamStore,
    pub location: LocationEncoder,
    pub modalities: Vec<ModalityEncoder>,
    pub log_tau: ParamId,
    /// Encoder index pairs (0 = location) that are contrasted.
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEncoder {
    pub slot: ModalityId,
    pub mlp: Mlp,
    pub mean: ParamId,
    pub std: ParamId,
}

impl ContrastiveBaseline {
    pub fn new(slots: &[ModalityId], arch: &PidArch, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Init);
        let mut store = ParamStore::new();
        let location = LocationEncoder::new(&mut store, "loc", &arch.location(seed), &mut rng)?;
        let modalities = slots
            .iter()
            .map(|&slot| {
                let name = format!("mod{}", slot.0);
                let mean = store.add(format!("{name}.stats.mean"), Tensor::zeros(vec![3]).expect("width 3"), false);
                let std = store.add(format!("{name}.stats.std"), Tensor::filled(vec![3], 1.0).expect("width 3"), false);
                let mlp = Mlp::new(&mut store, &format!("{name}.enc"), &[3, arch.modality_hidden, arch.d], false, &mut rng);
                ModalityEncoder { slot, mlp, mean, std }
            })
            .collect::<Vec<_>>();
        let log_tau = store.add("log_tau", Tensor::scalar(arch.tau_init.ln()), true);
        let k = modalities.len() + 1;
        let pairs = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
        Ok(Self {
            store,
            location,
            modalities,
            log_tau,
            pairs,
        })
    }

    /// Encoder outputs, `None` for modalities the batch lacks.
    fn outputs(&self, g: &mut Graph, batch: &Batch) -> Result<Vec<Option<Var>>> {
        let rff = match batch.slots.first().and_then(Option::as_ref) {
            Some(crate::data::SlotBatch::Location { rff, .. }) => rff,
            _ => return Err(Error::Contract("batch lacks coordinates".into())),
        };
        let feats: Vec<Var> = rff.iter().map(|f| g.input(f.clone())).collect();
        let mut out = vec![Some(self.location.forward_features(g, &feats)?)];
        for m in &self.modalities {
            if !batch.available.contains(m.slot) {
                out.push(None);
                continue;
            }
            let stats = ZStats {
                mean: self.store.get(m.mean).data().to_vec(),
                std: self.store.get(m.std).data().to_vec(),
            };
            let x = g.input(stats.apply(batch.features(m.slot)?)?);
            out.push(Some(m.mlp.forward(g, x)?));
        }
        Ok(out)
    }

    fn contrastive(&self, g: &mut Graph, batch: &Batch) -> Result<Var> {
        let outs = self.outputs(g, batch)?;
        let log_tau = g.param(self.log_tau);
        let mut total: Option<Var> = None;
        for &(a, b) in &self.pairs {
            let (Some(va), Some(vb)) = (outs[a], outs[b]) else {
                continue;
            };
            let l = info_nce_symmetric(&mut g.tape, va, vb, log_tau)?;
            total = Some(match total {
                None => l,
                Some(t) => g.tape.add(t, l)?,
            });
        }
        // A batch without any contrasted pair contributes nothing.
        Ok(total.unwrap_or_else(|| g.input(Tensor::scalar(0.0))))
    }
}

impl Pretrainable for ContrastiveBaseline {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn location_encoder(&self) -> Option<&LocationEncoder> {
        Some(&self.location)
    }

    fn fit_input_stats(&mut self, train: &MultimodalData) -> Result<()> {
        for i in 0..self.modalities.len() {
            let m = &self.modalities[i];
            let stats = fit_slot_stats(train, m.slot)?;
            let (mean, std) = (m.mean, m.std);
            self.store.get_mut(mean).data_mut().copy_from_slice(&stats.mean);
            self.store.get_mut(std).data_mut().copy_from_slice(&stats.std);
        }
        Ok(())
    }

    fn batch_loss(&self, g: &mut Graph, batch: &Batch, _masks: &mut Rng) -> Result<LossVars> {
        let c = self.contrastive(g, batch)?;
        Ok(LossVars {
            contrastive: c,
            reconstruction: None,
            total: c,
        })
    }

    fn eval_loss(&self, batch: &Batch) -> Result<LossBreakdown> {
        let mut g = Graph::new(&self.store, false);
        let c = self.contrastive(&mut g, batch)?;
        let v = g.value(c).item()?;
        Ok(LossBreakdown {
            contrastive: v,
            reconstruction: 0.0,
            total: v,
            tau: self.temperature(),
            lambda: 0.0,
        })
    }

    fn embed(&self, batch: &Batch) -> Result<Tensor> {
        let mut g = Graph::new(&self.store, false);
        let outs = self.outputs(&mut g, batch)?;
        if outs.iter().any(Option::is_none) {
            return Err(Error::Contract("embedding needs every encoder's modality".into()));
        }
        let parts: Vec<&Tensor> = outs.iter().flatten().map(|&v| g.value(v)).collect();
        let width: usize = parts.iter().map(|t| t.cols()).sum();
        let mut data = Vec::with_capacity(batch.len() * width);
        for r in 0..batch.len() {
            for p in &parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Tensor::new(vec![batch.len(), width], data)?)
    }

    fn temperature(&self) -> f64 {
        self.store.get(self.log_tau).data()[0].exp()
    }
}

/// One of the five benchmark models.
#[derive(Debug, Clone, PartialEq)]
pub enum PidModel {
    Smf(SmfModel),
    Contrastive(ContrastiveBaseline),
}

pub fn build_baseline(kind: BaselineKind, arch: &PidArch, seed: u64) -> Result<PidModel> {
    Ok(match kind.smf_lambda(arch.lambda) {
        Some(lambda) => {
            let fusion = FusionModel::new(arch.fusion(seed), &mut stream_rng(seed, Stream::Init))?;
            PidModel::Smf(SmfModel::new(fusion, lambda)?)
        }
        None => {
            let slots: &[ModalityId] = if kind == BaselineKind::PairwiseContrastive {
                &[MOD1, MOD2]
            } else {
                &[MOD1]
            };
            PidModel::Contrastive(ContrastiveBaseline::new(slots, arch, seed)?)
        }
    })
}

impl PidModel {
    fn inner(&self) -> &dyn Pretrainable {
        match self {
            PidModel::Smf(m) => m,
            PidModel::Contrastive(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Pretrainable {
        match self {
            PidModel::Smf(m) => m,
            PidModel::Contrastive(m) => m,
        }
    }

    /// First-layer weights of each modality encoder as `[out × in]`.
    pub fn first_layers(&self) -> Result<Vec<Tensor>> {
        let store = self.store();
        let weights: Vec<ParamId> = match self {
            PidModel::Smf(m) => m
                .fusion
                .slots
                .iter()
                .filter_map(|s| match &s.encoder {
                    crate::fusion::SlotEncoder::Features { mlp: Some(mlp), .. } => Some(mlp.layers[0].weight),
                    _ => None,
                })
                .collect(),
            PidModel::Contrastive(m) => m.modalities.iter().map(|e| e.mlp.layers[0].weight).collect(),
        };
        weights.into_iter().map(|w| Ok(store.get(w).transpose()?)).collect()
    }

    /// Evaluation embedding of every row of `data`, in row order.
    pub fn embed_all(&self, data: &MultimodalData, chunk: usize) -> Result<Tensor> {
        let split = crate::data::PreparedSplit::new(data.clone(), self.location_encoder())?;
        let mut out: Vec<f64> = Vec::new();
        let mut width = 0;
        let rows: Vec<usize> = (0..data.len()).collect();
        for c in rows.chunks(chunk.max(1)) {
            let set = data.availability[c[0]];
            let e = self.embed(&split.gather(c, set)?)?;
            width = e.cols();
            out.extend_from_slice(e.data());
        }
        Ok(Tensor::new(vec![data.len(), width], out)?)
    }
}

impl Pretrainable for PidModel {
    fn store(&self) -> &ParamStore {
        self.inner().store()
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().store_mut()
    }
    fn location_encoder(&self) -> Option<&LocationEncoder> {
        self.inner().location_encoder()
    }
    fn fit_input_stats(&mut self, train: &MultimodalData) -> Result<()> {
        self.inner_mut().fit_input_stats(train)
    }
    fn batch_loss(&self, g: &mut Graph, batch: &Batch, masks: &mut Rng) -> Result<LossVars> {
        self.inner().batch_loss(g, batch, masks)
    }
    fn eval_loss(&self, batch: &Batch) -> Result<LossBreakdown> {
        self.inner().eval_loss(batch)
    }
    fn embed(&self, batch: &Batch) -> Result<Tensor> {
        self.inner().embed(batch)
    }
    fn temperature(&self) -> f64 {
        self.inner().temperature()
    }
}

/// `mean |column UNIQUE_DIM| / Σ_columns mean |column|` of an `[out × in]`
/// weight matrix.
pub fn unique_weight_share(w: &Tensor) -> Result<f64> {
    if w.shape().len() != 2 || w.cols() <= UNIQUE_DIM {
        return Err(Error::Contract(format!(
            "weight matrix {:?} has no unique-dimension column",
            w.shape()
        )));
    }
    let col_mean = |c: usize| (0..w.rows()).map(|r| w.row(r)[c].abs()).sum::<f64>() / w.rows() as f64;
    let total: f64 = (0..w.cols()).map(col_mean).sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(col_mean(UNIQUE_DIM) / total)
}

/// Mean share over the model's modality encoders.
pub fn first_layer_unique_weight_share(model: &PidModel) -> Result<f64> {
    let layers = model.first_layers()?;
    if layers.is_empty() {
        return Err(Error::Contract("model has no modality first layers".into()));
    }
    let mut s = 0.0;
    for w in &layers {
        s += unique_weight_share(w)?;
    }
    Ok(s / layers.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: BaselineKind,
    pub seed: u64,
    pub model: PidModel,
    pub history: Vec<EpochMetrics>,
}

/// Everything that determines a benchmark training run besides the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PidExperiment {
    pub arch: PidArch,
    pub train: TrainConfig,
    pub regime: Regime,
}

impl Default for PidExperiment {
    fn default() -> Self {
        Self {
            arch: PidArch::default(),
            train: TrainConfig::synthetic(),
            regime: Regime::All,
        }
    }
}

/// Train/val data of a kind's run, with cached coordinate features.
pub fn training_data(model: &PidModel, exp: &PidExperiment, dataset: &SyntheticDataset, seed: u64) -> Result<TrainData> {
    TrainData::new(
        dataset.split_data_with(Split::Train, exp.regime, seed)?,
        dataset.split_data_with(Split::Val, exp.regime, seed)?,
        model.location_encoder(),
    )
}

/// Trains one kind on the train split (validated on val) with
/// batch-constant unique dimensions.
pub fn train_kind(kind: BaselineKind, exp: &PidExperiment, dataset: &SyntheticDataset, seed: u64) -> Result<TrainedModel> {
    train_kind_with(kind, exp, dataset, seed, "", |_| Ok(()))
}

/// [`train_kind`] with a config fingerprint and a per-epoch callback that
/// can checkpoint the trainer.
pub fn train_kind_with(
    kind: BaselineKind,
    exp: &PidExperiment,
    dataset: &SyntheticDataset,
    seed: u64,
    fingerprint: &str,
    mut on_epoch: impl FnMut(&Trainer<PidModel>) -> Result<()>,
) -> Result<TrainedModel> {
    let model = build_baseline(kind, &exp.arch, seed)?;
    let data = training_data(&model, exp, dataset, seed)?;
    let mut trainer = Trainer::new(model, exp.train.clone(), &data, seed, kind.as_str(), fingerprint)?;
    trainer.train(&data, &mut UniqueAugment, |t, m| {
        log::info!(
            "{kind} seed {seed} epoch {}: train {:.5} val {}",
            m.epoch,
            m.train_total,
            m.val_total.map_or("-".to_string(), |v| format!("{v:.5}"))
        );
        on_epoch(t)
    })?;
    let (model, history) = trainer.finish();
    Ok(TrainedModel {
        kind,
        seed,
        model,
        history,
    })
}

/// Trains several kinds on up to `threads` workers.
pub fn train_kinds(
    kinds: &[BaselineKind],
    exp: &PidExperiment,
    dataset: &SyntheticDataset,
    seed: u64,
    threads: usize,
) -> Result<Vec<TrainedModel>> {
    map_parallel(kinds, threads, |&k| train_kind(k, exp, dataset, seed))
        .into_iter()
        .collect()
}

/// Probe scores of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct PidScores {
    pub kind: BaselineKind,
    pub redundancy: f64,
    pub uniqueness: f64,
    pub synergy: f64,
    pub weight_share: f64,
    pub r2_lat: f64,
    pub r2_lon: f64,
    pub r2_u1: f64,
    pub r2_u2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PidReport {
    pub rows: Vec<PidScores>,
}

pub const TASKS: [&str; 3] = ["redundancy", "uniqueness", "synergy"];
pub const WEIGHT_TASK: &str = "first_layer_weights";
pub const REPORT_HEADER: &str = "kind,task,r2,weight_share";

/// Probe targets of the evaluation rows: lat, lon, u1, u2, u1 + u2.
pub struct ProbeTargets {
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub sum: Vec<f64>,
}

impl ProbeTargets {
    pub fn new(dataset: &SyntheticDataset, rows: &[usize]) -> Self {
        let s = |f: &dyn Fn(&SyntheticSample) -> f64| rows.iter().map(|&r| f(&dataset.samples[r])).collect();
        Self {
            lat: s(&|x| x.location.lat()),
            lon: s(&|x| x.location.lon()),
            u1: s(&|x| x.mod1[UNIQUE_DIM]),
            u2: s(&|x| x.mod2[UNIQUE_DIM]),
            sum: s(&|x| x.mod1[UNIQUE_DIM] + x.mod2[UNIQUE_DIM]),
        }
    }
}

/// Ridge probes of an embedding matrix; weight share left at 0.
pub fn probe_embeddings(kind: BaselineKind, emb: &Tensor, t: &ProbeTargets, seed: u64) -> Result<PidScores> {
    let alphas = alpha_grid();
    let r2 = |y: &[f64]| -> Result<f64> { Ok(kfold_ridge_r2(emb, y, 5, &alphas, seed)?.mean_r2) };
    let (r2_lat, r2_lon, r2_u1, r2_u2) = (r2(&t.lat)?, r2(&t.lon)?, r2(&t.u1)?, r2(&t.u2)?);
    Ok(PidScores {
        kind,
        redundancy: (r2_lat + r2_lon) / 2.0,
        uniqueness: (r2_u1 + r2_u2) / 2.0,
        synergy: r2(&t.sum)?,
        weight_share: 0.0,
        r2_lat,
        r2_lon,
        r2_u1,
        r2_u2,
    })
}

/// Probes every trained model on the out-of-sample `split`, where unique
/// dimensions keep their per-location values.
pub fn run_pid_probes(models: &[TrainedModel], dataset: &SyntheticDataset, split: Split, seed: u64) -> Result<PidReport> {
    if split == Split::Train {
        return Err(Error::Contract("probes run on out-of-sample rows".into()));
    }
    let rows = dataset.rows(split);
    let data = dataset.to_multimodal(&rows)?;
    let targets = ProbeTargets::new(dataset, &rows);
    let mut out = Vec::with_capacity(models.len());
    for m in models {
        if m.history.is_empty() {
            return Err(Error::Contract(format!("{} has not been trained", m.kind)));
        }
        let emb = m.model.embed_all(&data, 2048)?;
        let mut scores = probe_embeddings(m.kind, &emb, &targets, seed)?;
        scores.weight_share = first_layer_unique_weight_share(&m.model)?;
        out.push(scores);
    }
    Ok(PidReport { rows: out })
}

impl PidReport {
    pub fn get(&self, kind: BaselineKind) -> Option<&PidScores> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            for (task, v) in TASKS.iter().zip([r.redundancy, r.uniqueness, r.synergy]) {
                s.push_str(&format!("{},{task},{v},\n", r.kind));
            }
        }
        for r in &self.rows {
            s.push_str(&format!("{},{WEIGHT_TASK},,{}\n", r.kind, r.weight_share));
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(Error::Contract(format!("report must start with `{REPORT_HEADER}`")));
        }
        let mut rows: Vec<PidScores> = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Contract(format!("malformed report row `{line}`")));
            }
            let kind: BaselineKind = f[0].parse()?;
            let idx = match rows.iter().position(|r| r.kind == kind) {
                Some(i) => i,
                None => {
                    rows.push(PidScores {
                        kind,
                        redundancy: f64::NAN,
                        uniqueness: f64::NAN,
                        synergy: f64::NAN,
                        weight_share: f64::NAN,
                        r2_lat: f64::NAN,
                        r2_lon: f64::NAN,
                        r2_u1: f64::NAN,
                        r2_u2: f64::NAN,
                    });
                    rows.len() - 1
                }
            };
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Contract(format!("`{line}`: {e}")));
            let r = &mut rows[idx];
            match f[1] {
                "redundancy" => r.redundancy = num(f[2])?,
                "uniqueness" => r.uniqueness = num(f[2])?,
                "synergy" => r.synergy = num(f[2])?,
                WEIGHT_TASK => r.weight_share = num(f[3])?,
                t => return Err(Error::Contract(format!("unknown task `{t}`"))),
            }
        }
        Ok(Self { rows })
    }
}

/// Outcome of one benchmark ordering or floor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub name: &'static str,
    /// `None` when a required kind was not part of the reports.
    pub passed: Option<bool>,
    pub detail: String,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median of a score over reports, if every report has the kind.
pub fn median_score(reports: &[PidReport], kind: BaselineKind, f: fn(&PidScores) -> f64) -> Option<f64> {
    let v: Option<Vec<f64>> = reports.iter().map(|r| r.get(kind).map(f)).collect();
    v.filter(|v| !v.is_empty()).map(median)
}

/// The benchmark's ordering gates and floors, each on medians across the
/// given reports (one report per seed).
pub fn benchmark_gates(reports: &[PidReport]) -> Vec<Gate> {
    use BaselineKind::*;
    let red = |r: &PidScores| r.redundancy;
    let uni = |r: &PidScores| r.uniqueness;
    let syn = |r: &PidScores| r.synergy;
    let ws = |r: &PidScores| r.weight_share;
    let m = |k, f| median_score(reports, k, f);
    let gate = |name, vals: Option<(f64, f64)>, ok: &dyn Fn(f64, f64) -> bool, what: &str| Gate {
        name,
        passed: vals.map(|(a, b)| ok(a, b)),
        detail: match vals {
            Some((a, b)) => format!("{what}: {a:.4} vs {b:.4}"),
            None => format!("{what}: kind missing"),
        },
    };
    let pair = |a: Option<f64>, b: Option<f64>| a.zip(b);
    vec![
        gate("smf_full redundancy >= 0.8", m(SmfFull, red).map(|a| (a, 0.8)), &|a, b| a >= b, "median vs floor"),
        gate(
            "smf_full uniqueness exceeds pairwise by >= 0.3",
            pair(m(SmfFull, uni), m(PairwiseContrastive, uni)),
            &|a, b| a - b >= 0.3,
            "smf_full vs pairwise",
        ),
        gate(
            "smf_full synergy exceeds pairwise by >= 0.3",
            pair(m(SmfFull, syn), m(PairwiseContrastive, syn)),
            &|a, b| a - b >= 0.3,
            "smf_full vs pairwise",
        ),
        gate("unimodal synergy <= 0.3", m(UnimodalContrastive, syn).map(|a| (a, 0.3)), &|a, b| a <= b, "median vs ceiling"),
        gate("smf_full synergy >= 0.6", m(SmfFull, syn).map(|a| (a, 0.6)), &|a, b| a >= b, "median vs floor"),
        gate(
            "smf_full synergy above unimodal",
            pair(m(SmfFull, syn), m(UnimodalContrastive, syn)),
            &|a, b| a > b,
            "smf_full vs unimodal",
        ),
        gate(
            "smf_full uniqueness above unimodal",
            pair(m(SmfFull, uni), m(UnimodalContrastive, uni)),
            &|a, b| a > b,
            "smf_full vs unimodal",
        ),
        gate(
            "smf_full unique weight share above pairwise",
            pair(m(SmfFull, ws), m(PairwiseContrastive, ws)),
            &|a, b| a > b,
            "smf_full vs pairwise",
        ),
        gate(
            "contrastive-only redundancy >= reconstruction-only",
            pair(m(SmfContrastiveOnly, red), m(SmfReconstructionOnly, red)),
            &|a, b| a >= b,
            "contrastive-only vs reconstruction-only",
        ),
        gate(
            "reconstruction-only uniqueness above contrastive-only",
            pair(m(SmfReconstructionOnly, uni), m(SmfContrastiveOnly, uni)),
            &|a, b| a > b,
            "reconstruction-only vs contrastive-only",
        ),
    ]
}
