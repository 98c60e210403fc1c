//! Token projection, masked single-block transformer fusion, and the two
//! decoder heads.

use std::fmt;
use std::ops::Range;

use rand_distr::{Distribution, Normal};

use crate::data::{Batch, SlotBatch};
use crate::error::{Error, Result};
use crate::geo::{LocationEncoder, LocationEncoderConfig};
use crate::nn::{Graph, Linear, Mlp, Norm, ParamId, ParamStore};
use crate::objective::ZStats;
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

/// Index of a configured modality slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModalityId(pub usize);

/// Bit set over modality slots (at most 32).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ModalitySet(u32);

impl ModalitySet {
    pub const MAX_SLOTS: usize = 32;

    pub fn empty() -> Self {
        Self(0)
    }

    /// `{0, .., k-1}`.
    pub fn first(k: usize) -> Self {
        assert!(k <= Self::MAX_SLOTS);
        if k == 32 {
            Self(u32::MAX)
        } else {
            Self((1u32 << k) - 1)
        }
    }

    pub fn from_bits(bits: u32) -> Self {
        Self(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn from_ids(ids: impl IntoIterator<Item = ModalityId>) -> Self {
        let mut s = Self::empty();
        for id in ids {
            s.insert(id);
        }
        s
    }

    pub fn insert(&mut self, id: ModalityId) {
        assert!(id.0 < Self::MAX_SLOTS, "modality index {} too large", id.0);
        self.0 |= 1 << id.0;
    }

    pub fn contains(self, id: ModalityId) -> bool {
        id.0 < Self::MAX_SLOTS && self.0 & (1 << id.0) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: Self) -> Self {
        Self(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        Self(self.0 & other.0)
    }

    pub fn difference(self, other: Self) -> Self {
        Self(self.0 & !other.0)
    }

    /// Members in increasing index order.
    pub fn iter(self) -> impl Iterator<Item = ModalityId> {
        (0..Self::MAX_SLOTS)
            .filter(move |&i| self.0 & (1 << i) != 0)
            .map(ModalityId)
    }
}

impl fmt::Debug for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|m| m.0)).finish()
    }
}

/// Ordered bipartition `(masked, kept)` of an availability set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaskScheme {
    masked: ModalitySet,
    kept: ModalitySet,
}

impl MaskScheme {
    pub fn new(masked: ModalitySet, available: ModalitySet) -> Result<Self> {
        let kept = available.difference(masked);
        if masked.is_empty() || kept.is_empty() || !masked.is_subset(available) {
            return Err(Error::Contract(format!(
                "mask {masked:?} is not a proper non-empty subset of {available:?}"
            )));
        }
        Ok(Self { masked, kept })
    }

    pub fn masked(&self) -> ModalitySet {
        self.masked
    }

    pub fn kept(&self) -> ModalitySet {
        self.kept
    }

    pub fn available(&self) -> ModalitySet {
        self.masked.union(self.kept)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SlotKind {
    Location(LocationEncoderConfig),
    /// A fixed-width latent vector. `hidden` adds trainable GELU layers in
    /// front of the token projection; `reconstruct` makes it a target of the
    /// reconstruction head.
    Features {
        input: usize,
        hidden: Vec<usize>,
        reconstruct: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotConfig {
    pub name: String,
    pub kind: SlotKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub d: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub contrastive_width: usize,
    pub ln_eps: f64,
    pub tau_init: f64,
    pub pos_init_std: f64,
    pub slots: Vec<SlotConfig>,
}

impl FusionConfig {
    /// Coordinates plus two 3-d modalities with a 4-unit hidden layer, fused
    /// at width 9 with a single head.
    pub fn synthetic(seed: u64) -> Self {
        let feature = |name: &str| SlotConfig {
            name: name.into(),
            kind: SlotKind::Features {
                input: 3,
                hidden: vec![4],
                reconstruct: true,
            },
        };
        Self {
            d: 9,
            heads: 1,
            ffn_mult: 4,
            contrastive_width: 9,
            ln_eps: 1e-5,
            tau_init: 0.07,
            pos_init_std: 0.02,
            slots: vec![
                SlotConfig {
                    name: "coords".into(),
                    kind: SlotKind::Location(LocationEncoderConfig::synthetic(9, seed)),
                },
                feature("mod1"),
                feature("mod2"),
            ],
        }
    }

    /// Width-768, 8-head fusion over frozen latents of the given widths.
    pub fn full_scale(latent_widths: &[(&str, usize)], seed: u64) -> Self {
        let mut slots = vec![SlotConfig {
            name: "coords".into(),
            kind: SlotKind::Location(LocationEncoderConfig::full_scale(768, seed)),
        }];
        slots.extend(latent_widths.iter().map(|(n, w)| SlotConfig {
            name: (*n).into(),
            kind: SlotKind::Features {
                input: *w,
                hidden: vec![],
                reconstruct: true,
            },
        }));
        Self {
            d: 768,
            heads: 8,
            ffn_mult: 4,
            contrastive_width: 512,
            ln_eps: 1e-5,
            tau_init: 0.07,
            pos_init_std: 0.02,
            slots,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots.len() < 2 || self.slots.len() > ModalitySet::MAX_SLOTS {
            return Err(Error::Contract(format!(
                "fusion needs 2..=32 modality slots, got {}",
                self.slots.len()
            )));
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Contract(format!(
                "width {} is not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if !(self.tau_init > 0.0) || self.contrastive_width == 0 || self.ffn_mult == 0 {
            return Err(Error::Contract("invalid head or temperature settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SlotEncoder {
    Location(LocationEncoder),
    Features {
        input: usize,
        mlp: Option<Mlp>,
        mean: ParamId,
        std: ParamId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub name: String,
    pub encoder: SlotEncoder,
    pub proj: Linear,
    pub pos: ParamId,
    /// Columns of the reconstruction head owned by this slot.
    pub recon: Option<Range<usize>>,
}

impl Slot {
    pub fn latent_width(&self) -> usize {
        match &self.encoder {
            SlotEncoder::Location(l) => l.output_width(),
            SlotEncoder::Features { input, mlp, .. } => {
                mlp.as_ref().map_or(*input, Mlp::output_width)
            }
        }
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub ln1: Norm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub heads: usize,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &FusionConfig, rng: &mut Rng) -> Self {
        let d = cfg.d;
        Self {
            ln1: Norm::new(store, &format!("{name}.ln1"), d, cfg.ln_eps),
            wq: Linear::new(store, &format!("{name}.wq"), d, d, rng),
            wk: Linear::new(store, &format!("{name}.wk"), d, d, rng),
            wv: Linear::new(store, &format!("{name}.wv"), d, d, rng),
            wo: Linear::new(store, &format!("{name}.wo"), d, d, rng),
            ln2: Norm::new(store, &format!("{name}.ln2"), d, cfg.ln_eps),
            ff1: Linear::new(store, &format!("{name}.ff1"), d, cfg.ffn_mult * d, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), cfg.ffn_mult * d, d, rng),
            heads: cfg.heads,
        }
    }

    /// Multi-head self-attention over sequences of length `seq` stacked as
    /// `[B·seq × d]`.
    pub fn attention(&self, g: &mut Graph, x: Var, seq: usize) -> Result<Var> {
        let d = g.value(x).cols();
        let dh = d / self.heads;
        let q = self.wq.forward(g, x)?;
        let k = self.wk.forward(g, x)?;
        let v = self.wv.forward(g, x)?;
        let qh = g.tape.split_heads(q, seq, self.heads)?;
        let kh = g.tape.split_heads(k, seq, self.heads)?;
        let vh = g.tape.split_heads(v, seq, self.heads)?;
        let scores = g.tape.bmm_nt(qh, kh)?;
        let scores = g.tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = g.tape.softmax_rows(scores);
        let mixed = g.tape.bmm(weights, vh)?;
        let merged = g.tape.merge_heads(mixed, self.heads)?;
        Ok(self.wo.forward(g, merged)?)
    }

    pub fn forward(&self, g: &mut Graph, x: Var, seq: usize) -> Result<Var> {
        let n1 = self.ln1.forward(g, x)?;
        let a = self.attention(g, n1, seq)?;
        let h = g.tape.add(x, a)?;
        let n2 = self.ln2.forward(g, h)?;
        let f = self.ff1.forward(g, n2)?;
        let f = g.tape.gelu(f);
        let f = self.ff2.forward(g, f)?;
        Ok(g.tape.add(h, f)?)
    }
}

/// LayerNorm → GELU → linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub norm: Norm,
    pub linear: Linear,
}

impl Head {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, out: usize, eps: f64, rng: &mut Rng) -> Self {
        Self {
            norm: Norm::new(store, &format!("{name}.norm"), d, eps),
            linear: Linear::new(store, &format!("{name}.linear"), d, out, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let n = self.norm.forward(g, z)?;
        let a = g.tape.gelu(n);
        Ok(self.linear.forward(g, a)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub cfg: FusionConfig,
    pub store: ParamStore,
    pub slots: Vec<Slot>,
    pub block: TransformerBlock,
    pub contrastive: Head,
    pub reconstruction: Head,
    pub log_tau: ParamId,
    recon_width: usize,
}

impl FusionModel {
    pub fn new(cfg: FusionConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let pos_dist = Normal::new(0.0, cfg.pos_init_std)
            .map_err(|e| Error::Contract(format!("positional init: {e}")))?;
        let mut slots = Vec::with_capacity(cfg.slots.len());
        let mut recon_width = 0;
        let mut location_slots = 0;
        for (i, sc) in cfg.slots.iter().enumerate() {
            let name = format!("slot{i}");
            let (encoder, recon) = match &sc.kind {
                SlotKind::Location(lc) => {
                    location_slots += 1;
                    let enc = LocationEncoder::new(&mut store, &format!("{name}.loc"), lc, rng)?;
                    (SlotEncoder::Location(enc), None)
                }
                SlotKind::Features {
                    input,
                    hidden,
                    reconstruct,
                } => {
                    let mean = store.add(format!("{name}.stats.mean"), Tensor::zeros(vec![*input])?, false);
                    let std = store.add(format!("{name}.stats.std"), Tensor::filled(vec![*input], 1.0)?, false);
                    let mlp = if hidden.is_empty() {
                        None
                    } else {
                        let mut widths = vec![*input];
                        widths.extend(hidden);
                        Some(Mlp::new(&mut store, &format!("{name}.enc"), &widths, true, rng))
                    };
                    let recon = reconstruct.then(|| {
                        let r = recon_width..recon_width + input;
                        recon_width += input;
                        r
                    });
                    (
                        SlotEncoder::Features {
                            input: *input,
                            mlp,
                            mean,
                            std,
                        },
                        recon,
                    )
                }
            };
            let latent = match &encoder {
                SlotEncoder::Location(l) => l.output_width(),
                SlotEncoder::Features { input, mlp, .. } => {
                    mlp.as_ref().map_or(*input, Mlp::output_width)
                }
            };
            let proj = Linear::new(&mut store, &format!("{name}.proj"), latent, cfg.d, rng);
            let pos_data = (0..cfg.d).map(|_| pos_dist.sample(rng)).collect();
            let pos = store.add(format!("{name}.pos"), Tensor::new(vec![cfg.d], pos_data)?, true);
            slots.push(Slot {
                name: sc.name.clone(),
                encoder,
                proj,
                pos,
                recon,
            });
        }
        if location_slots > 1 {
            return Err(Error::Contract("at most one coordinate slot is supported".into()));
        }
        if recon_width == 0 {
            return Err(Error::Contract("no slot is marked for reconstruction".into()));
        }
        let block = TransformerBlock::new(&mut store, "block", &cfg, rng);
        let contrastive = Head::new(&mut store, "head.contrastive", cfg.d, cfg.contrastive_width, cfg.ln_eps, rng);
        let reconstruction = Head::new(&mut store, "head.reconstruction", cfg.d, recon_width, cfg.ln_eps, rng);
        let log_tau = store.add("log_tau", Tensor::scalar(cfg.tau_init.ln()), true);
        Ok(Self {
            cfg,
            store,
            slots,
            block,
            contrastive,
            reconstruction,
            log_tau,
            recon_width,
        })
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn d(&self) -> usize {
        self.cfg.d
    }

    pub fn recon_width(&self) -> usize {
        self.recon_width
    }

    pub fn temperature(&self) -> f64 {
        self.store.get(self.log_tau).data()[0].exp()
    }

    pub fn location_encoder(&self) -> Option<(ModalityId, &LocationEncoder)> {
        self.slots.iter().enumerate().find_map(|(i, s)| match &s.encoder {
            SlotEncoder::Location(l) => Some((ModalityId(i), l)),
            _ => None,
        })
    }

    /// Slots the reconstruction head targets.
    pub fn reconstructed(&self) -> ModalitySet {
        ModalitySet::from_ids(
            self.slots
                .iter()
                .enumerate()
                .filter(|(_, s)| s.recon.is_some())
                .map(|(i, _)| ModalityId(i)),
        )
    }

    fn slot(&self, m: ModalityId) -> Result<&Slot> {
        self.slots
            .get(m.0)
            .ok_or_else(|| Error::Contract(format!("no modality slot {}", m.0)))
    }

    /// Stored z-score statistics of a feature slot.
    pub fn input_stats(&self, m: ModalityId) -> Result<ZStats> {
        match &self.slot(m)?.encoder {
            SlotEncoder::Features { mean, std, .. } => Ok(ZStats {
                mean: self.store.get(*mean).data().to_vec(),
                std: self.store.get(*std).data().to_vec(),
            }),
            SlotEncoder::Location(_) => Err(Error::Contract(format!(
                "slot {} is a coordinate slot",
                m.0
            ))),
        }
    }

    pub fn set_input_stats(&mut self, m: ModalityId, stats: &ZStats) -> Result<()> {
        let (mean, std, input) = match &self.slot(m)?.encoder {
            SlotEncoder::Features { mean, std, input, .. } => (*mean, *std, *input),
            SlotEncoder::Location(_) => {
                return Err(Error::Contract(format!("slot {} is a coordinate slot", m.0)))
            }
        };
        if stats.mean.len() != input || stats.std.len() != input {
            return Err(Error::Contract(format!(
                "stats width {} does not match slot width {input}",
                stats.mean.len()
            )));
        }
        self.store.get_mut(mean).data_mut().copy_from_slice(&stats.mean);
        self.store.get_mut(std).data_mut().copy_from_slice(&stats.std);
        Ok(())
    }

    /// z-normalized latent targets of a feature slot for a batch.
    pub fn normalized_input(&self, m: ModalityId, raw: &Tensor) -> Result<Tensor> {
        self.input_stats(m)?.apply(raw)
    }

    /// Slot encoder output (the latent that gets projected into a token).
    pub fn latent(&self, g: &mut Graph, m: ModalityId, input: &SlotBatch) -> Result<Var> {
        let slot = self.slot(m)?;
        match (&slot.encoder, input) {
            (SlotEncoder::Location(enc), SlotBatch::Location { rff, .. }) => {
                let feats: Vec<Var> = rff.iter().map(|f| g.input(f.clone())).collect();
                enc.forward_features(g, &feats)
            }
            (SlotEncoder::Features { input, mlp, .. }, SlotBatch::Features(raw)) => {
                if raw.cols() != *input {
                    return Err(crate::tensor::TensorError::ShapeMismatch {
                        op: "latent",
                        left: vec![*input],
                        right: raw.shape().to_vec(),
                    }
                    .into());
                }
                let h = g.input(self.normalized_input(m, raw)?);
                match mlp {
                    Some(mlp) => Ok(mlp.forward(g, h)?),
                    None => Ok(h),
                }
            }
            _ => Err(Error::Contract(format!(
                "slot {} received input of the wrong kind",
                m.0
            ))),
        }
    }

    /// `GELU(latent·W + b) + pos`.
    pub fn project_modality(&self, g: &mut Graph, m: ModalityId, latent: Var) -> Result<Var> {
        let slot = self.slot(m)?;
        let width = g.value(latent).cols();
        if width != slot.proj.fan_in {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "project_modality",
                left: vec![slot.proj.fan_in],
                right: g.value(latent).shape().to_vec(),
            }
            .into());
        }
        let y = slot.proj.forward(g, latent)?;
        let y = g.tape.gelu(y);
        let pos = g.param(slot.pos);
        Ok(g.tape.add_row_bias(y, pos)?)
    }

    /// Tokens for every slot available in the batch.
    pub fn tokens(&self, g: &mut Graph, batch: &Batch) -> Result<Vec<(ModalityId, Var)>> {
        let mut out = Vec::new();
        for m in batch.available.iter() {
            let input = batch.slots.get(m.0).and_then(Option::as_ref).ok_or_else(|| {
                Error::Contract(format!("batch lacks data for available slot {}", m.0))
            })?;
            let h = self.latent(g, m, input)?;
            out.push((m, self.project_modality(g, m, h)?));
        }
        Ok(out)
    }

    /// Fuses the tokens of the `kept` slots. Every other position of the
    /// length-K sequence is a zero vector; output is the mean over all K
    /// positions after one transformer block.
    pub fn fuse(&self, g: &mut Graph, tokens: &[(ModalityId, Var)], kept: ModalitySet) -> Result<Var> {
        let k = self.num_slots();
        if kept.is_empty() {
            return Err(Error::Contract("fusion needs at least one kept slot".into()));
        }
        let mut seq: Vec<Option<Var>> = vec![None; k];
        for m in kept.iter() {
            if m.0 >= k {
                return Err(Error::Contract(format!("no modality slot {}", m.0)));
            }
            let tok = tokens
                .iter()
                .find(|(id, _)| *id == m)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Contract(format!("modality {} is not available", m.0)))?;
            seq[m.0] = Some(tok);
        }
        let x = g.tape.interleave_rows(&seq)?;
        let y = self.block.forward(g, x, k)?;
        Ok(g.tape.mean_groups(y, k)?)
    }

    pub fn contrastive_head(&self, g: &mut Graph, z: Var) -> Result<Var> {
        self.contrastive.forward(g, z)
    }

    pub fn reconstruction_head(&self, g: &mut Graph, z: Var) -> Result<Var> {
        self.reconstruction.forward(g, z)
    }

    /// Fused embedding from all available slots, without a tape.
    pub fn embed(&self, batch: &Batch) -> Result<Tensor> {
        let mut g = Graph::new(&self.store, false);
        let tokens = self.tokens(&mut g, batch)?;
        let z = self.fuse(&mut g, &tokens, batch.available)?;
        Ok(g.value(z).clone())
    }
}
