//! Mask sampling, symmetric InfoNCE, latent reconstruction, and the
//! weighted total.

use std::ops::Range;

use rand::Rng as _;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::fusion::{FusionModel, MaskScheme, ModalityId, ModalitySet};
use crate::nn::Graph;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const ZNORM_EPS: f64 = 1e-8;

/// Per-dimension mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ZStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZStats {
    pub fn fit(x: &Tensor) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        if n < 2 {
            return Err(Error::Contract(format!(
                "normalization needs at least 2 samples, got {n}"
            )));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.mean.len() {
            return Err(TensorError::ShapeMismatch {
                op: "znormalize",
                left: vec![self.mean.len()],
                right: x.shape().to_vec(),
            }
            .into());
        }
        let mut out = x.clone();
        let d = self.mean.len();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = (*v - self.mean[j]) / self.std[j].max(ZNORM_EPS);
        }
        Ok(out)
    }
}

/// Fits statistics on `train` and returns them with the normalized rows.
pub fn znormalize_latents(train: &Tensor) -> Result<(ZStats, Tensor)> {
    let stats = ZStats::fit(train)?;
    let normalized = stats.apply(train)?;
    Ok((stats, normalized))
}

/// The `2^n − 2` schemes of `available`; scheme `r` masks the members whose
/// bit is set in `r`.
pub fn enumerate_schemes(available: ModalitySet) -> Result<Vec<MaskScheme>> {
    let n = available.len();
    if n < 2 {
        return Err(Error::Contract(format!(
            "{n} available modalities admit no bipartition"
        )));
    }
    let members: Vec<ModalityId> = available.iter().collect();
    (1..(1u64 << n) - 1)
        .map(|r| MaskScheme::new(subset_from_code(&members, r), available))
        .collect()
}

fn subset_from_code(members: &[ModalityId], code: u64) -> ModalitySet {
    ModalitySet::from_ids(
        members
            .iter()
            .enumerate()
            .filter(|(i, _)| code & (1 << i) != 0)
            .map(|(_, m)| *m),
    )
}

/// Uniform draw over the ordered bipartitions of `available`.
pub fn sample_mask(available: ModalitySet, rng: &mut Rng) -> Result<MaskScheme> {
    let n = available.len();
    if n < 2 {
        return Err(Error::Contract(format!(
            "{n} available modalities admit no bipartition"
        )));
    }
    let members: Vec<ModalityId> = available.iter().collect();
    let code = rng.gen_range(1..(1u64 << n) - 1);
    MaskScheme::new(subset_from_code(&members, code), available)
}

/// Symmetric InfoNCE between row-aligned views with temperature
/// `exp(log_tau)`. Both log-softmax directions count in full.
pub fn info_nce_symmetric(tape: &mut Tape, a: Var, b: Var, log_tau: Var) -> Result<Var> {
    let (sa, sb) = (tape.value(a).shape().to_vec(), tape.value(b).shape().to_vec());
    if sa.len() != 2 || sa != sb {
        return Err(TensorError::ShapeMismatch {
            op: "info_nce_symmetric",
            left: sa,
            right: sb,
        }
        .into());
    }
    let n = sa[0] as f64;
    let an = tape.l2_normalize_rows(a)?;
    let bn = tape.l2_normalize_rows(b)?;
    let sim = tape.matmul_nt(an, bn)?;
    let neg = tape.scale(log_tau, -1.0);
    let inv_tau = tape.exp(neg);
    let logits = tape.mul_scalar(sim, inv_tau)?;
    let ab = tape.log_softmax_rows(logits);
    let logits_t = tape.transpose(logits)?;
    let ba = tape.log_softmax_rows(logits_t);
    let d1 = tape.diag_sum(ab)?;
    let d2 = tape.diag_sum(ba)?;
    let s = tape.add(d1, d2)?;
    Ok(tape.scale(s, -1.0 / n))
}

/// Value-only InfoNCE.
pub fn info_nce(a: &Tensor, b: &Tensor, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Contract(format!("temperature must be positive, got {tau}")));
    }
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let lt = tape.constant(Tensor::scalar(tau.ln()));
    let l = info_nce_symmetric(&mut tape, va, vb, lt)?;
    Ok(tape.value(l).item()?)
}

/// `(1/(2·|slices|·N)) Σ_rows Σ_slices (‖r_a − h‖² + ‖r_b − h‖²)`: the
/// per-sample loss averaged over the batch.
pub fn latent_reconstruction_loss(
    tape: &mut Tape,
    recon_a: Var,
    recon_b: Var,
    targets: Var,
    slices: &[Range<usize>],
) -> Result<Var> {
    let shape = tape.value(targets).shape().to_vec();
    for v in [recon_a, recon_b] {
        if tape.value(v).shape() != shape.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "latent_reconstruction_loss",
                left: tape.value(v).shape().to_vec(),
                right: shape,
            }
            .into());
        }
    }
    if slices.is_empty() {
        return Err(Error::Contract("no modality to reconstruct".into()));
    }
    let width = shape[1];
    let mut cols = Vec::new();
    for s in slices {
        if s.end > width || s.is_empty() {
            return Err(Error::Contract(format!("slice {s:?} outside width {width}")));
        }
        cols.extend(s.clone());
    }
    let full = cols.len() == width && cols.iter().enumerate().all(|(i, &c)| i == c);
    let pick = |tape: &mut Tape, v: Var| -> Result<Var> {
        Ok(if full { v } else { tape.select_columns(v, &cols)? })
    };
    let t = pick(tape, targets)?;
    let mut total = None;
    for r in [recon_a, recon_b] {
        let r = pick(tape, r)?;
        let diff = tape.sub(r, t)?;
        let sq = tape.mul(diff, diff)?;
        let s = tape.sum(sq);
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let n = shape[0] as f64;
    let total = total.expect("two views");
    Ok(tape.scale(total, 1.0 / (2.0 * slices.len() as f64 * n)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub reconstruction: f64,
    pub total: f64,
    pub tau: f64,
    pub lambda: f64,
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Contract(format!("lambda {lambda} outside [0, 1]")))
    }
}

pub fn total_loss(contrastive: f64, reconstruction: f64, lambda: f64, tau: f64) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    Ok(LossBreakdown {
        contrastive,
        reconstruction,
        total: (1.0 - lambda) * contrastive + lambda * reconstruction,
        tau,
        lambda,
    })
}

/// Tape nodes of one training loss.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub contrastive: Var,
    pub reconstruction: Option<Var>,
    pub total: Var,
}

/// A fusion model wired to the SMF objective with weight `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmfModel {
    pub fusion: FusionModel,
    pub lambda: f64,
}

impl SmfModel {
    pub fn new(fusion: FusionModel, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self { fusion, lambda })
    }

    /// z-normalized targets laid out like the reconstruction head, plus the
    /// column ranges of the available reconstructed slots.
    pub fn reconstruction_targets(&self, batch: &Batch) -> Result<(Tensor, Vec<Range<usize>>)> {
        let w = self.fusion.recon_width();
        let mut out = Tensor::zeros(vec![batch.len(), w])?;
        let mut slices = Vec::new();
        for m in batch.available.intersection(self.fusion.reconstructed()).iter() {
            let range = self.fusion.slots[m.0].recon.clone().expect("reconstructed slot");
            let z = self.fusion.normalized_input(m, batch.features(m)?)?;
            for r in 0..batch.len() {
                out.row_mut(r)[range.clone()].copy_from_slice(z.row(r));
            }
            slices.push(range);
        }
        Ok((out, slices))
    }

    fn scheme_loss(
        &self,
        g: &mut Graph,
        tokens: &[(ModalityId, Var)],
        targets: Var,
        slices: &[Range<usize>],
        scheme: &MaskScheme,
    ) -> Result<LossVars> {
        let f = &self.fusion;
        let z_masked = f.fuse(g, tokens, scheme.masked())?;
        let z_kept = f.fuse(g, tokens, scheme.kept())?;
        let p_masked = f.contrastive_head(g, z_masked)?;
        let p_kept = f.contrastive_head(g, z_kept)?;
        let log_tau = g.param(f.log_tau);
        let contrastive = info_nce_symmetric(&mut g.tape, p_masked, p_kept, log_tau)?;
        let r_masked = f.reconstruction_head(g, z_masked)?;
        let r_kept = f.reconstruction_head(g, z_kept)?;
        let reconstruction = latent_reconstruction_loss(&mut g.tape, r_masked, r_kept, targets, slices)?;
        let a = g.tape.scale(contrastive, 1.0 - self.lambda);
        let b = g.tape.scale(reconstruction, self.lambda);
        let total = g.tape.add(a, b)?;
        Ok(LossVars {
            contrastive,
            reconstruction: Some(reconstruction),
            total,
        })
    }

    /// Both views of `scheme`, both heads, and the weighted total.
    pub fn loss(&self, g: &mut Graph, batch: &Batch, scheme: &MaskScheme) -> Result<LossVars> {
        if scheme.available() != batch.available {
            return Err(Error::Contract(format!(
                "scheme over {:?} does not match batch availability {:?}",
                scheme.available(),
                batch.available
            )));
        }
        let tokens = self.fusion.tokens(g, batch)?;
        let (t, slices) = self.reconstruction_targets(batch)?;
        let targets = g.input(t);
        self.scheme_loss(g, &tokens, targets, &slices, scheme)
    }

    /// Mean breakdown over every scheme of the batch's availability set.
    /// Tokens are computed once and shared by all schemes.
    pub fn mean_scheme_loss(&self, batch: &Batch) -> Result<LossBreakdown> {
        let mut g = Graph::new(&self.fusion.store, false);
        let tokens = self.fusion.tokens(&mut g, batch)?;
        let (t, slices) = self.reconstruction_targets(batch)?;
        let targets = g.input(t);
        let schemes = enumerate_schemes(batch.available)?;
        let (mut c, mut r, mut tot) = (0.0, 0.0, 0.0);
        for s in &schemes {
            let l = self.scheme_loss(&mut g, &tokens, targets, &slices, s)?;
            c += g.value(l.contrastive).item()?;
            r += g.value(l.reconstruction.expect("smf loss")).item()?;
            tot += g.value(l.total).item()?;
        }
        let k = schemes.len() as f64;
        Ok(LossBreakdown {
            contrastive: c / k,
            reconstruction: r / k,
            total: tot / k,
            tau: self.fusion.temperature(),
            lambda: self.lambda,
        })
    }
}
