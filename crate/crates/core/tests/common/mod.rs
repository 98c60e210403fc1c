#![allow(dead_code)]

use std::io::Write;

use rand::Rng as _;
use smf_lab::data::{MultimodalData, SlotColumn};
use smf_lab::fusion::{FusionConfig, FusionModel, ModalitySet, SlotConfig, SlotKind};
use smf_lab::geo::{GeoCoordinate, LocationEncoderConfig};
use smf_lab::nn::{Graph, ParamStore};
use smf_lab::objective::SmfModel;
use smf_lab::rng::{stream_rng, Rng, Stream};
use smf_lab::tensor::{backward, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, so gradients that vanish
/// analytically are compared on an absolute 1e-8 scale.
pub const FD_FLOOR: f64 = 1e-4;

/// One line on stderr that bypasses the test harness capture.
pub fn report(criterion: &str, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] criterion {criterion}: {status} ({detail})");
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Largest relative discrepancy between backpropagated gradients of every
/// trainable entry in `store` and central finite differences of `f`.
pub fn gradcheck(store: &ParamStore, f: impl Fn(&mut Graph) -> smf_lab::Result<Var>) -> f64 {
    let analytic = {
        let mut g = Graph::new(store, true);
        let loss = f(&mut g).unwrap();
        let grads = backward(&g.tape, loss).unwrap();
        g.param_grads(&grads)
    };
    let eval = |s: &ParamStore| {
        let mut g = Graph::new(s, false);
        let loss = f(&mut g).unwrap();
        g.value(loss).item().unwrap()
    };
    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for (id, grad) in ids.into_iter().zip(&analytic) {
        if !store.param(id).trainable {
            continue;
        }
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let up = eval(&work);
            work.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let down = eval(&work);
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

/// `Σ x ⊙ w` for a fixed random `w`, turning any output into a scalar loss
/// with a generic upstream gradient.
pub fn project_to_scalar(g: &mut Graph, x: Var, rng: &mut Rng) -> smf_lab::Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let w = g.input(uniform(&shape, -1.0, 1.0, rng));
    let p = g.tape.mul(x, w)?;
    Ok(g.tape.sum(p))
}

/// Coordinates plus `k` feature slots of width 3 and a tiny location encoder.
pub fn small_fusion_config(k: usize, d: usize, heads: usize, seed: u64) -> FusionConfig {
    let mut cfg = FusionConfig::synthetic(seed);
    cfg.d = d;
    cfg.heads = heads;
    cfg.ffn_mult = 2;
    cfg.contrastive_width = 5;
    cfg.slots = vec![SlotConfig {
        name: "coords".into(),
        kind: SlotKind::Location(LocationEncoderConfig {
            sigmas: vec![1.0, 16.0],
            frequencies: 8,
            hidden: vec![6],
            output: d,
            seed,
        }),
    }];
    for i in 0..k {
        cfg.slots.push(SlotConfig {
            name: format!("mod{}", i + 1),
            kind: SlotKind::Features {
                input: 3,
                hidden: vec![],
                reconstruct: true,
            },
        });
    }
    cfg
}

pub fn small_smf(k: usize, seed: u64) -> SmfModel {
    let mut rng = stream_rng(seed, Stream::Init);
    let fusion = FusionModel::new(small_fusion_config(k, 8, 2, seed), &mut rng).unwrap();
    SmfModel::new(fusion, 0.25).unwrap()
}

/// Random coordinates near the benchmark region and `k` feature columns.
pub fn random_data(n: usize, k: usize, availability: Vec<ModalitySet>, seed: u64) -> MultimodalData {
    let mut rng = stream_rng(seed, Stream::Data);
    let coords = (0..n)
        .map(|_| GeoCoordinate::new(rng.gen_range(36.9..37.1), rng.gen_range(-122.1..-121.9)).unwrap())
        .collect();
    let mut slots = vec![SlotColumn::Location(coords)];
    for _ in 0..k {
        slots.push(SlotColumn::Features(uniform(&[n, 3], -1.0, 1.0, &mut rng)));
    }
    MultimodalData::new(slots, availability).unwrap()
}
