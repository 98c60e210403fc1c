mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;

use common::{uniform, small_fusion_config};
use smf_lab::fusion::{FusionModel, SlotKind};
use smf_lab::geo::{equal_earth_project, rff_features, GeoCoordinate, RffBasis};
use smf_lab::nn::{Graph, ParamStore};
use smf_lab::objective::{info_nce, latent_reconstruction_loss};
use smf_lab::optim::{OptimizerConfig, OptimizerState};
use smf_lab::pid::{DatasetSpec, generate_dataset, Split};
use smf_lab::probe::{kfold_assign, kfold_ridge_r2, r2_score, alpha_grid};
use smf_lab::rng::{stream_rng, Stream};
use smf_lab::tensor::{backward, Tape, Tensor};
use smf_lab::train::{availability_profile, Regime};

fn matrix(rows: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Tensor {
    uniform(&[rows, cols], lo, hi, &mut stream_rng(seed, Stream::Data))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..7, shift in -50.0f64..50.0) {
        let x = matrix(rows, cols, seed, -2.0, 2.0);
        let shifted = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v + shift).collect()).unwrap();
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(x), tape.constant(shifted));
        let (sa, sb) = (tape.softmax_rows(a), tape.softmax_rows(b));
        for i in 0..rows {
            let s: f64 = tape.value(sa).row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        for (p, q) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_bitwise_deterministic(seed in any::<u64>()) {
        let run = || {
            let mut tape = Tape::new();
            let a = tape.leaf(matrix(3, 4, seed, -2.0, 2.0), true);
            let b = tape.leaf(matrix(4, 5, seed ^ 1, -2.0, 2.0), true);
            let m = tape.matmul(a, b).unwrap();
            let g = tape.gelu(m);
            let s = tape.log_softmax_rows(g);
            let l = tape.sum(s);
            let grads = backward(&tape, l).unwrap();
            (grads.wrt(a), grads.wrt(b))
        };
        let (x, y) = (run(), run());
        prop_assert!(x.0.data().iter().zip(y.0.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert!(x.1.data().iter().zip(y.1.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn equal_earth_symmetries(lat in -90.0f64..=90.0, lon in -180.0f64..=180.0) {
        let p = equal_earth_project(GeoCoordinate::new(lat, lon).unwrap());
        let west = equal_earth_project(GeoCoordinate::new(lat, -lon).unwrap());
        let south = equal_earth_project(GeoCoordinate::new(-lat, lon).unwrap());
        prop_assert!((west.x + p.x).abs() < 1e-12 && (west.y - p.y).abs() < 1e-12);
        prop_assert!((south.y + p.y).abs() < 1e-12 && (south.x - p.x).abs() < 1e-12);
    }

    #[test]
    fn rff_entries_are_bounded(seed in any::<u64>(), sigma in 0.5f64..300.0, x in -3.0f64..3.0, y in -2.0f64..2.0) {
        let basis = RffBasis::new(seed, sigma, 32).unwrap();
        let p = equal_earth_project(GeoCoordinate::new(0.0, 0.0).unwrap());
        let q = smf_lab::geo::ProjectedPoint { x: p.x + x, y: p.y + y };
        prop_assert!(rff_features(q, &basis).iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn reconstruction_width_is_sum_of_latent_widths(widths in prop::collection::vec(1usize..6, 1..4), seed in any::<u64>()) {
        let mut cfg = small_fusion_config(widths.len(), 4, 2, seed);
        for (slot, &w) in cfg.slots.iter_mut().skip(1).zip(&widths) {
            slot.kind = SlotKind::Features { input: w, hidden: vec![], reconstruct: true };
        }
        let model = FusionModel::new(cfg, &mut stream_rng(seed, Stream::Init)).unwrap();
        prop_assert_eq!(model.recon_width(), widths.iter().sum::<usize>());
    }

    #[test]
    fn info_nce_swap_symmetric_and_scale_invariant(seed in any::<u64>(), n in 1usize..9, row in 0usize..8, c in 0.01f64..100.0, tau in 0.05f64..2.0) {
        let a = matrix(n, 4, seed, -2.0, 2.0);
        let b = matrix(n, 4, seed ^ 7, -2.0, 2.0);
        let ab = info_nce(&a, &b, tau).unwrap();
        prop_assert_eq!(ab.to_bits(), info_nce(&b, &a, tau).unwrap().to_bits());
        let mut scaled = a.clone();
        for v in scaled.row_mut(row % n) {
            *v *= c;
        }
        prop_assert!((info_nce(&scaled, &b, tau).unwrap() - ab).abs() < 1e-12);
    }

    #[test]
    fn matched_pairs_stay_below_chance(seed in any::<u64>(), n in 2usize..12, tau in 0.05f64..2.0) {
        // a = b: the diagonal cosine (1) beats every off-diagonal one
        let mut a = matrix(n, 6, seed, -2.0, 2.0);
        for i in 0..n {
            a.row_mut(i)[i % 6] += 10.0 * (i / 6 + 1) as f64;
        }
        let sims_ok = (0..n).all(|i| (0..n).filter(|&j| j != i).all(|j| cos(a.row(i), a.row(j)) < 1.0 - 1e-9));
        prop_assume!(sims_ok);
        let loss = info_nce(&a, &a, tau).unwrap();
        // each of the two directions stays below log N
        prop_assert!(loss / 2.0 < (n as f64).ln());
    }

    #[test]
    fn reconstruction_loss_nonnegative_and_zero_iff_exact(seed in any::<u64>(), n in 1usize..5, bump in 0usize..12) {
        let t = matrix(n, 3, seed, -2.0, 2.0);
        let r = matrix(n, 3, seed ^ 3, -2.0, 2.0);
        let eval = |ra: &Tensor, rb: &Tensor| {
            let mut tape = Tape::new();
            let (ra, rb, tt) = (tape.constant(ra.clone()), tape.constant(rb.clone()), tape.constant(t.clone()));
            let l = latent_reconstruction_loss(&mut tape, ra, rb, tt, &[0..3]).unwrap();
            tape.value(l).item().unwrap()
        };
        prop_assert!(eval(&r, &t) >= 0.0);
        prop_assert_eq!(eval(&t, &t), 0.0);
        let mut off = t.clone();
        off.data_mut()[bump % (3 * n)] += 1e-3;
        prop_assert!(eval(&t, &off) > 0.0);
    }

    #[test]
    fn temperature_stays_positive(steps in 1usize..50, grad in -10.0f64..10.0) {
        let mut store = ParamStore::new();
        let id = store.add("log_tau", Tensor::new(vec![1], vec![0.07f64.ln()]).unwrap(), true);
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.9), &store);
        for _ in 0..steps {
            opt.apply(&mut store, &[Tensor::new(vec![1], vec![grad]).unwrap()], 0.1).unwrap();
        }
        prop_assert!(store.get(id).data()[0].exp() > 0.0);
    }

    #[test]
    fn regimes_hold_their_shapes(n in 1usize..400, slots in 3usize..6, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, Stream::Availability);
        let bi = availability_profile(n, slots, Regime::Bimodal, &mut rng).unwrap();
        prop_assert!(bi.iter().all(|s| s.len() == 2 && s.contains(smf_lab::fusion::ModalityId(0))));
        let part = availability_profile(n, slots, Regime::Partial, &mut rng).unwrap();
        let m = slots - 1;
        for extra in 1..=m {
            let count = part.iter().filter(|s| s.len() == extra + 1).count() as f64;
            prop_assert!((count - n as f64 / m as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn holdout_region_is_disjoint(grid in 4usize..40, seed in any::<u64>()) {
        let spec = DatasetSpec { grid, ..DatasetSpec::default() };
        let ds = generate_dataset(&spec, seed).unwrap();
        for s in &ds.samples {
            prop_assert_eq!(s.split == Split::Holdout, spec.in_holdout(s.location));
        }
    }

    #[test]
    fn r2_shift_invariant_not_scale_invariant(seed in any::<u64>(), shift in -100.0f64..100.0, scale in 1.5f64..10.0) {
        let y = matrix(1, 12, seed, -2.0, 2.0).into_data();
        let p = matrix(1, 12, seed ^ 5, -2.0, 2.0).into_data();
        let base = r2_score(&y, &p).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let ps: Vec<f64> = p.iter().map(|v| v + shift).collect();
        prop_assert!((r2_score(&ys, &ps).unwrap() - base).abs() < 1e-9);
        // scaling only the predictions moves the score
        let pk: Vec<f64> = p.iter().map(|v| v * scale).collect();
        prop_assert!((r2_score(&y, &pk).unwrap() - base).abs() > 1e-6);
    }

    #[test]
    fn folds_partition_rows(n in 5usize..200, k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let folds = kfold_assign(n, k, seed).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Per-fold alpha selection uses training rows only: scrambling the
    /// held-out targets of a fold leaves that fold's alpha unchanged.
    #[test]
    fn fold_alpha_ignores_held_out_targets(seed in any::<u64>()) {
        let n = 60;
        let x = matrix(n, 4, seed, -1.0, 1.0);
        let mut rng = stream_rng(seed, Stream::Shuffle);
        let y: Vec<f64> = (0..n).map(|i| x.row(i)[0] - 0.5 * x.row(i)[2] + 0.3 * uniform(&[1], -1.0, 1.0, &mut rng).data()[0]).collect();
        let alphas = alpha_grid();
        let base = kfold_ridge_r2(&x, &y, 5, &alphas, seed).unwrap();
        let folds = kfold_assign(n, 5, seed).unwrap();
        for (f, held) in folds.iter().enumerate() {
            let mut scrambled = y.clone();
            let mut vals: Vec<f64> = held.iter().map(|&i| y[i]).collect();
            vals.shuffle(&mut rng);
            vals.iter_mut().for_each(|v| *v = -*v * 3.0);
            for (&i, v) in held.iter().zip(vals) {
                scrambled[i] = v;
            }
            let r = kfold_ridge_r2(&x, &scrambled, 5, &alphas, seed).unwrap();
            prop_assert_eq!(r.fold_alpha[f], base.fold_alpha[f]);
        }
    }
}

#[test]
fn graph_binds_each_param_once() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
    let mut g = Graph::new(&store, true);
    assert_eq!(g.param(id), g.param(id));
}
