//! Linear probing: ridge regression tuned by closed-form leave-one-out,
//! k-fold evaluation, the regression/classification metrics, and PCA.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

/// 100 log-spaced values from 1e-4 to 1e4 inclusive.
pub fn alpha_grid() -> Vec<f64> {
    (0..100)
        .map(|i| 10f64.powf(-4.0 + 8.0 * i as f64 / 99.0))
        .collect()
}

const STD_FLOOR: f64 = 1e-12;
const LEVERAGE_FLOOR: f64 = 1e-12;

/// Column means and population standard deviations; near-constant columns
/// keep a unit scale so they standardize to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor) -> Self {
        let (n, d) = (x.rows(), x.cols());
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
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd < STD_FLOOR {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &Tensor) -> Vec<f64> {
        let d = self.mean.len();
        x.data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect()
    }
}

/// In-place lower Cholesky factor of a `d × d` SPD matrix.
pub fn cholesky(a: &mut [f64], d: usize) -> Result<()> {
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > 0.0) {
            return Err(Error::Contract(format!(
                "matrix is not positive definite (pivot {j} = {diag})"
            )));
        }
        let l = diag.sqrt();
        a[j * d + j] = l;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / l;
        }
        for i in 0..j {
            a[i * d + j] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L z = b` in place.
fn forward_sub(l: &[f64], d: usize, b: &mut [f64]) {
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * b[k];
        }
        b[i] = s / l[i * d + i];
    }
}

/// Solves `Lᵀ z = b` in place.
fn backward_sub(l: &[f64], d: usize, b: &mut [f64]) {
    for i in (0..d).rev() {
        let mut s = b[i];
        for k in i + 1..d {
            s -= l[k * d + i] * b[k];
        }
        b[i] = s / l[i * d + i];
    }
}

/// Gram matrix `XᵀX` and `Xᵀy` of row-major `x` (`n × d`).
fn normal_equations(x: &[f64], y: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gram = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    for (row, &yi) in x.chunks_exact(d).zip(y) {
        for i in 0..d {
            xty[i] += row[i] * yi;
            for j in 0..=i {
                gram[i * d + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[j * d + i] = gram[i * d + j];
        }
    }
    (gram, xty)
}

/// Ridge weights on already standardized rows and a centered target.
pub fn ridge_solve(x: &[f64], y: &[f64], d: usize, alpha: f64) -> Result<Vec<f64>> {
    let (mut a, mut w) = normal_equations(x, y, d);
    for i in 0..d {
        a[i * d + i] += alpha;
    }
    cholesky(&mut a, d)?;
    forward_sub(&a, d, &mut w);
    backward_sub(&a, d, &mut w);
    Ok(w)
}

/// Closed-form leave-one-out residuals `eᵢ / (1 − hᵢᵢ)` for each alpha, on
/// already standardized rows and a centered target.
pub fn loo_residuals(x: &[f64], y: &[f64], d: usize, alphas: &[f64]) -> Result<Vec<Vec<f64>>> {
    let (gram, xty) = normal_equations(x, y, d);
    let mut out = Vec::with_capacity(alphas.len());
    let mut warned = false;
    let mut z = vec![0.0; d];
    for &alpha in alphas {
        let mut a = gram.clone();
        for i in 0..d {
            a[i * d + i] += alpha;
        }
        cholesky(&mut a, d)?;
        let mut w = xty.clone();
        forward_sub(&a, d, &mut w);
        backward_sub(&a, d, &mut w);
        let mut res = Vec::with_capacity(y.len());
        for (row, &yi) in x.chunks_exact(d).zip(y) {
            z.copy_from_slice(row);
            forward_sub(&a, d, &mut z);
            let h: f64 = z.iter().map(|v| v * v).sum();
            let pred: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
            let mut denom = 1.0 - h;
            if denom < LEVERAGE_FLOOR {
                if !warned {
                    log::warn!("leverage {h} clamped at alpha {alpha}");
                    warned = true;
                }
                denom = LEVERAGE_FLOOR;
            }
            res.push((yi - pred) / denom);
        }
        out.push(res);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    /// Weights on standardized features.
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub features: Standardizer,
    pub y_mean: f64,
    /// Mean squared LOO residual per grid value.
    pub loo_mse: Vec<f64>,
}

impl RidgeModel {
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let d = self.weights.len();
        if x.cols() != d {
            return Err(Error::Contract(format!(
                "ridge model expects {d} features, got {}",
                x.cols()
            )));
        }
        let xs = self.features.apply(x);
        Ok(xs
            .chunks_exact(d)
            .map(|row| self.y_mean + row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }
}

fn check_inputs(x: &Tensor, y: &[f64]) -> Result<()> {
    if x.shape().len() != 2 || x.rows() != y.len() {
        return Err(Error::Contract(format!(
            "feature rows {:?} do not match {} targets",
            x.shape(),
            y.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::Contract("ridge needs at least 2 rows".into()));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("ridge inputs must be finite".into()));
    }
    Ok(())
}

/// Standardizes features, centers the target, picks the alpha with the
/// smallest mean squared LOO residual (ties go to the larger alpha), and
/// refits on all rows.
pub fn ridge_fit_loo(x: &Tensor, y: &[f64], alphas: &[f64]) -> Result<RidgeModel> {
    check_inputs(x, y)?;
    if alphas.is_empty() || alphas.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::Contract("alphas must be a non-empty list of positive values".into()));
    }
    let d = x.cols();
    let features = Standardizer::fit(x);
    let xs = features.apply(x);
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let res = loo_residuals(&xs, &yc, d, alphas)?;
    let loo_mse: Vec<f64> = res
        .iter()
        .map(|r| r.iter().map(|e| e * e).sum::<f64>() / r.len() as f64)
        .collect();
    let mut best = 0;
    for i in 1..alphas.len() {
        let better = loo_mse[i] < loo_mse[best]
            || (loo_mse[i] == loo_mse[best] && alphas[i] > alphas[best]);
        if better {
            best = i;
        }
    }
    let alpha = alphas[best];
    let weights = ridge_solve(&xs, &yc, d, alpha)?;
    Ok(RidgeModel {
        weights,
        alpha,
        features,
        y_mean,
        loo_mse,
    })
}

/// Seeded shuffle dealt round-robin into `k` folds.
pub fn kfold_assign(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(Error::Contract(format!("cannot split {n} rows into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Folds));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (i, r) in order.into_iter().enumerate() {
        folds[i % k].push(r);
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KFoldResult {
    pub mean_r2: f64,
    pub fold_r2: Vec<f64>,
    pub fold_alpha: Vec<f64>,
}

pub fn kfold_ridge_r2(x: &Tensor, y: &[f64], k: usize, alphas: &[f64], seed: u64) -> Result<KFoldResult> {
    check_inputs(x, y)?;
    let folds = kfold_assign(y.len(), k, seed)?;
    let mut fold_r2 = Vec::with_capacity(k);
    let mut fold_alpha = Vec::with_capacity(k);
    for held in &folds {
        let mut mask = vec![true; y.len()];
        held.iter().for_each(|&r| mask[r] = false);
        let train: Vec<usize> = (0..y.len()).filter(|&r| mask[r]).collect();
        let model = ridge_fit_loo(
            &x.gather_rows(&train)?,
            &train.iter().map(|&r| y[r]).collect::<Vec<_>>(),
            alphas,
        )?;
        let pred = model.predict(&x.gather_rows(held)?)?;
        let truth: Vec<f64> = held.iter().map(|&r| y[r]).collect();
        fold_r2.push(r2_score(&truth, &pred)?);
        fold_alpha.push(model.alpha);
    }
    Ok(KFoldResult {
        mean_r2: fold_r2.iter().sum::<f64>() / k as f64,
        fold_r2,
        fold_alpha,
    })
}

/// `1 − SS_res/SS_tot`, defined as 0 for a constant target.
pub fn r2_score(y: &[f64], pred: &[f64]) -> Result<f64> {
    if y.len() != pred.len() || y.len() < 2 {
        return Err(Error::Contract(format!(
            "r2 needs equal lengths of at least 2, got {} and {}",
            y.len(),
            pred.len()
        )));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Ok(0.0);
    }
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mse(y: &[f64], pred: &[f64]) -> Result<f64> {
    if y.len() != pred.len() || y.is_empty() {
        return Err(Error::Contract("mse needs equal non-empty lengths".into()));
    }
    Ok(y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Support-weighted mean of per-class F1 over the classes present in
/// `y_true`.
pub fn weighted_f1(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::Contract("weighted F1 needs equal non-empty label lists".into()));
    }
    let mut stats: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == p {
            stats.entry(t).or_default().0 += 1;
        } else {
            stats.entry(p).or_default().1 += 1;
            stats.entry(t).or_default().2 += 1;
        }
    }
    let mut total = 0.0;
    for &(tp, fp, fn_) in stats.values() {
        let support = tp + fn_;
        if support == 0 {
            continue;
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = tp as f64 / support as f64;
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        total += support as f64 * f1;
    }
    Ok(total / y_true.len() as f64)
}

/// Mean negative log-probability of the true labels, with probabilities
/// clamped at 1e-12.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if probs.shape().len() != 2 || probs.rows() != labels.len() {
        return Err(Error::Contract("one probability row per label is required".into()));
    }
    let mut total = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        let row = probs.row(r);
        let s: f64 = row.iter().sum();
        if l >= row.len() || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("row {r} is not a probability vector over label {l}")));
        }
        total -= row[l].max(1e-12).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Projection onto the top `k` principal components and their variances.
/// Each component's sign makes its largest-magnitude loading positive.
pub fn pca(x: &Tensor, k: usize) -> Result<(Tensor, Vec<f64>)> {
    let (n, d) = (x.rows(), x.cols());
    if k == 0 || k > d || n < 2 {
        return Err(Error::Contract(format!("cannot take {k} components of {n}×{d} data")));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|r| x.row(r)[j]).sum::<f64>() / n as f64)
        .collect();
    let centered = nalgebra::DMatrix::from_fn(n, d, |r, c| x.row(r)[c] - mean[c]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut data = vec![0.0; n * k];
    let mut variances = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map_or(0, |(i, _)| i);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|e| *e = -*e);
        }
        for r in 0..n {
            data[r * k + c] = (0..d).map(|j| centered[(r, j)] * v[j]).sum();
        }
        variances.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok((Tensor::new(vec![n, k], data)?, variances))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = alpha_grid();
        assert_eq!(g.len(), 100);
        assert!((g[0] - 1e-4).abs() < 1e-18);
        assert!((g[99] - 1e4).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn r2_examples() {
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap(), 0.5);
        assert_eq!(r2_score(&[4.0, 4.0], &[1.0, 9.0]).unwrap(), 0.0);
        assert!(r2_score(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(weighted_f1(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(weighted_f1(&[0, 0, 0, 1], &[0, 0, 0, 0]).unwrap(), 0.75 * (2.0 * 0.75 / 1.75));
        assert_eq!(weighted_f1(&[3, 3], &[3, 3]).unwrap(), 1.0);
        assert!(weighted_f1(&[], &[]).is_err());
    }

    #[test]
    fn mse_and_ce_examples() {
        assert_eq!(mse(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mse(&[0.5, 2.0], &[0.5, 2.0]).unwrap(), 0.0);
        let p = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(cross_entropy(&p, &[0, 1]).unwrap().abs() < 1e-15);
        let wrong = cross_entropy(&p, &[1, 1]).unwrap();
        assert!((wrong - 0.5 * -(1e-12f64).ln()).abs() < 1e-9);
        let bad = Tensor::from_rows(&[[0.7, 0.7]]).unwrap();
        assert!(cross_entropy(&bad, &[0]).is_err());
    }

    #[test]
    fn cholesky_reconstructs() {
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        cholesky(&mut a, 2).unwrap();
        assert_eq!(a, vec![2.0, 0.0, 1.0, 2f64.sqrt()]);
        let mut bad = vec![1.0, 2.0, 2.0, 1.0];
        assert!(cholesky(&mut bad, 2).is_err());
    }

    #[test]
    fn huge_alpha_predicts_the_mean() {
        let x = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [3.0, -1.0]]).unwrap();
        let y = [1.0, 2.0, 5.0, 0.0];
        let m = ridge_fit_loo(&x, &y, &[1e12]).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-9));
        for p in m.predict(&x).unwrap() {
            assert!((p - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn folds_partition_with_balanced_sizes() {
        let f = kfold_assign(23, 5, 9).unwrap();
        let mut all: Vec<usize> = f.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        let sizes: Vec<usize> = f.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(kfold_assign(3, 5, 0).is_err());
    }

    #[test]
    fn pca_rank_one_and_ordering() {
        let rows: Vec<[f64; 3]> = (0..20).map(|i| {
            let t = i as f64 - 7.5;
            [t, 2.0 * t, -t]
        }).collect();
        let (p, var) = pca(&Tensor::from_rows(&rows).unwrap(), 3).unwrap();
        for r in 0..20 {
            assert!(p.row(r)[1].abs() < 1e-9 && p.row(r)[2].abs() < 1e-9);
        }
        assert!(var[0] >= var[1] && var[1] >= var[2]);
    }
}
