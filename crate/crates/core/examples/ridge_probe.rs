//! Fits a leave-one-out tuned ridge probe to noisy linear data and reports
//! k-fold R².
//!
//! ```text
//! cargo run --example ridge_probe
//! ```

use rand::Rng as _;
use rand_distr::StandardNormal;
use smf_lab::probe::{alpha_grid, kfold_ridge_r2, ridge_fit_loo};
use smf_lab::rng::{stream_rng, Stream};
use smf_lab::tensor::Tensor;

fn main() -> smf_lab::Result<()> {
    let mut rng = stream_rng(5, Stream::Data);
    let (n, d) = (400, 6);
    let truth = [1.5, -2.0, 0.0, 0.5, 0.0, 3.0];
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let noise: f64 = rng.sample(StandardNormal);
        y.push(row.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + 0.5 * noise);
        x.extend(row);
    }
    let x = Tensor::new(vec![n, d], x)?;
    let alphas = alpha_grid();
    let model = ridge_fit_loo(&x, &y, &alphas)?;
    println!("chosen alpha {:.4}", model.alpha);
    println!("weights on standardized features {:.3?}", model.weights);
    let cv = kfold_ridge_r2(&x, &y, 5, &alphas, 5)?;
    println!("5-fold R² {:.4} (folds {:.4?})", cv.mean_r2, cv.fold_r2);
    Ok(())
}
