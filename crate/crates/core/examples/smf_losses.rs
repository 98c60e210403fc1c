//! Evaluates the contrastive and reconstruction terms on toy embeddings and
//! combines them with several weights.
//!
//! ```text
//! cargo run --example smf_losses
//! ```

use smf_lab::objective::{info_nce, total_loss};
use smf_lab::tensor::Tensor;

fn main() -> smf_lab::Result<()> {
    let a = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]])?;
    let aligned = a.clone();
    let shuffled = Tensor::from_rows(&[[0.0, 1.0], [0.7, 0.7], [1.0, 0.0]])?;
    for tau in [0.07, 0.5, 1.0] {
        println!(
            "tau {tau:<4}: aligned {:.5}  shuffled {:.5}",
            info_nce(&a, &aligned, tau)?,
            info_nce(&a, &shuffled, tau)?
        );
    }
    let contrastive = info_nce(&a, &shuffled, 0.5)?;
    let reconstruction = 0.8;
    for lambda in [0.0, 0.25, 0.5, 1.0] {
        let l = total_loss(contrastive, reconstruction, lambda, 0.5)?;
        println!("lambda {lambda:<4}: {l:?}");
    }
    Ok(())
}
