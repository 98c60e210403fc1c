//! Builds a small expression on the tape, runs reverse mode, and compares
//! against central differences.
//!
//! ```text
//! cargo run --example autodiff_gradcheck
//! ```

use smf_lab::tensor::{backward, Tape, Tensor};

fn loss(x: &Tensor, w: &Tensor) -> smf_lab::Result<(f64, Tensor)> {
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let wv = t.leaf(w.clone(), true);
    let h = t.matmul(xv, wv)?;
    let h = t.gelu(h);
    let p = t.log_softmax_rows(h);
    let s = t.sum(p);
    let value = t.value(s).item()?;
    let grads = backward(&t, s)?;
    Ok((value, grads.wrt(wv)))
}

fn main() -> smf_lab::Result<()> {
    let x = Tensor::from_rows(&[[0.3, -1.2, 0.5], [1.1, 0.4, -0.7]])?;
    let w = Tensor::from_rows(&[[0.2, -0.4], [0.9, 0.1], [-0.3, 0.6]])?;
    let (value, analytic) = loss(&x, &w)?;
    println!("loss {value:.10}");
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let mut plus = w.clone();
        plus.data_mut()[i] += h;
        let mut minus = w.clone();
        minus.data_mut()[i] -= h;
        let numeric = (loss(&x, &plus)?.0 - loss(&x, &minus)?.0) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(rel);
        println!("dW[{i}] analytic {a:+.8} numeric {numeric:+.8}");
    }
    println!("max relative error {worst:.2e}");
    Ok(())
}
