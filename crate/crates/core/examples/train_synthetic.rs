//! Trains one benchmark model kind for a few epochs and prints its metrics.
//!
//! ```text
//! cargo run --release --example train_synthetic -- smf_full 5
//! ```

use std::time::Instant;

use smf_lab::pid::{generate_synthetic_dataset, run_pid_probes, train_kind, BaselineKind, PidExperiment, Split};
use smf_lab::train::metrics_csv;

fn main() -> smf_lab::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let kind: BaselineKind = args.next().as_deref().unwrap_or("smf_full").parse()?;
    let epochs: u64 = args.next().and_then(|e| e.parse().ok()).unwrap_or(5);
    let seed: u64 = args.next().and_then(|e| e.parse().ok()).unwrap_or(0);

    let dataset = generate_synthetic_dataset(seed)?;
    let mut exp = PidExperiment::default();
    exp.train.epochs = epochs;
    let start = Instant::now();
    let trained = train_kind(kind, &exp, &dataset, seed)?;
    println!("trained {kind} for {epochs} epochs in {:.1}s", start.elapsed().as_secs_f64());
    print!("{}", metrics_csv(&trained.history));

    let report = run_pid_probes(std::slice::from_ref(&trained), &dataset, Split::Val, seed)?;
    print!("{}", report.to_csv());
    let s = &report.rows[0];
    println!("lat {:.4} lon {:.4} u1 {:.4} u2 {:.4}", s.r2_lat, s.r2_lon, s.r2_u1, s.r2_u2);
    Ok(())
}
