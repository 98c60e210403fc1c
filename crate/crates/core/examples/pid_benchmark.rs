//! Trains all five model kinds, probes them, and checks the benchmark gates.
//!
//! ```text
//! SMF_LAB_THREADS=4 cargo run --release --example pid_benchmark -- 250 0 1 2
//! ```
//! Arguments: epochs, then one or more seeds.

use std::time::Instant;

use smf_lab::par::worker_threads;
use smf_lab::pid::{benchmark_gates, generate_synthetic_dataset, run_pid_probes, train_kinds, BaselineKind, PidExperiment, Split};

fn main() -> smf_lab::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let epochs = args.first().copied().unwrap_or(250);
    let seeds = if args.len() > 1 { args[1..].to_vec() } else { vec![0] };
    let mut exp = PidExperiment::default();
    exp.train.epochs = epochs;

    let mut reports = Vec::new();
    for &seed in &seeds {
        let start = Instant::now();
        let dataset = generate_synthetic_dataset(seed)?;
        let models = train_kinds(&BaselineKind::ALL, &exp, &dataset, seed, worker_threads())?;
        let report = run_pid_probes(&models, &dataset, Split::Val, seed)?;
        println!("seed {seed} ({:.0}s)", start.elapsed().as_secs_f64());
        for r in &report.rows {
            println!(
                "  {:<24} red {:.3} uni {:.3} syn {:.3} share {:.3}  (u1 {:.3} u2 {:.3})",
                r.kind.as_str(), r.redundancy, r.uniqueness, r.synergy, r.weight_share, r.r2_u1, r.r2_u2
            );
        }
        reports.push(report);
    }
    for g in benchmark_gates(&reports) {
        let status = match g.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("{status} {} ({})", g.name, g.detail);
    }
    Ok(())
}
