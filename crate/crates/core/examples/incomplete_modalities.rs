//! Shows how availability regimes thin out modalities and how the loss
//! adapts to the rows that remain.
//!
//! ```text
//! cargo run --release --example incomplete_modalities
//! ```

use smf_lab::pid::{build_baseline, generate_dataset, train_kind, training_data, BaselineKind, DatasetSpec, PidExperiment};
use smf_lab::train::{availability_profile, Regime};
use smf_lab::rng::{stream_rng, Stream};
use std::collections::BTreeMap;

fn main() -> smf_lab::Result<()> {
    for regime in [Regime::All, Regime::Bimodal, Regime::Partial] {
        let sets = availability_profile(600, 3, regime, &mut stream_rng(0, Stream::Availability))?;
        let mut counts = BTreeMap::new();
        for s in sets {
            *counts.entry(format!("{s:?}")).or_insert(0) += 1;
        }
        println!("{regime:?}: {counts:?}");
    }

    let dataset = generate_dataset(&DatasetSpec { grid: 32, ..DatasetSpec::default() }, 2)?;
    for regime in [Regime::All, Regime::Partial] {
        let mut exp = PidExperiment::default();
        exp.train.epochs = 2;
        exp.regime = regime;
        let data = training_data(&build_baseline(BaselineKind::SmfFull, &exp.arch, 2)?, &exp, &dataset, 2)?;
        let batches = data.train.batches(exp.train.batch_size, None)?;
        let trained = train_kind(BaselineKind::SmfFull, &exp, &dataset, 2)?;
        let last = trained.history.last().expect("two epochs");
        println!("{regime:?}: {} train batches, final train loss {:.4}", batches.len(), last.train_total);
    }
    Ok(())
}
