//! Trains for a few epochs, checkpoints, resumes in a fresh trainer, and
//! checks the resumed run matches an uninterrupted one.
//!
//! ```text
//! cargo run --release --example checkpoint_resume
//! ```

use smf_lab::checkpoint::Checkpoint;
use smf_lab::pid::{build_baseline, generate_dataset, training_data, BaselineKind, DatasetSpec, PidExperiment, UniqueAugment};
use smf_lab::train::{Pretrainable, Trainer};

fn main() -> smf_lab::Result<()> {
    let dataset = generate_dataset(&DatasetSpec { grid: 32, ..DatasetSpec::default() }, 1)?;
    let mut exp = PidExperiment::default();
    exp.train.epochs = 4;
    let kind = BaselineKind::SmfFull;
    let data = training_data(&build_baseline(kind, &exp.arch, 1)?, &exp, &dataset, 1)?;

    let mut straight = Trainer::new(build_baseline(kind, &exp.arch, 1)?, exp.train.clone(), &data, 1, kind.as_str(), "")?;
    straight.train(&data, &mut UniqueAugment, |_, _| Ok(()))?;

    let mut first = Trainer::new(build_baseline(kind, &exp.arch, 1)?, exp.train.clone(), &data, 1, kind.as_str(), "")?;
    for _ in 0..2 {
        first.run_epoch(&data, &mut UniqueAugment)?;
    }
    let path = std::env::temp_dir().join("smf_lab_resume_example.ckpt");
    first.checkpoint()?.save(&path)?;
    let ck = Checkpoint::load(&path)?;
    let mut resumed = Trainer::resume(build_baseline(kind, &exp.arch, 1)?, exp.train.clone(), &data, &ck, kind.as_str(), "")?;
    println!("resumed at epoch {} after {} steps", resumed.epoch(), resumed.steps());
    resumed.train(&data, &mut UniqueAugment, |_, _| Ok(()))?;
    let _ = std::fs::remove_file(&path);

    let (a, _) = straight.finish();
    let (b, history) = resumed.finish();
    let same = a.store().iter().zip(b.store().iter()).all(|(p, q)| p.value == q.value);
    println!("final epoch train loss {:.6}", history.last().map_or(f64::NAN, |m| m.train_total));
    println!("parameters identical to the uninterrupted run: {same}");
    Ok(())
}
