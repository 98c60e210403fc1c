//! Runs the synthetic fusion model on one batch under every masking scheme
//! of its availability set.
//!
//! ```text
//! cargo run --example fusion_forward
//! ```

use smf_lab::objective::enumerate_schemes;
use smf_lab::pid::{build_baseline, generate_synthetic_dataset, training_data, BaselineKind, PidExperiment, PidModel};
use smf_lab::nn::Graph;

fn main() -> smf_lab::Result<()> {
    let dataset = generate_synthetic_dataset(0)?;
    let exp = PidExperiment::default();
    let model = build_baseline(BaselineKind::SmfFull, &exp.arch, 0)?;
    let data = training_data(&model, &exp, &dataset, 0)?;
    let PidModel::Smf(smf) = &model else { unreachable!() };
    let (set, rows) = data.train.batches(8, None)?.remove(0);
    let batch = data.train.gather(&rows, set)?;
    println!("batch of {} rows, temperature {:.3}", batch.len(), smf.fusion.temperature());
    for scheme in enumerate_schemes(batch.available)? {
        let mut g = Graph::new(&smf.fusion.store, false);
        let l = smf.loss(&mut g, &batch, &scheme)?;
        println!(
            "masked {:?} kept {:?}: contrastive {:.4} total {:.4}",
            scheme.masked(),
            scheme.kept(),
            g.value(l.contrastive).item()?,
            g.value(l.total).item()?
        );
    }
    let z = smf.fusion.embed(&batch)?;
    println!("embedding shape {:?}", z.shape());
    Ok(())
}
