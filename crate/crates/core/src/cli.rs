//! Command-line front end: `generate`, `pretrain`, `probe`,
//! `export-embeddings`.
//!
//! Files under the output directory:
//!
//! * `dataset.csv`, `dataset.manifest.json`
//! * `<kind>.ckpt`, `metrics_<kind>.csv` per trained kind
//! * `pid_report.csv`
//! * `embeddings_<kind>.csv`

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::par::{map_parallel, worker_threads};
use crate::pid::{
    benchmark_gates, build_baseline, generate_dataset, run_pid_probes, training_data, BaselineKind, PidModel,
    SyntheticDataset, TrainedModel, UniqueAugment, Split,
};
use crate::probe::pca;
use crate::train::{checkpoint_history, EpochMetrics, Pretrainable, Trainer, METRICS_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_GATE: i32 = 4;
pub const EXIT_OTHER: i32 = 5;

pub const DATASET_FILE: &str = "dataset.csv";
pub const DATASET_MANIFEST: &str = "dataset.manifest.json";
pub const REPORT_FILE: &str = "pid_report.csv";

#[derive(Debug, Parser)]
#[command(name = "smf-lab", version, about = "Stochastic multimodal fusion lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes the synthetic dataset and its manifest.
    Generate(Common),
    /// Trains every configured kind on the generated dataset.
    Pretrain(Common),
    /// Probes trained checkpoints and writes the report.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Exit nonzero unless every benchmark ordering holds.
        #[arg(long)]
        gate: bool,
    },
    /// Writes per-location embeddings of every configured kind.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        /// Append the top three principal component projections.
        #[arg(long)]
        pca3: bool,
    },
}

/// Failure of a command, with its process exit code.
#[derive(Debug)]
pub enum Failure {
    Error(Error),
    Gate(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Gate(_) => EXIT_GATE,
            Failure::Error(Error::Config { .. }) => EXIT_CONFIG,
            Failure::Error(Error::Io { .. } | Error::Parse { .. } | Error::Checkpoint(CheckpointError::Io { .. })) => {
                EXIT_IO
            }
            Failure::Error(_) => EXIT_OTHER,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Error(e) => write!(f, "{e}"),
            Failure::Gate(failed) => write!(f, "benchmark gates failed: {}", failed.join(", ")),
        }
    }
}

/// Parses `args` (including the program name), runs the command, and
/// returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    match &cli.command {
        Command::Generate(c) => cmd_generate(&resolve(c)?).map(drop).map_err(Into::into),
        Command::Pretrain(c) => cmd_pretrain(&resolve(c)?).map(drop).map_err(Into::into),
        Command::Probe { common, gate } => cmd_probe(&resolve(common)?, *gate).map(drop),
        Command::ExportEmbeddings { common, pca3 } => cmd_export_embeddings(&resolve(common)?, *pca3)
            .map(drop)
            .map_err(Into::into),
    }
}

/// Loads the config (or defaults) and applies the command-line overrides.
pub fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub rows: usize,
    pub train: usize,
    pub val: usize,
    pub holdout: usize,
    pub grid: usize,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn checkpoint_path(out: &Path, kind: BaselineKind) -> PathBuf {
    out.join(format!("{kind}.ckpt"))
}

pub fn metrics_path(out: &Path, kind: BaselineKind) -> PathBuf {
    out.join(format!("metrics_{kind}.csv"))
}

pub fn embeddings_path(out: &Path, kind: BaselineKind) -> PathBuf {
    out.join(format!("embeddings_{kind}.csv"))
}

/// Generates the dataset; returns the CSV path.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let ds = generate_dataset(&cfg.dataset_spec(), cfg.seed)?;
    ensure_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join(DATASET_FILE);
    write(&path, ds.to_csv())?;
    let manifest = DatasetManifest {
        seed: cfg.seed,
        rows: ds.samples.len(),
        train: ds.rows(Split::Train).len(),
        val: ds.rows(Split::Val).len(),
        holdout: ds.rows(Split::Holdout).len(),
        grid: cfg.grid,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&cfg.out_dir.join(DATASET_MANIFEST), text + "\n")?;
    log::info!("wrote {} rows to {}", manifest.rows, path.display());
    Ok(path)
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<SyntheticDataset> {
    SyntheticDataset::read_csv(&cfg.out_dir.join(DATASET_FILE))
}

/// Metrics rows of one run, labelled with its kind.
pub fn run_metrics_csv(kind: BaselineKind, history: &[EpochMetrics]) -> String {
    let mut s = format!("run,{METRICS_HEADER}\n");
    for m in history {
        s.push_str(&format!("{kind},{}\n", m.csv_row()));
    }
    s
}

fn pretrain_kind(cfg: &ExperimentConfig, dataset: &SyntheticDataset, kind: BaselineKind) -> Result<()> {
    let exp = cfg.experiment();
    let fingerprint = cfg.fingerprint();
    let model = build_baseline(kind, &exp.arch, cfg.seed)?;
    let data = training_data(&model, &exp, dataset, cfg.seed)?;
    let mut trainer = Trainer::new(model, exp.train.clone(), &data, cfg.seed, kind.as_str(), &fingerprint)?;
    let metrics = metrics_path(&cfg.out_dir, kind);
    write(&metrics, run_metrics_csv(kind, &[]))?;
    trainer.train(&data, &mut UniqueAugment, |_, m| {
        use std::io::Write as _;
        log::info!("{kind} epoch {}: total {:.5}", m.epoch, m.train_total);
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&metrics)
            .map_err(|e| Error::io(&metrics, e))?;
        writeln!(f, "{kind},{}", m.csv_row()).map_err(|e| Error::io(&metrics, e))
    })?;
    trainer.checkpoint()?.save(&checkpoint_path(&cfg.out_dir, kind))?;
    Ok(())
}

/// Trains every configured kind (in parallel up to `SMF_LAB_THREADS`);
/// returns the checkpoint paths.
pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dataset = load_dataset(cfg)?;
    ensure_dir(&cfg.out_dir)?;
    map_parallel(&cfg.kinds, worker_threads(), |&k| pretrain_kind(cfg, &dataset, k))
        .into_iter()
        .collect::<Result<Vec<()>>>()?;
    Ok(cfg.kinds.iter().map(|&k| checkpoint_path(&cfg.out_dir, k)).collect())
}

/// Rebuilds a kind from its checkpoint: best validation parameters when
/// early stopping kept them, final parameters otherwise.
pub fn load_trained(cfg: &ExperimentConfig, kind: BaselineKind) -> Result<TrainedModel> {
    let path = checkpoint_path(&cfg.out_dir, kind);
    let ck = Checkpoint::load(&path)?;
    if ck.manifest.kind != kind.as_str() {
        return Err(Error::Contract(format!(
            "{} holds a {} model, expected {kind}",
            path.display(),
            ck.manifest.kind
        )));
    }
    let expected = cfg.fingerprint();
    if ck.manifest.fingerprint != expected {
        return Err(Error::config(
            "<config>",
            format!(
                "{} was trained under config fingerprint {}, but the current config has {expected}; \
                 probe with the config (and seed) used for pretraining",
                path.display(),
                ck.manifest.fingerprint
            ),
        ));
    }
    let mut model: PidModel = build_baseline(kind, &cfg.experiment().arch, cfg.seed)?;
    ck.restore_into(model.store_mut())?;
    ck.restore_best_into(model.store_mut())?;
    Ok(TrainedModel {
        kind,
        seed: cfg.seed,
        model,
        history: checkpoint_history(&ck)?,
    })
}

fn gate_failures(report: &crate::pid::PidReport) -> Vec<String> {
    let mut failed = Vec::new();
    for g in benchmark_gates(std::slice::from_ref(report)) {
        let status = match g.passed {
            Some(true) => "PASS",
            Some(false) => {
                failed.push(g.name.to_string());
                "FAIL"
            }
            None => "SKIP",
        };
        println!("{status} {} ({})", g.name, g.detail);
    }
    failed
}

/// Probes the configured kinds on the validation split and writes the
/// report. With `gate`, fails unless every benchmark ordering holds.
pub fn cmd_probe(cfg: &ExperimentConfig, gate: bool) -> std::result::Result<PathBuf, Failure> {
    let dataset = load_dataset(cfg)?;
    let models = cfg
        .kinds
        .iter()
        .map(|&k| load_trained(cfg, k))
        .collect::<Result<Vec<_>>>()?;
    let report = run_pid_probes(&models, &dataset, Split::Val, cfg.seed)?;
    let path = cfg.out_dir.join(REPORT_FILE);
    write(&path, report.to_csv())?;
    if gate {
        let failed = gate_failures(&report);
        if !failed.is_empty() {
            return Err(Failure::Gate(failed));
        }
    }
    Ok(path)
}

/// CSV of `lat, lon, e_1..e_w` rows, plus `pc1..pc3` when `pcs` is given.
pub fn embeddings_csv(dataset: &SyntheticDataset, emb: &crate::tensor::Tensor, pcs: Option<&crate::tensor::Tensor>) -> String {
    let w = emb.cols();
    let mut s = String::from("lat,lon");
    for j in 1..=w {
        s.push_str(&format!(",e_{j}"));
    }
    if pcs.is_some() {
        s.push_str(",pc1,pc2,pc3");
    }
    s.push('\n');
    for (i, sample) in dataset.samples.iter().enumerate() {
        s.push_str(&format!("{},{}", sample.location.lat(), sample.location.lon()));
        for v in emb.row(i) {
            s.push_str(&format!(",{v}"));
        }
        if let Some(p) = pcs {
            for v in p.row(i) {
                s.push_str(&format!(",{v}"));
            }
        }
        s.push('\n');
    }
    s
}

/// Embeds every dataset location with each configured kind.
pub fn cmd_export_embeddings(cfg: &ExperimentConfig, pca3: bool) -> Result<Vec<PathBuf>> {
    let dataset = load_dataset(cfg)?;
    let all: Vec<usize> = (0..dataset.samples.len()).collect();
    let data = dataset.to_multimodal(&all)?;
    let mut paths = Vec::new();
    for &kind in &cfg.kinds {
        let trained = load_trained(cfg, kind)?;
        let emb = trained.model.embed_all(&data, 2048)?;
        let pcs = if pca3 { Some(pca(&emb, 3)?.0) } else { None };
        let path = embeddings_path(&cfg.out_dir, kind);
        write(&path, embeddings_csv(&dataset, &emb, pcs.as_ref()))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            Failure::Error(Error::config("seed", "x")).exit_code(),
            Failure::Error(Error::io("/x", std::io::Error::other("x"))).exit_code(),
            Failure::Gate(vec!["g".into()]).exit_code(),
            Failure::Error(Error::Contract("x".into())).exit_code(),
        ];
        assert_eq!(codes, [EXIT_CONFIG, EXIT_IO, EXIT_GATE, EXIT_OTHER]);
    }

    #[test]
    fn overrides_apply() {
        let c = Common {
            config: None,
            out: Some("x".into()),
            seed: Some(7),
        };
        let cfg = resolve(&c).unwrap();
        assert_eq!((cfg.seed, cfg.out_dir), (7, PathBuf::from("x")));
    }

    #[test]
    fn usage_errors_exit_with_config_code() {
        assert_eq!(main_with_args(["smf-lab", "nonsense"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["smf-lab", "generate", "--pca3"]), EXIT_CONFIG);
    }

    #[test]
    fn metrics_rows_carry_the_kind() {
        let m = EpochMetrics {
            epoch: 1,
            train_contr: 0.5,
            train_recon: 0.0,
            train_total: 0.5,
            val_total: None,
            lr: 0.1,
            tau: 0.07,
        };
        let csv = run_metrics_csv(BaselineKind::SmfContrastiveOnly, &[m]);
        assert_eq!(csv, "run,epoch,train_contr,train_recon,train_total,val_total,lr,tau\nsmf_contrastive_only,1,0.5,0,0.5,,0.1,0.07\n");
    }
}
