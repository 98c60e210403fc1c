//! Drives the command-line pipeline in-process on a small configuration:
//! generate, pretrain, probe with gates, and export embeddings.
//!
//! ```text
//! cargo run --release --example cli_pipeline -- /tmp/smf-demo
//! ```

use smf_lab::cli::main_with_args;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).unwrap_or_else(|| {
        std::env::temp_dir().join("smf-lab-demo").display().to_string()
    });
    std::fs::create_dir_all(&out).expect("create output directory");
    let config = format!("{out}/config.json");
    std::fs::write(
        &config,
        r#"{"grid": 32, "epochs": 3, "kinds": ["smf_full", "pairwise_contrastive"]}"#,
    )
    .expect("write config");
    let steps: [&[&str]; 4] = [&["generate"], &["pretrain"], &["probe", "--gate"], &["export-embeddings", "--pca3"]];
    for step in steps {
        let mut args = vec!["smf-lab", step[0], "--config", &config, "--out", &out];
        args.extend(&step[1..]);
        let code = main_with_args(args);
        println!("{} -> exit {code}", step.join(" "));
    }
    println!("outputs in {out}");
}
