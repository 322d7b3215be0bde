//! A small random-scenario ensemble written to an output directory, run
//! twice with different thread counts to show the results do not change.
//!
//! `cargo run --release --example batch_experiment -- [out_dir]`

use std::path::PathBuf;

use absnav::experiment::{run_experiment, ExperimentSpec, RunOptions};

const SPEC: &str = r#"
[generate]
width = 24
height = 24

[experiment]
n_sim = 60
seed = 11
sweep = "random_scenario"
"#;

fn main() -> absnav::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("absnav-batch"));
    let spec = ExperimentSpec::parse(SPEC, "inline", None)?;

    let one = RunOptions {
        jobs: 1,
        frames: false,
        out_dir: out.join("jobs1"),
    };
    let four = RunOptions {
        jobs: 4,
        out_dir: out.join("jobs4"),
        ..one.clone()
    };
    let outcome = run_experiment(&spec, &one)?;
    run_experiment(&spec, &four)?;

    let read = |o: &RunOptions| std::fs::read(o.out_dir.join("results.csv")).unwrap();
    println!("results identical across thread counts: {}", read(&one) == read(&four));
    print!("{}", absnav::experiment::metrics_csv(&outcome.metrics));
    println!("artifacts in {}", out.display());
    Ok(())
}
