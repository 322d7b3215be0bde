use std::path::PathBuf;
use std::process::ExitCode;

use absnav::abstraction::default_theta_set;
use absnav::experiment::{self, ExperimentSpec, RunOptions};
use absnav::grid_world::MapFormat;
use absnav::mapgen::MapGenParams;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "absnav", version, about = "Bandwidth-aware map sharing between a Seeker and a Supporter robot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment file for all three frameworks.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Write per-step PPM frames.
        #[arg(long)]
        frames: bool,
        #[arg(long, env = experiment::OUT_DIR_ENV, default_value = experiment::DEFAULT_OUT_DIR)]
        out: PathBuf,
    },
    /// Check a template file and print a per-template summary.
    ValidateTemplates { file: PathBuf },
    /// Write seeded random maps.
    GenMaps {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        /// Map size as WxH.
        #[arg(long, value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long, env = experiment::OUT_DIR_ENV, default_value = experiment::DEFAULT_OUT_DIR)]
        out: PathBuf,
    },
    /// Write the generated default template set.
    GenTemplates {
        /// Window size as WxH.
        #[arg(long, value_parser = parse_size, default_value = "7x7")]
        window: (usize, usize),
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Pgm,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    Ok((w, h))
}

fn run(cli: Cli) -> absnav::Result<bool> {
    match cli.command {
        Command::Run { spec, jobs, frames, out } => {
            let spec = ExperimentSpec::load(&spec)?;
            let outcome = experiment::run_experiment(&spec, &RunOptions { jobs, frames, out_dir: out.clone() })?;
            print!("{}", experiment::metrics_csv(&outcome.metrics));
            eprintln!("wrote {}", out.display());
            Ok(true)
        }
        Command::ValidateTemplates { file } => {
            let report = experiment::validate_templates(&file)?;
            println!("{report}");
            Ok(report.passed())
        }
        Command::GenMaps { seed, count, size, format, out } => {
            let params = MapGenParams {
                width: size.0,
                height: size.1,
                ..MapGenParams::default()
            };
            let format = match format {
                Format::Csv => MapFormat::Csv,
                Format::Pgm => MapFormat::Pgm,
            };
            for path in experiment::gen_maps(&params, seed, count, &out, format)? {
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::GenTemplates { window, count, out } => {
            let set = default_theta_set(window.0, window.1, count)?;
            match out {
                Some(path) => set.save(path)?,
                None => print!("{}", set.to_text()),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
