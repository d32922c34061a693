use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use pulsemon_cli::Grid;
use pulsemon_core::harness::{
    export_curve, run_sweep, write_curve, Kind, NoisePreset, Report, SweepSpec,
};

#[derive(Debug, Parser)]
#[command(
    name = "accuracy-harness",
    about = "Actual-vs-measured accuracy sweeps"
)]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the sweep and write a CSV report.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        /// start:stop:step or a comma list, bpm.
        #[arg(long, default_value = "40:140:10")]
        bpm_grid: Grid,
        /// start:stop:step or a comma list, °C.
        #[arg(long, default_value = "30:45:0.5")]
        temp_grid: Grid,
        #[arg(long, default_value_t = 5)]
        trials: u32,
        #[arg(long, default_value_t = 1.0)]
        tolerance_pct: f64,
        /// Comma list of clean, mild, heavy.
        #[arg(long, value_delimiter = ',', default_value = "clean,mild,heavy")]
        noise: Vec<NoisePreset>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Project a report onto actual,measured pairs.
    Curve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        kind: Kind,
        #[arg(long, default_value = "clean")]
        noise: NoisePreset,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(args: Args) -> anyhow::Result<bool> {
    match args.cmd {
        Cmd::Sweep {
            out,
            bpm_grid,
            temp_grid,
            trials,
            tolerance_pct,
            noise,
            seed,
        } => {
            let spec = SweepSpec {
                bpm_values: bpm_grid.0,
                temp_values_c: temp_grid.0,
                noise_levels: noise,
                trials_per_point: trials,
                tolerance_pct,
                base_seed: seed,
                ..SweepSpec::default()
            };
            let max_bpm = spec.device.chain.max_measurable_bpm()?;
            let began = Instant::now();
            let report = run_sweep(&spec)?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            report.write_csv(BufWriter::new(file))?;
            print!("{}", report.summary());
            let pass = report.clean_passes(tolerance_pct, max_bpm);
            println!(
                "{} rows in {:.1} s; clean-signal tolerance {tolerance_pct}%: {}",
                report.rows.len(),
                began.elapsed().as_secs_f64(),
                if pass { "PASS" } else { "FAIL" }
            );
            Ok(pass)
        }
        Cmd::Curve {
            input,
            kind,
            noise,
            out,
        } => {
            let file =
                File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let report = Report::read_csv(BufReader::new(file))?;
            let curve = export_curve(&report, kind, noise);
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_curve(BufWriter::new(file), &curve)?;
            println!("{} points written to {}", curve.len(), out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("accuracy-harness: {e:#}");
            ExitCode::from(2)
        }
    }
}
