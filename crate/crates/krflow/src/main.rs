use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use krflow::boxcheck::{check_box, min_distance};
use krflow::config::{FlowSpec, RunConfig};
use krflow::error::HarnessError;
use krflow::run::run;
use krflow::sweep::{default_rates, summary_csv, sweep, SweepPlan};
use krflow_core::flowdecomp::FlowKind;

#[derive(Parser)]
#[command(name = "krflow", version, about = "Homogeneous-flow molecular dynamics with bounded periodic cells")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write CSVs and a report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep strain rates and seeds for several flow kinds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated flow kinds.
        #[arg(long, value_delimiter = ',', default_value = "pef,usf,bsf")]
        kinds: Vec<String>,
        /// Comma-separated strain rates; ten log-spaced rates in [0.05, 1.2] by default.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        /// Seeds per rate; defaults to `realizations` from the config.
        #[arg(long)]
        seeds: Option<u32>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also run the no-flow reference and add an `eq` row.
        #[arg(long)]
        with_equilibrium: bool,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Evolve the cell alone and certify that it stays bounded.
    CheckBox {
        #[command(flatten)]
        flow: FlowArgs,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 0.002)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
    },
    /// Print the certified minimum self-image distance for a flow.
    MinDistance {
        #[command(flatten)]
        flow: FlowArgs,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
    },
}

#[derive(clap::Args)]
struct FlowArgs {
    /// pef, usf, bsf, shear, mixed or zero.
    #[arg(long)]
    flow: String,
    #[arg(long)]
    rate: Option<f64>,
    /// Rotation rate for the mixed flow.
    #[arg(long)]
    rotation: Option<f64>,
}

impl FlowArgs {
    fn spec(&self) -> Result<FlowSpec, HarnessError> {
        let rate = match (self.flow.to_lowercase().as_str(), self.rate) {
            ("mixed", r) => r,
            (_, None) => Some(1.0),
            (_, r) => r,
        };
        FlowSpec::from_parts(&self.flow, rate, self.rotation)
    }
}

fn read_config(path: &Path) -> Result<RunConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    RunConfig::parse(&text)
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = read_config(&config)?;
            let res = run(&cfg, &out)?;
            let r = &res.report;
            println!("flow={} box_mode={} steps={} remaps={}", r.flow, r.box_mode, r.steps, r.remaps);
            for (name, a) in &r.averages {
                println!("{name}={} se={}", a.mean, a.se);
            }
            println!("wrote {}", out.display());
        }
        Command::Sweep { config, kinds, rates, seeds, jobs, with_equilibrium, out } => {
            let base = read_config(&config)?;
            let kinds = kinds
                .iter()
                .map(|k| FlowKind::from_str(k).map_err(|e| HarnessError::config("kinds", e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            let seeds = seeds.unwrap_or(base.realizations);
            let plan = SweepPlan { kinds, rates: rates.unwrap_or_else(default_rates), seeds, with_equilibrium, jobs };
            let result = sweep(&base, &plan)?;
            fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
            let path = out.join("summary.csv");
            fs::write(&path, summary_csv(&result.rows)).map_err(|e| HarnessError::io(&path, e))?;
            println!("wrote {}", path.display());
            if !result.failures.is_empty() {
                for f in &result.failures {
                    eprintln!("failed: kind={} rate={} seed={}: {}", f.kind, f.rate, f.seed, f.message);
                }
                let total = result.rows.iter().map(|r| r.n_runs).sum::<usize>() + result.failures.len();
                return Err(HarnessError::PartialSweep { failed: result.failures.len(), total });
            }
        }
        Command::CheckBox { flow, steps, dt, a } => {
            let m = flow.spec()?.matrix()?;
            let c = check_box(&m, steps, dt, a)?;
            println!("mode={}", c.mode);
            println!("steps={}", c.steps);
            println!("t={}", c.final_t);
            println!("theta_range={} {}", c.theta_min, c.theta_max);
            println!("theta_violations={}", c.theta_violations);
            println!("max_det_error={:e}", c.max_det_error);
            println!("remaps={}", c.remaps);
            println!("replica_floor={}", c.replica_floor);
            if let Some(d) = c.min_self_image_at_remap {
                println!("min_self_image_at_remap={d}");
            }
            println!("bounded={}", c.bounded(1e-9));
            if !c.bounded(1e-9) {
                return Err(HarnessError::Core(krflow_core::Error::Numeric("cell left its bounded region".into())));
            }
        }
        Command::MinDistance { flow, a } => {
            let m = flow.spec()?.matrix()?;
            println!("{}", min_distance(&m, a)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
