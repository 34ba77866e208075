use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stchange::harness::{self, Overrides, RunConfig};
use stchange::Result;

#[derive(Parser)]
#[command(name = "stchange", version, about = "Weekly relative-change maps from paired-year station data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pair the two years and write the aligned monthly datasets.
    Align(Common),
    /// Estimate the model for each month.
    Fit(Common),
    /// Produce weekly maps from fitted months.
    Predict(Common),
    /// Repeated holdout validation.
    Validate(Common),
    /// Write a synthetic dataset in the input formats.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to one month (1 or 2).
    #[arg(long)]
    month: Option<u32>,
    #[arg(long)]
    samples: Option<usize>,
    /// Resample the prediction grid to this cell size.
    #[arg(long)]
    grid_km: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn load(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    cfg.apply(&Overrides { seed: c.seed, month: c.month, samples: c.samples, grid_km: c.grid_km, threads: c.threads });
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let (common, cmd) = match &cli.command {
        Command::Align(c) => (c, "align"),
        Command::Fit(c) => (c, "fit"),
        Command::Predict(c) => (c, "predict"),
        Command::Validate(c) => (c, "validate"),
        Command::Simulate(c) => (c, "simulate"),
    };
    let cfg = load(common)?;
    harness::with_threads(cfg.threads, || {
        match cmd {
            "align" => {
                let r = harness::cmd_align(&cfg)?;
                for m in &r.months {
                    println!("month {}: {} stations, {} days, {} pairs, {} outliers", m.month, m.n_stations, m.n_days, m.n_pairs, m.n_outliers);
                }
                println!("dropped {} stations, outlier fraction {:.4}", r.dropped_stations.len(), r.outlier_fraction);
            }
            "fit" => {
                for run in harness::cmd_fit(&cfg)? {
                    let t = &run.hyper.mode;
                    println!(
                        "month {}: sigma_eps {:.4} sigma_v {:.4} sigma_omega {:.4} range {:.2} km ar1 {:.4}",
                        run.month,
                        t.sigma_eps,
                        t.sigma_v,
                        t.sigma_omega(),
                        t.rho(),
                        t.a()
                    );
                }
            }
            "predict" => {
                for m in harness::cmd_predict(&cfg)?.months {
                    for s in &m.summaries {
                        println!(
                            "{} week {} {}: median {:.2}% iqr {:.2} sig- {:.1}% sig+ {:.1}%",
                            m.month_name, s.week, s.day_type, s.median, s.iqr, s.pct_significant_negative, s.pct_significant_positive
                        );
                    }
                }
            }
            "validate" => {
                for r in harness::cmd_validate(&cfg)?.repeats {
                    let f = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
                    println!(
                        "month {} repeat {}: validation rmse {} r {} (train rmse {} r {})",
                        r.month,
                        r.repeat,
                        f(r.validation_rmse),
                        f(r.validation_r),
                        f(r.train_rmse),
                        f(r.train_r)
                    );
                }
            }
            _ => {
                let t = harness::cmd_simulate(&cfg)?;
                println!("wrote {} synthetic stations", t.station_ids.len());
            }
        }
        Ok(())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
