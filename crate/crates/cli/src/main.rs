use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vistr_core::detect::ResidualKind;
use vistr_core::pipeline::{cmd_bench, cmd_detect, cmd_fit, cmd_report, cmd_simulate, render_bench, Overrides, RunConfig};
use vistr_core::Error;

/// Replay-attack detection for a robot work cell from silhouettes and
/// encoder readings.
#[derive(Parser)]
#[command(name = "vistr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate nominal, hold-out and attacked cycles.
    Simulate(Common),
    /// Fit the vision estimator and both residual models.
    Fit(Common),
    /// Stream one cycle through the detector.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cycle: String,
    },
    /// Run both detectors over every attacked and hold-out cycle.
    Bench(Common),
    /// Print the stored bench summary.
    Report(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Mvgp,
    Iid,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Root directory for dataset, models and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-frame significance level.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        base.resolve(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            alpha: self.alpha,
            mode: self.mode.map(|m| match m {
                Mode::Mvgp => ResidualKind::Mvgp,
                Mode::Iid => ResidualKind::Iid,
            }),
        })
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.resolve()?;
            let m = cmd_simulate(&cfg)?;
            println!("{} cycles written to {}", m.cycles.len(), cfg.paths.dataset.display());
        }
        Command::Fit(c) => {
            let cfg = c.resolve()?;
            let r = cmd_fit(&cfg)?;
            println!(
                "fitted on {} cycles: ALS {} iterations, training RMSE {:.4} deg; models in {}",
                r.training_cycles.len(),
                r.tr.iterations,
                r.tr_accuracy.mean_rmse,
                cfg.paths.models.display()
            );
        }
        Command::Detect { common, cycle } => {
            let cfg = common.resolve()?;
            let r = cmd_detect(&cfg, &cycle)?;
            let delay = r.detection_delay.map_or_else(|| "none".to_string(), |d| d.to_string());
            println!(
                "{cycle}: {} alarms in {} frames, delay {delay}, NLL {:.4}, log-VOL {:.4}",
                r.alarm_count(),
                r.frames,
                r.nll,
                r.log_vol
            );
        }
        Command::Bench(c) => {
            let cfg = c.resolve()?;
            print!("{}", render_bench(&cmd_bench(&cfg)?));
        }
        Command::Report(c) => {
            let cfg = c.resolve()?;
            print!("{}", cmd_report(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VISTR_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code())
        }
    }
}
