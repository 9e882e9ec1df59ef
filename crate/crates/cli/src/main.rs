use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qndmag::config::{ConfigFile, REFERENCE_CONFIG};
use qndmag::pipeline::{load_config, run_predict, run_sensitivity, run_spin_noise};
use qndmag::synthesis::Frame;
use qndmag::Error;

/// Spin-projection-noise limited atomic magnetometer simulator.
#[derive(Parser)]
#[command(name = "qndmag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unpolarized spin-noise spectrum and Lorentzian fit.
    SpinNoise(RunArgs),
    /// Calibrated field sensitivity and bandwidth of the pumped magnetometer.
    Sensitivity(RunArgs),
    /// Closed-form predictions; prints JSON to stdout.
    Predict(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config or manifest.json of an earlier run; defaults to the bundled reference config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Record duration in seconds, overrides the config.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, value_enum)]
    frame: Option<FrameArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FrameArg {
    Carrier,
    Baseband,
}

impl From<FrameArg> for Frame {
    fn from(f: FrameArg) -> Self {
        match f {
            FrameArg::Carrier => Frame::Carrier,
            FrameArg::Baseband => Frame::Baseband,
        }
    }
}

impl RunArgs {
    fn config(&self) -> Result<ConfigFile, Error> {
        let file = match &self.config {
            Some(path) => load_config(path)?,
            None => ConfigFile::parse(REFERENCE_CONFIG)?,
        };
        Ok(file.with_overrides(self.seed, self.duration, self.frame.map(Frame::from)))
    }

    fn out_dir(&self) -> Result<PathBuf, Error> {
        self.out.clone().ok_or_else(|| Error::Config("--out <dir> is required for this command".into()))
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::SpinNoise(args) => {
            let result = run_spin_noise(&args.config()?, &args.out_dir()?)?;
            match &result.fit {
                Some(fit) => eprintln!(
                    "spin noise: center {:.1} Hz, hwhm {:.1} Hz, peak/floor {:.2}",
                    fit.center,
                    fit.hwhm,
                    fit.peak_to_floor_ratio()
                ),
                None => eprintln!("spin noise: no peak above the floor (degenerate fit)"),
            }
        }
        Command::Sensitivity(args) => {
            let report = run_sensitivity(&args.config()?, &args.out_dir()?)?;
            let fmt = |b: Option<f64>| b.map_or("beyond grid".to_string(), |f| format!("{f:.0} Hz"));
            eprintln!(
                "sensitivity {:.3e} T/sqrt(Hz), bandwidth {} (closed form {:.0} Hz), demolition {}",
                report.dc_sensitivity,
                fmt(report.measured_bandwidth.hz()),
                report.closed_form_bandwidth,
                fmt(report.demolition_bandwidth.hz()),
            );
        }
        Command::Predict(args) => {
            let value = run_predict(&args.config()?, args.out.as_deref())?;
            println!("{value:#}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::InvalidParameter(_) => 2,
                Error::Numerical(_) | Error::Degenerate(_) => 3,
                Error::Io(_) | Error::Json(_) | Error::Csv(_) => 1,
            })
        }
    }
}
