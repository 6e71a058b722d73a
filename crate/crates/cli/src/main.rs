//! `hcfmem`: simulate, fit and evaluate caesium-in-fibre spectroscopy.
//!
//! Exit codes: 0 ok, 2 input or configuration error, 3 numerical failure,
//! 4 fit did not converge.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use failure::Failure;

#[derive(Parser)]
#[command(
    name = "hcfmem",
    version,
    about = "Caesium vapour in hollow-core fibre: spectra, fits, pumping and memory metrics"
)]
struct Cli {
    /// Run configuration (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Exit 0 even if a fit does not converge.
    #[arg(long, global = true)]
    allow_unconverged: bool,
    /// Overrides `mc.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `thermal.temperature`, K.
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward-model a transmission (or sat-spec) sweep to CSV.
    SimulateSpectrum(SimulateArgs),
    /// Fit d*, sigma, offset and baseline to a transmission CSV.
    FitSpectrum(FitSpectrumArgs),
    /// Fit the Lamb-dip model to a pump-probe CSV.
    FitSatspec(FitSpectrumArgs),
    /// Fit Gamma = Gamma_0 sqrt(1 + P/P_sat) to `power,width_hz,width_sigma_hz`.
    FitPower(InputArgs),
    /// Fit a desorption transient to `time_s,effective_od[,sigma]`.
    FitLiad(InputArgs),
    /// Affine frequency calibration from `raw,reference_hz` feature pairs.
    Calibrate(InputArgs),
    /// Monte Carlo transit times across the fibre mode.
    TransitMc(TransitArgs),
    /// Pumping efficiency at the configured Rabi frequency plus a sweep CSV.
    PumpEfficiency(PumpArgs),
    /// Pumping efficiency from unpumped and pumped optical depths.
    ExtractEfficiency(ExtractArgs),
    /// Raman-memory figures of merit and feasibility verdict.
    MemoryReport(NameArgs),
}

#[derive(Args)]
pub struct NameArgs {
    /// Base name of the output files.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    ground_f: Option<u32>,
    #[arg(long)]
    effective_od: Option<f64>,
    /// Hz
    #[arg(long)]
    doppler_sigma: Option<f64>,
    /// Additive Gaussian transmission noise.
    #[arg(long)]
    noise: Option<f64>,
    /// Include Lamb dips from `spectrum.dip_contrasts`.
    #[arg(long)]
    satspec: bool,
    #[command(flatten)]
    out: NameArgs,
}

#[derive(Args)]
pub struct FitSpectrumArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    ground_f: Option<u32>,
    #[command(flatten)]
    out: NameArgs,
}

#[derive(Args)]
pub struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    out: NameArgs,
}

#[derive(Args)]
pub struct TransitArgs {
    #[arg(long)]
    n_samples: Option<usize>,
    #[command(flatten)]
    out: NameArgs,
}

#[derive(Args)]
pub struct PumpArgs {
    /// Hz
    #[arg(long)]
    rabi_frequency: Option<f64>,
    #[arg(long)]
    branching_to_dark: Option<f64>,
    /// `transit-mc` report to take the transit distribution from.
    #[arg(long)]
    transit_report: Option<PathBuf>,
    /// Samples for the internal transit simulation when no report is given.
    #[arg(long)]
    n_samples: Option<usize>,
    #[command(flatten)]
    out: NameArgs,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    od_unpumped: f64,
    #[arg(long)]
    od_pumped: f64,
    #[arg(long)]
    pumped_from_f: Option<u32>,
    #[command(flatten)]
    out: NameArgs,
}

fn apply_overrides(cli: &Cli, cfg: &mut RunConfig) {
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    if cli.allow_unconverged {
        cfg.fit.allow_unconverged = true;
    }
    if let Some(s) = cli.seed {
        cfg.mc.seed = Some(s);
    }
    if let Some(t) = cli.temperature {
        cfg.thermal.temperature = t;
    }
    match &cli.command {
        Command::SimulateSpectrum(a) => {
            if let Some(f) = a.ground_f {
                cfg.spectrum.ground_f = f;
            }
            if let Some(d) = a.effective_od {
                cfg.spectrum.effective_od = d;
            }
            if let Some(s) = a.doppler_sigma {
                cfg.spectrum.doppler_sigma = Some(s);
            }
            if let Some(n) = a.noise {
                cfg.spectrum.noise = n;
            }
        }
        Command::FitSpectrum(a) | Command::FitSatspec(a) => {
            if let Some(f) = a.ground_f {
                cfg.spectrum.ground_f = f;
            }
        }
        Command::TransitMc(a) => {
            if let Some(n) = a.n_samples {
                cfg.mc.n_samples = Some(n);
            }
        }
        Command::PumpEfficiency(a) => {
            if let Some(r) = a.rabi_frequency {
                cfg.pump.rabi_frequency = r;
            }
            if let Some(b) = a.branching_to_dark {
                cfg.pump.branching_to_dark = b;
            }
            if let Some(p) = &a.transit_report {
                cfg.pump.transit_report = Some(p.clone());
            }
            if let Some(n) = a.n_samples {
                cfg.mc.n_samples = Some(n);
            }
        }
        Command::ExtractEfficiency(a) => {
            if let Some(f) = a.pumped_from_f {
                cfg.pump.pumped_from_f = f;
            }
        }
        _ => {}
    }
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, Failure> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    apply_overrides(&cli, &mut cfg);
    cfg.validate_paths()?;
    let ctx = commands::Context::new(cfg)?;
    let done = match &cli.command {
        Command::SimulateSpectrum(a) => commands::simulate_spectrum(&ctx, a)?,
        Command::FitSpectrum(a) => commands::fit_spectrum(&ctx, a)?,
        Command::FitSatspec(a) => commands::fit_satspec(&ctx, a)?,
        Command::FitPower(a) => commands::fit_power(&ctx, a)?,
        Command::FitLiad(a) => commands::fit_liad(&ctx, a)?,
        Command::Calibrate(a) => commands::calibrate(&ctx, a)?,
        Command::TransitMc(a) => commands::transit_mc(&ctx, a)?,
        Command::PumpEfficiency(a) => commands::pump_efficiency(&ctx, a)?,
        Command::ExtractEfficiency(a) => commands::extract_efficiency(&ctx, a)?,
        Command::MemoryReport(a) => commands::memory_report(&ctx, a)?,
    };
    let paths = done.outputs.commit(&ctx.cfg.output_dir)?;
    match done.unconverged {
        Some(msg) if !ctx.cfg.fit.allow_unconverged => {
            for p in &paths {
                println!("{}", p.display());
            }
            Err(Failure::unconverged(msg))
        }
        _ => Ok(paths),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
