//! Thin command-line front end over the library pipeline.
//!
//! Exit codes: 0 on success, 1 when `--strict` turns validation warnings
//! into failures, 2 on hard errors. `G2KIT_THREADS` caps parallelism.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use g2kit::pipeline::{
    self, BudgetRequest, CompareRequest, EstimateRequest, HistogramRequest, LifetimeRequest,
    SimulateRequest, SweepRequest,
};
use g2kit::simulator::SimConfig;

#[derive(Parser)]
#[command(
    name = "g2kit",
    version,
    about = "Characterize pulsed single-photon sources from detector time-tag streams"
)]
struct Cli {
    /// Treat validation warnings (window contamination, low-flux violation,
    /// negative corrected counts) as failures with exit code 1.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct BinningArgs {
    /// Chronogram bin width in nanoseconds.
    #[arg(long, default_value_t = 1.0)]
    bin_ns: f64,
    /// Half delay range in nanoseconds; defaults to 1.5 excitation periods.
    #[arg(long)]
    range_ns: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic acquisition run and write it as a TTAG file.
    Simulate {
        /// key = value configuration file; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        acquisition_s: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bin a TTAG stream into a coincidence chronogram CSV.
    Histogram {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        binning: BinningArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the antibunching parameter from a TTAG stream or chronogram.
    Estimate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Coincidence window width in nanoseconds.
        #[arg(long, default_value_t = 16.0)]
        window_ns: f64,
        #[command(flatten)]
        binning: BinningArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat the estimate across a range of window widths.
    Sweep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        w_min: f64,
        #[arg(long, default_value_t = 40.0)]
        w_max: f64,
        #[arg(long, default_value_t = 2.0)]
        step: f64,
        #[command(flatten)]
        binning: BinningArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine per-run inputs into a correlated-input uncertainty budget.
    Budget {
        /// Per-run TTAG or chronogram files (at least two).
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 16.0)]
        window_ns: f64,
        /// Coverage factor for the expanded uncertainty.
        #[arg(long, default_value_t = 2.0)]
        k: f64,
        #[arg(long, default_value = "measurement")]
        label: String,
        #[command(flatten)]
        binning: BinningArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the pulse-train lifetime model; aggregates across multiple runs.
    Lifetime {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        binning: BinningArgs,
        #[arg(long)]
        out: PathBuf,
        /// Residual CSV (single-input fits only).
        #[arg(long)]
        residuals: Option<PathBuf>,
    },
    /// Check two budget JSONs for compatibility via the normalized error.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the step recorded in a manifest, reproducing its outputs.
    Replay { manifest: PathBuf },
}

fn run(cli: Cli) -> g2kit::Result<bool> {
    let mut warnings = false;
    match cli.command {
        Command::Simulate {
            config,
            seed,
            acquisition_s,
            out,
        } => {
            let mut sim = match config {
                Some(path) => {
                    let text =
                        std::fs::read_to_string(&path).map_err(|e| g2kit::Error::io(&path, e))?;
                    SimConfig::from_keyval(&text)?
                }
                None => SimConfig::reference(),
            };
            if let Some(seed) = seed {
                sim.seed = seed;
            }
            if let Some(t) = acquisition_s {
                sim.acquisition_time_s = t;
            }
            let manifest = pipeline::cmd_simulate(&SimulateRequest { config: sim, out })?;
            println!("wrote {}", manifest.outputs[0].path.display());
        }
        Command::Histogram {
            input,
            binning,
            out,
        } => {
            let manifest = pipeline::cmd_histogram(&HistogramRequest {
                input,
                bin_ns: binning.bin_ns,
                range_ns: binning.range_ns,
                out,
            })?;
            println!("wrote {}", manifest.outputs[0].path.display());
        }
        Command::Estimate {
            input,
            window_ns,
            binning,
            out,
        } => {
            let (report, _) = pipeline::cmd_estimate(&EstimateRequest {
                input,
                window_ns,
                bin_ns: binning.bin_ns,
                range_ns: binning.range_ns,
                out,
            })?;
            println!(
                "alpha = {:.5} +- {:.5} (k=1)",
                report.alpha, report.u_alpha_k1
            );
            for flag in &report.validation.flags {
                eprintln!(
                    "warning: contaminating peak near {:+.1} ns ({:.1} sigma)",
                    flag.delay_ns, flag.peak_significance
                );
            }
            if let Some(g2kit::estimator::LowFluxCheck::Warning { max_probability }) =
                report.low_flux
            {
                eprintln!("warning: click probability {max_probability:.3} is not << 0.1");
            }
            warnings = report.has_warnings();
        }
        Command::Sweep {
            input,
            w_min,
            w_max,
            step,
            binning,
            out,
        } => {
            let (estimates, manifest) = pipeline::cmd_sweep(&SweepRequest {
                input,
                w_min_ns: w_min,
                w_max_ns: w_max,
                step_ns: step,
                bin_ns: binning.bin_ns,
                range_ns: binning.range_ns,
                out,
            })?;
            println!(
                "swept {} widths -> {}",
                estimates.len(),
                manifest.outputs[0].path.display()
            );
        }
        Command::Budget {
            inputs,
            window_ns,
            k,
            label,
            binning,
            out,
        } => {
            let (budget, _) = pipeline::cmd_budget(&BudgetRequest {
                inputs,
                window_ns,
                bin_ns: binning.bin_ns,
                range_ns: binning.range_ns,
                k,
                label,
                out,
            })?;
            print!("{}", budget.render_table());
        }
        Command::Lifetime {
            inputs,
            binning,
            out,
            residuals,
        } => {
            let (report, _) = pipeline::cmd_lifetime(&LifetimeRequest {
                inputs,
                bin_ns: binning.bin_ns,
                range_ns: binning.range_ns,
                out,
                residuals,
            })?;
            for fit in &report.fits {
                println!(
                    "lifetime d = {:.3} ns (chi2_red = {:.2}, {} iterations)",
                    fit.d, fit.chi2_reduced, fit.n_iter
                );
            }
            if let Some((mean, se)) = report.aggregate {
                println!(
                    "aggregate: ({mean:.3} +- {se:.3}) ns over {} runs",
                    report.fits.len()
                );
            }
        }
        Command::Compare { a, b, out } => {
            let (result, _) = pipeline::cmd_compare(&CompareRequest {
                budget_a: a,
                budget_b: b,
                out,
            })?;
            println!(
                "{} vs {}: E = {:.3} -> {}",
                result.labels.0,
                result.labels.1,
                result.normalized_error,
                if result.compatible {
                    "compatible"
                } else {
                    "NOT compatible"
                }
            );
            warnings = !result.compatible;
        }
        Command::Replay { manifest } => {
            let redone = pipeline::replay(&manifest)?;
            println!(
                "replayed {} -> {} output(s)",
                redone.subcommand,
                redone.outputs.len()
            );
        }
    }
    Ok(warnings)
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("G2KIT_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    let cli = Cli::parse();
    let strict = cli.strict;
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) if strict => {
            eprintln!("failing due to warnings (--strict)");
            ExitCode::from(1)
        }
        Ok(true) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
