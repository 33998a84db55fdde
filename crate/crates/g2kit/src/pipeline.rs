//! File-in/file-out pipeline steps behind the command-line interface.
//!
//! Every step resolves its parameters into a serializable request, runs the
//! corresponding library calls, and writes a manifest next to its primary
//! output recording tool version, resolved parameters, and SHA-256 digests
//! of all inputs and outputs. Replaying a manifest re-runs the step and, the
//! toolkit being deterministic, reproduces the outputs byte-exactly.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlator::{self, Chronogram};
use crate::error::{Error, Result};
use crate::estimator::{self, AlphaEstimate, LowFluxCheck, WindowSpec, WindowValidation};
use crate::lifetime::{self, FitReport};
use crate::simulator::{simulate_run, SimConfig};
use crate::timetag::{self, TimeTagStream, TTAG_MAGIC};
use crate::uncertainty::{self, AlphaBudget, ComparisonResult, RunSeries};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Reproducibility record written next to each command's primary output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub parameters: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.clone(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

pub fn manifest_path(primary_output: &Path) -> PathBuf {
    let mut name = primary_output
        .file_name()
        .unwrap_or_default()
        .to_os_string();
    name.push(".manifest.json");
    primary_output.with_file_name(name)
}

fn write_manifest<P: Serialize>(
    subcommand: &str,
    parameters: &P,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<Manifest> {
    let manifest = Manifest {
        tool: "g2kit".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: subcommand.into(),
        parameters: serde_json::to_value(parameters)
            .map_err(|e| Error::Config(format!("cannot serialize parameters: {e}")))?,
        inputs: digests(inputs)?,
        outputs: digests(outputs)?,
    };
    let path = manifest_path(&outputs[0]);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("cannot serialize report: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateRequest {
    pub config: SimConfig,
    pub out: PathBuf,
}

/// Generates one run and writes it as a TTAG file.
pub fn cmd_simulate(req: &SimulateRequest) -> Result<Manifest> {
    let stream = simulate_run(&req.config)?;
    timetag::write_ttag(&stream, &req.out)?;
    write_manifest("simulate", req, &[], &[req.out.clone()])
}

// ---------------------------------------------------------------------------
// input loading shared by the analysis steps

/// Singles information available only when the input was a raw time-tag
/// stream rather than an already-binned chronogram.
#[derive(Debug, Clone, Copy)]
pub struct SinglesInfo {
    pub counts: (u64, u64),
    pub n_pulses: u64,
}

fn is_ttag(path: &Path) -> Result<bool> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    match file.read_exact(&mut magic) {
        Ok(()) => Ok(&magic == TTAG_MAGIC),
        Err(_) => Ok(false), // shorter than a magic: not a TTAG file
    }
}

fn histogram_stream(
    stream: &TimeTagStream,
    bin_ns: f64,
    range_ns: Option<f64>,
) -> Result<Chronogram> {
    let ticks_per_ns = 1000.0 / stream.resolution_ps as f64;
    let bin_ticks = (bin_ns * ticks_per_ns).round().max(1.0) as u64;
    let half_ticks = match range_ns {
        Some(r) => (r * ticks_per_ns).round() as i64,
        None => {
            // default: +-1.5 excitation periods
            let clock = timetag::PulseClock::from_metadata(&stream.metadata, stream.resolution_ps)?;
            (1.5 * clock.period_ticks_f64()).round() as i64
        }
    };
    // snap the half range up to a whole number of bins
    let half_bins = (half_ticks as u64).div_ceil(bin_ticks) as i64;
    let half = half_bins * bin_ticks as i64;
    correlator::cross_correlate(stream, 0, 1, bin_ticks, (-half, half))
}

/// Loads a chronogram from either a TTAG stream (binned on the fly) or a
/// chronogram CSV, detected by content.
pub fn load_chronogram(
    path: &Path,
    bin_ns: f64,
    range_ns: Option<f64>,
) -> Result<(Chronogram, Option<SinglesInfo>)> {
    if is_ttag(path)? {
        let stream = timetag::read_ttag(path)?;
        let chrono = histogram_stream(&stream, bin_ns, range_ns)?;
        let singles = SinglesInfo {
            counts: (stream.singles(0), stream.singles(1)),
            n_pulses: stream.metadata.n_pulses(),
        };
        Ok((chrono, Some(singles)))
    } else {
        Ok((correlator::import_chronogram(path)?, None))
    }
}

// ---------------------------------------------------------------------------
// histogram

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramRequest {
    pub input: PathBuf,
    pub bin_ns: f64,
    /// Half range; defaults to 1.5 excitation periods.
    pub range_ns: Option<f64>,
    pub out: PathBuf,
}

pub fn cmd_histogram(req: &HistogramRequest) -> Result<Manifest> {
    let stream = timetag::read_ttag(&req.input)?;
    let chrono = histogram_stream(&stream, req.bin_ns, req.range_ns)?;
    correlator::export_chronogram(&chrono, &req.out)?;
    write_manifest("histogram", req, &[req.input.clone()], &[req.out.clone()])
}

// ---------------------------------------------------------------------------
// estimate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateRequest {
    pub input: PathBuf,
    pub window_ns: f64,
    pub bin_ns: f64,
    pub range_ns: Option<f64>,
    pub out: PathBuf,
}

/// Everything a single-run characterization reports.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub alpha: f64,
    pub u_alpha_k1: f64,
    pub estimate: AlphaEstimate,
    pub validation: WindowValidation,
    /// Present only when the input carried raw singles (TTAG).
    pub low_flux: Option<LowFluxCheck>,
}

impl EstimateReport {
    /// True when any validity check asks for attention.
    pub fn has_warnings(&self) -> bool {
        !self.validation.flags.is_empty()
            || matches!(self.low_flux, Some(LowFluxCheck::Warning { .. }))
            || self.estimate.negative_numerator
    }
}

pub fn estimate_from_chronogram(
    chrono: &Chronogram,
    window_ns: f64,
    singles: Option<SinglesInfo>,
) -> Result<EstimateReport> {
    let window = WindowSpec::new(chrono, window_ns)?;
    let counts = estimator::count_windows(chrono, &window)?;
    let estimate = estimator::compute_alpha(counts, window.clone(), chrono.n_pulses)?;
    let validation = estimator::validate_window(chrono, &window);
    let low_flux = match singles {
        Some(info) if info.n_pulses > 0 => Some(estimator::low_flux_check(
            info.counts.0 as f64 / info.n_pulses as f64,
            info.counts.1 as f64 / info.n_pulses as f64,
        )?),
        _ => None,
    };
    Ok(EstimateReport {
        alpha: estimate.alpha,
        u_alpha_k1: estimate.poisson_uncertainty(),
        estimate,
        validation,
        low_flux,
    })
}

pub fn cmd_estimate(req: &EstimateRequest) -> Result<(EstimateReport, Manifest)> {
    let (chrono, singles) = load_chronogram(&req.input, req.bin_ns, req.range_ns)?;
    let report = estimate_from_chronogram(&chrono, req.window_ns, singles)?;
    write_json(&req.out, &serde_json::to_value(&report).unwrap())?;
    let manifest = write_manifest("estimate", req, &[req.input.clone()], &[req.out.clone()])?;
    Ok((report, manifest))
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRequest {
    pub input: PathBuf,
    pub w_min_ns: f64,
    pub w_max_ns: f64,
    pub step_ns: f64,
    pub bin_ns: f64,
    pub range_ns: Option<f64>,
    pub out: PathBuf,
}

pub fn cmd_sweep(req: &SweepRequest) -> Result<(Vec<AlphaEstimate>, Manifest)> {
    if !(req.step_ns > 0.0) || req.w_max_ns < req.w_min_ns {
        return Err(Error::Usage(
            "sweep needs w_min <= w_max and step > 0".into(),
        ));
    }
    let (chrono, _) = load_chronogram(&req.input, req.bin_ns, req.range_ns)?;
    let mut widths = Vec::new();
    let mut w = req.w_min_ns;
    while w <= req.w_max_ns + 1e-9 {
        widths.push(w);
        w += req.step_ns;
    }
    let estimates = estimator::window_sweep(&chrono, &widths)?;
    estimator::export_sweep(&estimates, &req.out)?;
    let manifest = write_manifest("sweep", req, &[req.input.clone()], &[req.out.clone()])?;
    Ok((estimates, manifest))
}

// ---------------------------------------------------------------------------
// budget

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetRequest {
    pub inputs: Vec<PathBuf>,
    pub window_ns: f64,
    pub bin_ns: f64,
    pub range_ns: Option<f64>,
    pub k: f64,
    pub label: String,
    pub out: PathBuf,
}

/// Per-run estimates across the input files (processed in parallel, reported
/// in input order) combined into a correlated-input uncertainty budget.
pub fn cmd_budget(req: &BudgetRequest) -> Result<(AlphaBudget, Manifest)> {
    let estimates: Vec<AlphaEstimate> = req
        .inputs
        .par_iter()
        .map(|path| {
            let (chrono, _) = load_chronogram(path, req.bin_ns, req.range_ns)?;
            estimator::estimate_alpha(&chrono, req.window_ns)
        })
        .collect::<Result<_>>()?;
    let series = RunSeries::from_estimates(&estimates)?;
    let budget = uncertainty::budget_report(&series, req.k, req.label.clone())?;
    write_json(&req.out, &budget.to_json())?;
    let manifest = write_manifest("budget", req, &req.inputs, &[req.out.clone()])?;
    Ok((budget, manifest))
}

// ---------------------------------------------------------------------------
// lifetime

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LifetimeRequest {
    pub inputs: Vec<PathBuf>,
    pub bin_ns: f64,
    pub range_ns: Option<f64>,
    pub out: PathBuf,
    /// Data/model/residual CSV, written for single-input fits.
    pub residuals: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LifetimeReport {
    pub fits: Vec<FitReport>,
    /// Mean and standard error across runs, present for two or more inputs.
    pub aggregate: Option<(f64, f64)>,
}

pub fn cmd_lifetime(req: &LifetimeRequest) -> Result<(LifetimeReport, Manifest)> {
    let fits: Vec<_> = req
        .inputs
        .par_iter()
        .map(|path| {
            let (chrono, _) = load_chronogram(path, req.bin_ns, req.range_ns)?;
            Ok((lifetime::fit_lifetime(&chrono, None)?, chrono))
        })
        .collect::<Result<Vec<_>>>()?;

    if let (Some(res_path), [(fit, chrono)]) = (&req.residuals, fits.as_slice()) {
        use std::io::Write;
        let mut out =
            std::io::BufWriter::new(File::create(res_path).map_err(|e| Error::io(res_path, e))?);
        writeln!(out, "tau_ns,counts,model,residual").map_err(|e| Error::io(res_path, e))?;
        for (k, &count) in chrono.bins.iter().enumerate() {
            let tau = chrono.bin_center_ns(k);
            let model = fit.model.eval(tau);
            writeln!(out, "{tau},{count},{model},{}", count as f64 - model)
                .map_err(|e| Error::io(res_path, e))?;
        }
    }

    let lifetimes: Vec<f64> = fits.iter().map(|(f, _)| f.model.lifetime_ns).collect();
    let report = LifetimeReport {
        fits: fits.iter().map(|(f, _)| f.report()).collect(),
        aggregate: (lifetimes.len() >= 2)
            .then(|| lifetime::aggregate_lifetime(&lifetimes))
            .transpose()?,
    };
    write_json(&req.out, &serde_json::to_value(&report).unwrap())?;
    let mut outputs = vec![req.out.clone()];
    if let (Some(r), 1) = (&req.residuals, req.inputs.len()) {
        outputs.push(r.clone());
    }
    let manifest = write_manifest("lifetime", req, &req.inputs, &outputs)?;
    Ok((report, manifest))
}

// ---------------------------------------------------------------------------
// compare

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRequest {
    pub budget_a: PathBuf,
    pub budget_b: PathBuf,
    pub out: Option<PathBuf>,
}

fn read_budget_summary(path: &Path) -> Result<(String, f64, f64, f64)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("not a budget JSON: {e}")))?;
    let field = |name: &str| -> Result<f64> {
        v[name]
            .as_f64()
            .ok_or_else(|| Error::format(path, format!("missing numeric field {name:?}")))
    };
    Ok((
        v["label"].as_str().unwrap_or("?").to_string(),
        field("alpha")?,
        field("U")?,
        field("k")?,
    ))
}

pub fn cmd_compare(req: &CompareRequest) -> Result<(ComparisonResult, Option<Manifest>)> {
    let (label_a, alpha_a, u_a, k_a) = read_budget_summary(&req.budget_a)?;
    let (label_b, alpha_b, u_b, k_b) = read_budget_summary(&req.budget_b)?;
    if k_a != k_b {
        return Err(Error::Usage(format!(
            "coverage factors differ: {k_a} vs {k_b}"
        )));
    }
    let e = uncertainty::normalized_error(alpha_a, u_a, alpha_b, u_b);
    let result = ComparisonResult {
        labels: (label_a, label_b),
        alphas: ((alpha_a, u_a), (alpha_b, u_b)),
        k: k_a,
        normalized_error: e,
        compatible: e <= 1.0,
    };
    let manifest = match &req.out {
        Some(out) => {
            write_json(out, &serde_json::to_value(&result).unwrap())?;
            Some(write_manifest(
                "compare",
                req,
                &[req.budget_a.clone(), req.budget_b.clone()],
                &[out.clone()],
            )?)
        }
        None => None,
    };
    Ok((result, manifest))
}

// ---------------------------------------------------------------------------
// replay

/// Re-runs the step recorded in a manifest; outputs are byte-identical to
/// the original run because every step is deterministic in its parameters.
pub fn replay(manifest_file: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(manifest_file).map_err(|e| Error::io(manifest_file, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(manifest_file, format!("not a manifest: {e}")))?;
    let params = manifest.parameters.clone();
    let redo = |e: serde_json::Error| {
        Error::format(manifest_file, format!("cannot decode parameters: {e}"))
    };
    match manifest.subcommand.as_str() {
        "simulate" => cmd_simulate(&serde_json::from_value(params).map_err(redo)?),
        "histogram" => cmd_histogram(&serde_json::from_value(params).map_err(redo)?),
        "estimate" => cmd_estimate(&serde_json::from_value(params).map_err(redo)?).map(|r| r.1),
        "sweep" => cmd_sweep(&serde_json::from_value(params).map_err(redo)?).map(|r| r.1),
        "budget" => cmd_budget(&serde_json::from_value(params).map_err(redo)?).map(|r| r.1),
        "lifetime" => cmd_lifetime(&serde_json::from_value(params).map_err(redo)?).map(|r| r.1),
        "compare" => cmd_compare(&serde_json::from_value(params).map_err(redo)?)
            .map(|r| r.1.expect("compare manifest implies an output path")),
        other => Err(Error::Usage(format!(
            "unknown subcommand in manifest: {other:?}"
        ))),
    }
}
