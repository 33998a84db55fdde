//! Combined standard uncertainty on the antibunching parameter with
//! correlated window counts, rendered as an uncertainty budget, plus the
//! normalized-error compatibility check between two results.
//!
//! Run-to-run scatter of the three window counts (sample standard deviation,
//! not Poisson square roots) feeds a first-order propagation with the full
//! 3x3 correlation matrix estimated from the same runs. Source and coupling
//! drift makes the counts strongly correlated, so the cross terms typically
//! cancel most of the raw quadrature sum.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{alpha_from_counts_f64, AlphaEstimate, CountTriple};

pub const INPUT_NAMES: [&str; 3] = ["N_C", "N_xi", "N_bg"];

/// Windowed counts from repeated runs sharing one window geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSeries {
    pub triples: Vec<CountTriple>,
}

impl RunSeries {
    pub fn from_triples(triples: Vec<CountTriple>) -> Self {
        RunSeries { triples }
    }

    /// Collects per-run estimates, insisting on identical window geometry.
    pub fn from_estimates(estimates: &[AlphaEstimate]) -> Result<Self> {
        if let Some(first) = estimates.first() {
            for est in &estimates[1..] {
                if est.window != first.window {
                    return Err(Error::Usage(
                        "runs in a series must share window geometry".into(),
                    ));
                }
            }
        }
        Ok(RunSeries {
            triples: estimates.iter().map(|e| e.counts).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    fn columns(&self) -> [Vec<f64>; 3] {
        let mut cols = [Vec::new(), Vec::new(), Vec::new()];
        for t in &self.triples {
            let [a, b, c] = t.as_f64();
            cols[0].push(a);
            cols[1].push(b);
            cols[2].push(c);
        }
        cols
    }

    /// Per-run ratios; fails on any degenerate run.
    pub fn alphas(&self) -> Result<Vec<f64>> {
        self.triples
            .iter()
            .map(|t| {
                let [a, b, c] = t.as_f64();
                alpha_from_counts_f64(a, b, c)
            })
            .collect()
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_std(values: &[f64]) -> f64 {
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Partial derivatives of the background-corrected ratio with respect to the
/// three window counts. The background sensitivity is the analytic identity
/// `-(c_C + c_xi)` since the ratio depends on the background only through
/// both differences.
pub fn sensitivities(mean_counts: [f64; 3]) -> Result<[f64; 3]> {
    let [nc, nxi, nbg] = mean_counts;
    let denom = nxi - nbg;
    if denom <= 0.0 {
        return Err(Error::Degenerate(format!(
            "accidental mean ({nxi}) does not exceed background mean ({nbg})"
        )));
    }
    let c_c = 1.0 / denom;
    let c_xi = -(nc - nbg) / (denom * denom);
    Ok([c_c, c_xi, -c_c - c_xi])
}

/// Sample correlation matrix of the three counts across runs, clamped to
/// [-1, 1] against round-off. Uses the same (n-1) normalization as the
/// standard uncertainties.
pub fn correlation_matrix(series: &RunSeries) -> Result<[[f64; 3]; 3]> {
    if series.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 runs, got {}",
            series.len()
        )));
    }
    let cols = series.columns();
    let means = [mean(&cols[0]), mean(&cols[1]), mean(&cols[2])];
    let stds = [
        sample_std(&cols[0]),
        sample_std(&cols[1]),
        sample_std(&cols[2]),
    ];
    for (i, s) in stds.iter().enumerate() {
        if *s == 0.0 {
            return Err(Error::UndefinedCorrelation(format!(
                "{} has zero variance across runs",
                INPUT_NAMES[i]
            )));
        }
    }
    let n = series.len() as f64;
    let mut rho = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let cov: f64 = cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(x, y)| (x - means[i]) * (y - means[j]))
                .sum::<f64>()
                / (n - 1.0);
            rho[i][j] = (cov / (stds[i] * stds[j])).clamp(-1.0, 1.0);
        }
        rho[i][i] = 1.0;
    }
    Ok(rho)
}

fn validate_rho(rho: &[[f64; 3]; 3]) -> Result<()> {
    for i in 0..3 {
        if (rho[i][i] - 1.0).abs() > 1e-12 {
            return Err(Error::Usage("correlation matrix diagonal must be 1".into()));
        }
        for j in 0..3 {
            if rho[i][j].abs() > 1.0 + 1e-12 {
                return Err(Error::Usage(
                    "correlation entries must lie in [-1, 1]".into(),
                ));
            }
            if (rho[i][j] - rho[j][i]).abs() > 1e-12 {
                return Err(Error::Usage("correlation matrix must be symmetric".into()));
            }
        }
    }
    Ok(())
}

/// The propagation quadratic form on explicit parts: variance terms plus
/// twice the correlation-weighted cross terms over the unordered pairs.
pub fn combined_from_parts(
    sensitivities: [f64; 3],
    u_counts: [f64; 3],
    rho: [[f64; 3]; 3],
) -> Result<f64> {
    validate_rho(&rho)?;
    let contrib: Vec<f64> = (0..3).map(|i| sensitivities[i] * u_counts[i]).collect();
    let mut variance: f64 = contrib.iter().map(|c| c * c).sum();
    let scale = variance;
    for i in 0..3 {
        for j in i + 1..3 {
            variance += 2.0 * rho[i][j] * contrib[i] * contrib[j];
        }
    }
    if variance < -1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::InconsistentCorrelation(variance));
    }
    Ok(variance.max(0.0).sqrt())
}

/// Combined standard uncertainty (k = 1) of the ratio at the given count
/// means, count uncertainties, and correlation matrix.
pub fn combined_uncertainty(
    mean_counts: [f64; 3],
    u_counts: [f64; 3],
    rho: [[f64; 3]; 3],
) -> Result<f64> {
    combined_from_parts(sensitivities(mean_counts)?, u_counts, rho)
}

/// Full uncertainty budget in the layout of a standard budget table: one row
/// per input count with value, standard uncertainty, sensitivity and
/// contribution, then the result with its expanded uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaBudget {
    pub label: String,
    pub n_runs: usize,
    pub mean_counts: [f64; 3],
    /// Sample standard deviation of per-run counts (k = 1).
    pub u_counts: [f64; 3],
    pub sensitivities: [f64; 3],
    pub correlations: [[f64; 3]; 3],
    pub alpha: f64,
    /// Combined standard uncertainty, stored at k = 1.
    pub u_combined: f64,
    /// Coverage factor applied on output.
    pub k: f64,
}

#[derive(Debug, Clone, Serialize)]
struct BudgetInput {
    name: &'static str,
    value: f64,
    u: f64,
    k: f64,
}

#[derive(Debug, Clone, Serialize)]
struct BudgetJson<'a> {
    label: &'a str,
    n_runs: usize,
    inputs: Vec<BudgetInput>,
    sensitivities: [f64; 3],
    rho: [[f64; 3]; 3],
    alpha: f64,
    u_combined: f64,
    k: f64,
    #[serde(rename = "U")]
    expanded: f64,
    notes: &'static str,
}

impl AlphaBudget {
    pub fn expanded(&self) -> f64 {
        self.k * self.u_combined
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(BudgetJson {
            label: &self.label,
            n_runs: self.n_runs,
            inputs: (0..3)
                .map(|i| BudgetInput {
                    name: INPUT_NAMES[i],
                    value: self.mean_counts[i],
                    u: self.u_counts[i],
                    k: 1.0,
                })
                .collect(),
            sensitivities: self.sensitivities,
            rho: self.correlations,
            alpha: self.alpha,
            u_combined: self.u_combined,
            k: self.k,
            expanded: self.expanded(),
            notes: "input u are sample standard deviations across runs at k=1; \
                    U = k * u_combined",
        })
        .expect("budget serialization cannot fail")
    }

    /// Aligned text table: Quantity, Value, Standard unc., Sens. Coeff.,
    /// Unc. contribution, with the result row at the bottom.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "Uncertainty budget: {} (k={})\n",
            self.label, self.k
        ));
        out.push_str(&format!(
            "{:<10} {:>12} {:>15} {:>14} {:>19}\n",
            "Quantity", "Value", "Standard unc.", "Sens. Coeff.", "Unc. contribution"
        ));
        for i in 0..3 {
            out.push_str(&format!(
                "{:<10} {:>12.1} {:>15.1} {:>14.2e} {:>19.2e}\n",
                INPUT_NAMES[i],
                self.mean_counts[i],
                self.u_counts[i],
                self.sensitivities[i],
                self.sensitivities[i] * self.u_counts[i],
            ));
        }
        out.push_str(&format!(
            "{:<10} {:>12.4} {:>15} {:>14} {:>19.4}\n",
            "alpha_exp",
            self.alpha,
            "",
            "",
            self.expanded(),
        ));
        out
    }
}

/// Builds the budget from a run series: count means, sample standard
/// deviations, fitted correlations, and the propagated uncertainty expanded
/// by the requested coverage factor.
pub fn budget_report(series: &RunSeries, k: f64, label: impl Into<String>) -> Result<AlphaBudget> {
    if series.len() < 2 {
        return Err(Error::Usage(format!(
            "budget requires at least 2 runs, got {}",
            series.len()
        )));
    }
    let cols = series.columns();
    let mean_counts = [mean(&cols[0]), mean(&cols[1]), mean(&cols[2])];
    let u_counts = [
        sample_std(&cols[0]),
        sample_std(&cols[1]),
        sample_std(&cols[2]),
    ];
    let rho = correlation_matrix(series)?;
    let sens = sensitivities(mean_counts)?;
    let u_combined = combined_from_parts(sens, u_counts, rho)?;
    Ok(AlphaBudget {
        label: label.into(),
        n_runs: series.len(),
        mean_counts,
        u_counts,
        sensitivities: sens,
        correlations: rho,
        alpha: alpha_from_counts_f64(mean_counts[0], mean_counts[1], mean_counts[2])?,
        u_combined,
        k,
    })
}

/// Outcome of a two-result compatibility check at a common coverage factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonResult {
    pub labels: (String, String),
    /// (value, expanded uncertainty U) per side.
    pub alphas: ((f64, f64), (f64, f64)),
    pub k: f64,
    pub normalized_error: f64,
    pub compatible: bool,
}

/// Normalized error on expanded uncertainties:
/// `E = |a - b| / sqrt(U_a^2 + U_b^2)`; compatible iff E <= 1.
pub fn normalized_error(alpha_a: f64, u_a: f64, alpha_b: f64, u_b: f64) -> f64 {
    let diff = (alpha_a - alpha_b).abs();
    let denom = (u_a * u_a + u_b * u_b).sqrt();
    if denom == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / denom
    }
}

/// Compares two budgets at their (matching) coverage factor.
pub fn compare(a: &AlphaBudget, b: &AlphaBudget) -> Result<ComparisonResult> {
    if a.k != b.k {
        return Err(Error::Usage(format!(
            "coverage factors differ: {} vs {}",
            a.k, b.k
        )));
    }
    let e = normalized_error(a.alpha, a.expanded(), b.alpha, b.expanded());
    Ok(ComparisonResult {
        labels: (a.label.clone(), b.label.clone()),
        alphas: ((a.alpha, a.expanded()), (b.alpha, b.expanded())),
        k: a.k,
        normalized_error: e,
        compatible: e <= 1.0,
    })
}

/// Per-run ratio statistics: list, mean, and 1-sigma band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStatistics {
    pub alphas: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
}

pub fn run_statistics(series: &RunSeries) -> Result<RunStatistics> {
    if series.len() < 2 {
        return Err(Error::Usage(format!(
            "run statistics require at least 2 runs, got {}",
            series.len()
        )));
    }
    let alphas = series.alphas()?;
    Ok(RunStatistics {
        mean: mean(&alphas),
        std_dev: sample_std(&alphas),
        alphas,
    })
}

/// Writes `run,alpha` rows with the mean and 1-sigma band in header comments.
pub fn export_run_statistics(stats: &RunStatistics, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(out, "# mean = {}", stats.mean).map_err(|e| Error::io(path, e))?;
    writeln!(out, "# std_dev = {}", stats.std_dev).map_err(|e| Error::io(path, e))?;
    writeln!(out, "run,alpha").map_err(|e| Error::io(path, e))?;
    for (i, a) in stats.alphas.iter().enumerate() {
        writeln!(out, "{i},{a}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
