//! Combine repeated runs into an uncertainty budget with correlated inputs:
//! per-run window counts, their sample scatter and correlations, sensitivity
//! coefficients, and the expanded uncertainty on the final estimate.
//!
//! ```bash
//! cargo run --release --example uncertainty_budget
//! ```

use g2kit::correlator::cross_correlate;
use g2kit::estimator::estimate_alpha;
use g2kit::simulator::{simulate_run, SimConfig};
use g2kit::uncertainty::{budget_report, run_statistics, RunSeries};

fn main() -> g2kit::Result<()> {
    // a session of repeated runs; a slow drift of the collection efficiency
    // correlates the window counts run to run, as in real measurements
    let drift = [0.97, 0.99, 1.0, 1.01, 1.03, 1.02, 1.0, 0.98];
    let estimates: Vec<_> = drift
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let config = SimConfig {
                acquisition_time_s: 100.0,
                eta_a: 0.0072 * g,
                eta_b: 0.0072 * g,
                seed: 300 + i as u64,
                ..SimConfig::reference()
            };
            let stream = simulate_run(&config)?;
            let chrono = cross_correlate(&stream, 0, 1, 1000, (-600_000, 600_000))?;
            estimate_alpha(&chrono, 16.0)
        })
        .collect::<g2kit::Result<_>>()?;

    let series = RunSeries::from_estimates(&estimates)?;
    let stats = run_statistics(&series)?;
    println!(
        "per-run alpha: {:?}",
        stats
            .alphas
            .iter()
            .map(|a| (a * 1e3).round() / 1e3)
            .collect::<Vec<_>>()
    );
    println!(
        "mean = {:.4}, 1-sigma band = {:.4}\n",
        stats.mean, stats.std_dev
    );

    let budget = budget_report(&series, 2.0, "example session")?;
    print!("{}", budget.render_table());
    println!(
        "\ncount correlations: rho(N_C, N_xi) = {:.2}, rho(N_C, N_bg) = {:.2}",
        budget.correlations[0][1], budget.correlations[0][2]
    );
    println!(
        "JSON:\n{}",
        serde_json::to_string_pretty(&budget.to_json()).unwrap()
    );
    Ok(())
}
