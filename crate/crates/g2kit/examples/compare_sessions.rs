//! Two measurement sessions on the same source, each reduced to a budget,
//! then checked for compatibility via the normalized error at k = 2.
//!
//! ```bash
//! cargo run --release --example compare_sessions
//! ```

use g2kit::correlator::cross_correlate;
use g2kit::estimator::estimate_alpha;
use g2kit::simulator::{simulate_run, SimConfig};
use g2kit::uncertainty::{budget_report, compare, AlphaBudget, RunSeries};

fn session(label: &str, base_seed: u64) -> g2kit::Result<AlphaBudget> {
    let estimates: Vec<_> = (0..5)
        .map(|i| {
            let config = SimConfig {
                acquisition_time_s: 60.0,
                seed: base_seed + i,
                ..SimConfig::reference()
            };
            let stream = simulate_run(&config)?;
            let chrono = cross_correlate(&stream, 0, 1, 1000, (-600_000, 600_000))?;
            estimate_alpha(&chrono, 16.0)
        })
        .collect::<g2kit::Result<_>>()?;
    budget_report(&RunSeries::from_estimates(&estimates)?, 2.0, label)
}

fn main() -> g2kit::Result<()> {
    let first = session("first partner", 100)?;
    let second = session("second partner", 200)?;
    for budget in [&first, &second] {
        println!(
            "{}: alpha = {:.4} +- {:.4} (U, k={})",
            budget.label,
            budget.alpha,
            budget.expanded(),
            budget.k
        );
    }

    let result = compare(&first, &second)?;
    println!(
        "\nnormalized error E = {:.3} -> {}",
        result.normalized_error,
        if result.compatible {
            "compatible within the uncertainty"
        } else {
            "NOT compatible"
        }
    );
    Ok(())
}
