//! Sweep the coincidence window width: the estimate plateaus as long as no
//! contaminating structure enters the window, then jumps once detector
//! backflash peaks are integrated.
//!
//! ```bash
//! cargo run --release --example window_sweep
//! ```

use g2kit::correlator::cross_correlate;
use g2kit::estimator::{export_sweep, window_sweep};
use g2kit::simulator::{simulate_run, BackflashConfig, SimConfig};

fn main() -> g2kit::Result<()> {
    let base = SimConfig {
        acquisition_time_s: 100.0,
        seed: 5,
        ..SimConfig::reference()
    };

    for (label, backflash) in [
        ("clean", None),
        (
            "with backflash at +-50 ns",
            Some(BackflashConfig {
                probability: 0.02,
                delay_ns: 50.0,
                spread_ns: 1.0,
            }),
        ),
    ] {
        let config = SimConfig {
            backflash,
            ..base.clone()
        };
        let stream = simulate_run(&config)?;
        let chrono = cross_correlate(&stream, 0, 1, 1000, (-600_000, 600_000))?;

        let widths: Vec<f64> = vec![4.0, 8.0, 16.0, 24.0, 40.0, 80.0, 120.0];
        let sweep = window_sweep(&chrono, &widths)?;
        println!("{label}:");
        println!("  {:>6} {:>10} {:>10}", "w_ns", "alpha", "u(k=1)");
        for est in &sweep {
            println!(
                "  {:>6.0} {:>10.4} {:>10.4}",
                est.window.width_ns,
                est.alpha,
                est.poisson_uncertainty()
            );
        }
        let path = std::env::temp_dir().join(format!(
            "g2kit_sweep_{}.csv",
            if backflash.is_some() {
                "backflash"
            } else {
                "clean"
            }
        ));
        export_sweep(&sweep, &path)?;
        println!("  -> {}", path.display());
    }
    Ok(())
}
