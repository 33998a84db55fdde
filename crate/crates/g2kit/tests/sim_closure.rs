//! Cross-module checks that use the Monte Carlo simulator as the oracle for
//! the correlator, estimator, and uncertainty machinery.

use g2kit::correlator::{cross_correlate, export_chronogram, import_chronogram, merge, Chronogram};
use g2kit::estimator::{count_windows, estimate_alpha, validate_window, WindowSpec};
use g2kit::simulator::{analytic_expectations, simulate_run, BackflashConfig, SimConfig};
use g2kit::timetag::{read_ttag, write_ttag, EventRecord, TimeTagStream};
use g2kit::uncertainty::{budget_report, correlation_matrix, run_statistics, RunSeries};

const BIN_TICKS: u64 = 1000; // 1 ns at 1 ps resolution
const RANGE_TICKS: (i64, i64) = (-600_000, 600_000);

fn histogram(stream: &TimeTagStream) -> Chronogram {
    cross_correlate(stream, 0, 1, BIN_TICKS, RANGE_TICKS).unwrap()
}

#[test]
fn large_stream_ttag_round_trip_is_byte_exact() {
    // a multi-million-record file written by the simulator survives
    // write -> read -> write byte for byte
    let config = SimConfig {
        acquisition_time_s: 220.0,
        seed: 8,
        ..SimConfig::reference()
    };
    let stream = simulate_run(&config).unwrap();
    assert!(
        stream.events.len() > 5_000_000,
        "{} events",
        stream.events.len()
    );

    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("run.ttag");
    let p2 = dir.path().join("run2.ttag");
    write_ttag(&stream, &p1).unwrap();
    let back = read_ttag(&p1).unwrap();
    assert_eq!(back, stream);
    write_ttag(&back, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn chronogram_peaks_sit_at_zero_and_period_multiples() {
    let config = SimConfig {
        acquisition_time_s: 60.0,
        source: g2kit::simulator::SourceModel::Poissonian { mean_photons: 1.0 },
        seed: 3,
        ..SimConfig::reference()
    };
    let chrono = histogram(&simulate_run(&config).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chrono.csv");
    export_chronogram(&chrono, &path).unwrap();
    let back = import_chronogram(&path).unwrap();

    // locate local maxima over 100 ns neighbourhoods
    let peak_near = |delay_ticks: i64| -> f64 {
        let center = back.bin_of(delay_ticks).unwrap();
        let lo = center.saturating_sub(50);
        let hi = (center + 50).min(back.n_bins());
        let best = (lo..hi).max_by_key(|&k| back.bins[k]).unwrap();
        back.bin_center_ns(best)
    };
    // a Poissonian source shows peaks at 0 and +-400 ns (2.5 MHz period)
    assert!(peak_near(0).abs() < 3.0);
    assert!((peak_near(400_000) - 400.0).abs() < 3.0);
    assert!((peak_near(-400_000) + 400.0).abs() < 3.0);
}

#[test]
fn merge_of_ten_runs_equals_chronogram_of_concatenation() {
    let runs: Vec<TimeTagStream> = (0..10)
        .map(|i| {
            simulate_run(&SimConfig {
                acquisition_time_s: 8.0,
                seed: 100 + i,
                ..SimConfig::reference()
            })
            .unwrap()
        })
        .collect();

    let merged = merge(&runs.iter().map(histogram).collect::<Vec<_>>()).unwrap();

    // append runs on a shared time axis with a gap wider than the maximum
    // delay so no cross-run pair can enter the range
    let gap = RANGE_TICKS.1 as u64 + 1;
    let stride = runs[0].duration_ticks + gap;
    let mut events: Vec<EventRecord> = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let offset = i as u64 * stride;
        events.extend(run.events.iter().map(|e| EventRecord {
            channel: e.channel,
            timestamp: e.timestamp + offset,
        }));
    }
    let mut metadata = runs[0].metadata.clone();
    metadata.acquisition_time_s *= 10.0;
    let concatenated = TimeTagStream::new(
        runs[0].resolution_ps,
        runs[0].channels.clone(),
        events,
        10 * stride,
        metadata,
    )
    .unwrap();
    let whole = histogram(&concatenated);

    assert_eq!(merged.bins, whole.bins);
    assert_eq!(merged.n_pulses, whole.n_pulses);
}

#[test]
fn reference_run_count_magnitudes() {
    // one full-length run of the reference scenario lands in the expected
    // count bands for a 16 ns window
    let stream = simulate_run(&SimConfig::reference()).unwrap();
    let chrono = histogram(&stream);
    let window = WindowSpec::new(&chrono, 16.0).unwrap();
    let counts = count_windows(&chrono, &window).unwrap();
    assert!(
        (5_000..8_000).contains(&counts.accidentals),
        "accidentals {}",
        counts.accidentals
    );
    assert!(
        (400..600).contains(&counts.background),
        "background {}",
        counts.background
    );
    assert!(
        (300..1500).contains(&counts.true_coincidences),
        "true coincidences {}",
        counts.true_coincidences
    );
}

#[test]
fn window_validation_flags_backflash_peaks_only_when_present() {
    let clean = SimConfig {
        acquisition_time_s: 120.0,
        seed: 21,
        ..SimConfig::reference()
    };
    let chrono = histogram(&simulate_run(&clean).unwrap());
    let window = WindowSpec::new(&chrono, 16.0).unwrap();
    let report = validate_window(&chrono, &window);
    assert!(report.model_fitted);
    assert!(
        report.flags.is_empty(),
        "unexpected flags: {:?}",
        report.flags
    );

    let contaminated = SimConfig {
        backflash: Some(BackflashConfig {
            probability: 0.02,
            delay_ns: 50.0,
            spread_ns: 1.0,
        }),
        ..clean
    };
    let chrono = histogram(&simulate_run(&contaminated).unwrap());
    let wide = WindowSpec::new(&chrono, 120.0).unwrap();
    let report = validate_window(&chrono, &wide);
    assert!(report.model_fitted);
    let delays: Vec<f64> = report.flags.iter().map(|f| f.delay_ns).collect();
    assert!(
        delays.iter().any(|d| (d - 50.0).abs() < 3.0),
        "no flag near +50 ns: {delays:?}"
    );
    assert!(
        delays.iter().any(|d| (d + 50.0).abs() < 3.0),
        "no flag near -50 ns: {delays:?}"
    );
    // the standard 16 ns window stays clean even with backflash present
    let narrow = WindowSpec::new(&chrono, 16.0).unwrap();
    assert!(validate_window(&chrono, &narrow).flags.is_empty());
}

#[test]
fn simulated_alpha_closes_against_analytic_expectations() {
    // two-emitter configuration: generative ratio near 1/2
    let base = SimConfig {
        acquisition_time_s: 12.0,
        source: g2kit::simulator::SourceModel::Emitters {
            n_emitters: 2,
            p_emit: 0.5,
        },
        background_rate_hz: 1500.0,
        jitter_sigma_ns: 0.35,
        ..SimConfig::reference()
    };
    let mut alphas = Vec::new();
    let mut expected = None;
    for seed in 0..100 {
        let config = SimConfig {
            seed,
            ..base.clone()
        };
        let chrono = histogram(&simulate_run(&config).unwrap());
        let window = WindowSpec::new(&chrono, 16.0).unwrap();
        expected.get_or_insert_with(|| analytic_expectations(&config, &window).unwrap());
        alphas.push(estimate_alpha(&chrono, 16.0).unwrap().alpha);
    }
    let expected = expected.unwrap();
    let n = alphas.len() as f64;
    let mean = alphas.iter().sum::<f64>() / n;
    let var = alphas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!(
        (mean - expected.alpha).abs() <= 3.0 * se,
        "mean {mean} vs analytic {} (se {se})",
        expected.alpha
    );
}

/// Ten runs with a common per-run brightness drift injected by scaling the
/// channel efficiencies; drift makes the window counts strongly correlated.
fn drifted_series(acquisition_s: f64, drift: f64, base_seed: u64) -> Vec<Chronogram> {
    let pattern: [f64; 10] = [-4.0, -3.0, -2.0, -1.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0];
    let norm = (pattern.iter().map(|w| w * w).sum::<f64>() / 9.0).sqrt();
    pattern
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let g = 1.0 + drift * w / norm;
            let config = SimConfig {
                acquisition_time_s: acquisition_s,
                eta_a: 0.0072 * g,
                eta_b: 0.0072 * g,
                seed: base_seed + i as u64,
                ..SimConfig::reference()
            };
            histogram(&simulate_run(&config).unwrap())
        })
        .collect()
}

#[test]
fn drifted_series_has_positive_count_correlations_and_budget_in_band() {
    let estimates: Vec<_> = drifted_series(1000.0, 0.06, 400)
        .iter()
        .map(|ch| estimate_alpha(ch, 16.0).unwrap())
        .collect();
    let series = RunSeries::from_estimates(&estimates).unwrap();

    // shared brightness fluctuations correlate the true and accidental
    // counts; the opposite-sign sensitivities then partially cancel
    let rho = correlation_matrix(&series).unwrap();
    assert!(rho[0][1] > 0.3, "rho_C_xi = {}", rho[0][1]);

    let budget = budget_report(&series, 2.0, "drifted").unwrap();
    assert!(
        (0.003..0.010).contains(&budget.expanded()),
        "U(k=2) = {}",
        budget.expanded()
    );
}

#[test]
fn run_statistics_mean_tracks_the_generative_alpha() {
    let mut estimates = Vec::new();
    let mut expected = None;
    for seed in 0..10 {
        let config = SimConfig {
            acquisition_time_s: 100.0,
            seed: 700 + seed,
            ..SimConfig::reference()
        };
        let chrono = histogram(&simulate_run(&config).unwrap());
        let window = WindowSpec::new(&chrono, 16.0).unwrap();
        expected.get_or_insert_with(|| analytic_expectations(&config, &window).unwrap());
        estimates.push(estimate_alpha(&chrono, 16.0).unwrap());
    }
    let series = RunSeries::from_estimates(&estimates).unwrap();
    let stats = run_statistics(&series).unwrap();
    let tolerance = 2.0 * stats.std_dev / (10f64).sqrt();
    assert!(
        (stats.mean - expected.unwrap().alpha).abs() <= tolerance,
        "mean {} vs generative {} (tol {tolerance})",
        stats.mean,
        expected.unwrap().alpha
    );
}
