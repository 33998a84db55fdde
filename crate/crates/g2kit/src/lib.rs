//! Characterization toolkit for pulsed single-photon sources.
//!
//! Takes detector time-tag streams from a Hanbury Brown–Twiss setup and
//! produces coincidence chronograms, the background-corrected antibunching
//! parameter with a correlated-input uncertainty budget, emitter lifetime
//! fits, and a seeded Monte Carlo simulator that serves as the verification
//! oracle for every estimator.
//!
//! # Modules
//!
//! - [`timetag`] — event streams, the TTAG binary format, the CSV bridge,
//!   and exact rational pulse indexing.
//! - [`correlator`] — chronogram construction with a linear two-pointer
//!   sweep, merging, and CSV export/import.
//! - [`estimator`] — integration windows, the background-corrected ratio,
//!   low-flux validity check, window validation, and width sweeps.
//! - [`uncertainty`] — sensitivities, run-to-run correlations, combined
//!   uncertainty, budget reports, and compatibility checks.
//! - [`lifetime`] — the pulse-train exponential model and its bounded
//!   Gauss–Newton fitter.
//! - [`simulator`] — the generative model of source plus detection chain,
//!   with closed-form expected window counts.
//! - [`pipeline`] — file-level steps with reproducibility manifests,
//!   wrapped by the `g2kit` binary.
//!
//! # Getting started
//!
//! Each capability has a runnable walkthrough under `examples/`:
//!
//! ```bash
//! cargo run --release --example simulate_acquisition
//! cargo run --release --example build_chronogram
//! cargo run --release --example estimate_antibunching
//! cargo run --release --example window_sweep
//! cargo run --release --example uncertainty_budget
//! cargo run --release --example fit_lifetime
//! cargo run --release --example compare_sessions
//! cargo run --release --example deadtime_experiment
//! ```
//!
//! Timestamps are integer device ticks end to end; conversion to seconds
//! happens only at reporting boundaries. Streams and chronograms are
//! immutable after construction and safe to share across threads.

pub mod correlator;
pub mod error;
pub mod estimator;
pub mod lifetime;
pub mod pipeline;
pub mod simulator;
pub mod timetag;
pub mod uncertainty;

pub use correlator::{cross_correlate, export_chronogram, import_chronogram, merge, Chronogram};
pub use error::{Error, Result};
pub use estimator::{
    compute_alpha, count_windows, estimate_alpha, low_flux_check, validate_window, window_sweep,
    AlphaEstimate, CountTriple, WindowSpec,
};
pub use lifetime::{
    aggregate_lifetime, fit_lifetime, fit_lifetime_points, LifetimeFit, LifetimeModel,
};
pub use simulator::{
    analytic_expectations, expected_singles_rates, simulate_run, BackflashConfig, Expectations,
    SimConfig, SourceModel,
};
pub use timetag::{
    import_csv, read_ttag, write_ttag, ChannelInfo, ChannelRole, EventRecord, PulseClock,
    RunMetadata, SyncMode, TimeTagStream,
};
pub use uncertainty::{
    budget_report, combined_uncertainty, compare, correlation_matrix, run_statistics,
    sensitivities, AlphaBudget, ComparisonResult, RunSeries,
};
