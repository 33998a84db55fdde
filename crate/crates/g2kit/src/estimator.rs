//! Antibunching estimation from a chronogram: windowed counts around the
//! central, accidental (+T) and background (-T/2) intervals, the
//! background-corrected ratio, window validation against contaminating
//! secondary peaks, and the window-width sweep.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::correlator::Chronogram;
use crate::error::{Error, Result};
use crate::lifetime::{fit_lifetime, LifetimeFit};

/// Three identical-width integration intervals on a chronogram, realized as
/// bin index ranges: the true-coincidence window around delay 0, the
/// accidental window around +T, and the background window around -T/2
/// (maximally far from both peaks).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowSpec {
    /// Requested window width (ns).
    pub width_ns: f64,
    /// Realized width in bins; `k_w * bin_width` best-approximates the
    /// requested width, never below one bin.
    pub k_w: usize,
    pub bin_width_ticks: u64,
    pub period_ticks: u64,
    pub center_true_ticks: i64,
    pub center_accidental_ticks: i64,
    pub center_background_ticks: i64,
    /// Half-open bin ranges [start, end).
    pub true_bins: (usize, usize),
    pub accidental_bins: (usize, usize),
    pub background_bins: (usize, usize),
    /// The same intervals as half-open delay ranges in ticks.
    pub true_interval_ticks: (i64, i64),
    pub accidental_interval_ticks: (i64, i64),
    pub background_interval_ticks: (i64, i64),
}

impl WindowSpec {
    /// Places the three intervals on a chronogram. The chronogram must carry
    /// the excitation period; all intervals must fall inside the range and
    /// must not overlap.
    pub fn new(ch: &Chronogram, width_ns: f64) -> Result<Self> {
        let period = ch.period_ticks.ok_or_else(|| {
            Error::Usage("chronogram carries no excitation period; cannot place windows".into())
        })? as i64;
        if !(width_ns > 0.0) {
            return Err(Error::Usage("window width must be positive".into()));
        }
        let bw = ch.bin_width_ticks as i64;
        let width_ticks = width_ns * 1000.0 / ch.resolution_ps as f64;
        let k_w = ((width_ticks / bw as f64).round() as i64).max(1) as usize;

        let centers = [0i64, period, -period / 2];
        let mut ranges = [(0usize, 0usize); 3];
        let mut intervals = [(0i64, 0i64); 3];
        for (i, &center) in centers.iter().enumerate() {
            // k_w bins around the bin holding the center; with half-open
            // bins a delay exactly at the center always stays inside
            let center_idx = (center - ch.min_delay_ticks).div_euclid(bw);
            let start_idx = center_idx - (k_w / 2) as i64;
            let end_idx = start_idx + k_w as i64;
            if start_idx < 0 || end_idx > ch.n_bins() as i64 {
                return Err(Error::WindowRange(format!(
                    "interval centered at {center} ticks with width {k_w} bins spans \
                     [{start_idx}, {end_idx}) outside [0, {})",
                    ch.n_bins()
                )));
            }
            ranges[i] = (start_idx as usize, end_idx as usize);
            intervals[i] = (
                ch.min_delay_ticks + start_idx * bw,
                ch.min_delay_ticks + end_idx * bw,
            );
        }
        let mut sorted = ranges;
        sorted.sort();
        for pair in sorted.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::WindowRange(format!(
                    "windows overlap: bins [{}, {}) and [{}, {})",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }
        Ok(WindowSpec {
            width_ns,
            k_w,
            bin_width_ticks: ch.bin_width_ticks,
            period_ticks: period as u64,
            center_true_ticks: centers[0],
            center_accidental_ticks: centers[1],
            center_background_ticks: centers[2],
            true_bins: ranges[0],
            accidental_bins: ranges[1],
            background_bins: ranges[2],
            true_interval_ticks: intervals[0],
            accidental_interval_ticks: intervals[1],
            background_interval_ticks: intervals[2],
        })
    }

    /// Realized window width in nanoseconds.
    pub fn realized_width_ns(&self, resolution_ps: u32) -> f64 {
        self.k_w as f64 * self.bin_width_ticks as f64 * resolution_ps as f64 / 1000.0
    }
}

/// Windowed counts per run: true coincidences, accidentals, background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CountTriple {
    pub true_coincidences: u64,
    pub accidentals: u64,
    pub background: u64,
}

impl CountTriple {
    pub fn as_f64(&self) -> [f64; 3] {
        [
            self.true_coincidences as f64,
            self.accidentals as f64,
            self.background as f64,
        ]
    }
}

/// Sums the chronogram bins over the three windows.
pub fn count_windows(ch: &Chronogram, window: &WindowSpec) -> Result<CountTriple> {
    if window.bin_width_ticks != ch.bin_width_ticks {
        return Err(Error::Geometry {
            field: "bin_width_ticks",
            left: window.bin_width_ticks.to_string(),
            right: ch.bin_width_ticks.to_string(),
        });
    }
    let sum = |range: (usize, usize)| -> Result<u64> {
        ch.bins
            .get(range.0..range.1)
            .map(|s| s.iter().sum())
            .ok_or_else(|| {
                Error::WindowRange(format!("bins [{}, {}) out of range", range.0, range.1))
            })
    };
    Ok(CountTriple {
        true_coincidences: sum(window.true_bins)?,
        accidentals: sum(window.accidental_bins)?,
        background: sum(window.background_bins)?,
    })
}

/// Background-corrected ratio on fractional counts (the shared core used by
/// the budget pipeline, where run means are not integral).
pub fn alpha_from_counts_f64(true_c: f64, accidental: f64, background: f64) -> Result<f64> {
    let denom = accidental - background;
    if denom <= 0.0 {
        return Err(Error::Degenerate(format!(
            "accidental window ({accidental}) does not exceed background ({background}); \
             the accidental peak is indistinguishable from background"
        )));
    }
    Ok((true_c - background) / denom)
}

/// The antibunching estimate with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaEstimate {
    pub alpha: f64,
    pub counts: CountTriple,
    pub window: WindowSpec,
    pub n_pulses: u64,
    /// True when the background window out-counted the true window; the
    /// value is reported as-is.
    pub negative_numerator: bool,
}

impl AlphaEstimate {
    /// Single-run statistical uncertainty (k = 1) from independent Poisson
    /// counting noise in the three disjoint windows.
    pub fn poisson_uncertainty(&self) -> f64 {
        let [nc, nxi, nbg] = self.counts.as_f64();
        let denom = nxi - nbg;
        let c_c = 1.0 / denom;
        let c_xi = -(nc - nbg) / (denom * denom);
        let c_bg = -c_c - c_xi;
        (c_c * c_c * nc + c_xi * c_xi * nxi + c_bg * c_bg * nbg).sqrt()
    }
}

/// Computes the background-corrected antibunching parameter from windowed
/// counts. Fails when the accidental window does not out-count background.
pub fn compute_alpha(
    counts: CountTriple,
    window: WindowSpec,
    n_pulses: u64,
) -> Result<AlphaEstimate> {
    let [nc, nxi, nbg] = counts.as_f64();
    let alpha = alpha_from_counts_f64(nc, nxi, nbg)?;
    Ok(AlphaEstimate {
        alpha,
        counts,
        window,
        n_pulses,
        negative_numerator: nc < nbg,
    })
}

/// Window placement plus counting plus the ratio, in one call.
pub fn estimate_alpha(ch: &Chronogram, width_ns: f64) -> Result<AlphaEstimate> {
    let window = WindowSpec::new(ch, width_ns)?;
    let counts = count_windows(ch, &window)?;
    compute_alpha(counts, window, ch.n_pulses)
}

/// Probability-level estimator with background correction; with zero
/// background probabilities this is the plain coincidence-over-product form.
pub fn alpha_from_probabilities(
    p_c: f64,
    p_a: f64,
    p_b: f64,
    p_c_bg: f64,
    p_a_bg: f64,
    p_b_bg: f64,
) -> Result<f64> {
    let denom = (p_a - p_a_bg) * (p_b - p_b_bg);
    if denom <= 0.0 {
        return Err(Error::Degenerate(format!(
            "non-positive probability denominator ({denom})"
        )));
    }
    Ok((p_c - p_c_bg) / denom)
}

/// Validity check for reading the ratio as the zero-delay correlation:
/// click probabilities must stay well below 0.1 per pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LowFluxCheck {
    Pass,
    /// Boundary inclusive: 0.1 itself warns.
    Warning {
        max_probability: f64,
    },
}

pub fn low_flux_check(p_a: f64, p_b: f64) -> Result<LowFluxCheck> {
    for p in [p_a, p_b] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Usage(format!("probability {p} outside [0, 1]")));
        }
    }
    let max = p_a.max(p_b);
    if max >= 0.1 {
        Ok(LowFluxCheck::Warning {
            max_probability: max,
        })
    } else {
        Ok(LowFluxCheck::Pass)
    }
}

/// A contiguous group of bins inside the true-coincidence window whose
/// counts exceed the fitted pulse-train model by more than five standard
/// deviations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackflashFlag {
    /// Count-weighted center of the flagged group (ns).
    pub delay_ns: f64,
    pub first_bin: usize,
    pub span_bins: usize,
    /// Largest per-bin excess over the model, in units of sqrt(model).
    pub peak_significance: f64,
}

/// Report from [`validate_window`]; report-only, never an error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowValidation {
    pub flags: Vec<BackflashFlag>,
    /// False when the chronogram had too little data to fit the model; no
    /// flags can be raised in that case.
    pub model_fitted: bool,
}

/// Checks the true-coincidence window for secondary peaks (detector
/// backflash) by comparing each bin against the fitted pulse-train model:
/// bins above `model + 5 sqrt(model)` form flagged groups.
pub fn validate_window(ch: &Chronogram, window: &WindowSpec) -> WindowValidation {
    let fit: Option<LifetimeFit> = fit_lifetime(ch, None).ok();
    let Some(fit) = fit else {
        return WindowValidation {
            flags: Vec::new(),
            model_fitted: false,
        };
    };

    let (start, end) = window.true_bins;
    let mut flags = Vec::new();
    let mut group: Option<(usize, usize, f64, f64, f64)> = None; // first, last, weight, weighted_tau, max_sig
    for k in start..end.min(ch.n_bins()) {
        let expected = fit.model.eval(ch.bin_center_ns(k)).max(0.0);
        let count = ch.bins[k] as f64;
        let excess = count - (expected + 5.0 * expected.sqrt());
        if excess > 0.0 {
            let sig = (count - expected) / expected.sqrt().max(1e-9);
            let w = count - expected;
            group = Some(match group {
                Some((first, _, gw, gt, gs)) => {
                    (first, k, gw + w, gt + w * ch.bin_center_ns(k), gs.max(sig))
                }
                None => (k, k, w, w * ch.bin_center_ns(k), sig),
            });
        } else if let Some((first, last, gw, gt, gs)) = group.take() {
            flags.push(BackflashFlag {
                delay_ns: gt / gw,
                first_bin: first,
                span_bins: last - first + 1,
                peak_significance: gs,
            });
        }
    }
    if let Some((first, last, gw, gt, gs)) = group {
        flags.push(BackflashFlag {
            delay_ns: gt / gw,
            first_bin: first,
            span_bins: last - first + 1,
            peak_significance: gs,
        });
    }
    WindowValidation {
        flags,
        model_fitted: true,
    }
}

/// Repeats the estimate over a list of window widths.
pub fn window_sweep(ch: &Chronogram, widths_ns: &[f64]) -> Result<Vec<AlphaEstimate>> {
    widths_ns.iter().map(|&w| estimate_alpha(ch, w)).collect()
}

/// Writes `w_ns,alpha,u_alpha_k1` rows for a sweep.
pub fn export_sweep(estimates: &[AlphaEstimate], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(out, "w_ns,alpha,u_alpha_k1").map_err(|e| Error::io(path, e))?;
    for est in estimates {
        writeln!(
            out,
            "{},{},{}",
            est.window.width_ns,
            est.alpha,
            est.poisson_uncertainty()
        )
        .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// 1 ns bins over +-600 ns at 2.5 MHz (period 400 ns), 1 ps ticks.
    fn blank_chronogram() -> Chronogram {
        Chronogram {
            bin_width_ticks: 1000,
            min_delay_ticks: -600_000,
            max_delay_ticks: 600_000,
            bins: vec![0; 1200],
            n_pulses: 1_250_000_000,
            resolution_ps: 1,
            channel_pair: (0, 1),
            period_ticks: Some(400_000),
        }
    }

    fn triple(nc: u64, nxi: u64, nbg: u64) -> CountTriple {
        CountTriple {
            true_coincidences: nc,
            accidentals: nxi,
            background: nbg,
        }
    }

    #[test]
    fn windows_are_identical_width_and_disjoint() {
        let ch = blank_chronogram();
        let w = WindowSpec::new(&ch, 16.0).unwrap();
        assert_eq!(w.k_w, 16);
        assert_eq!(w.true_bins.1 - w.true_bins.0, 16);
        assert_eq!(w.accidental_bins.1 - w.accidental_bins.0, 16);
        assert_eq!(w.background_bins.1 - w.background_bins.0, 16);
        // centered: delay 0 sits at bin 600, so [-8 ns, +8 ns) is bins 592..608
        assert_eq!(w.true_bins, (592, 608));
        assert_eq!(w.accidental_bins, (992, 1008));
        assert_eq!(w.background_bins, (392, 408));
    }

    #[test]
    fn oversized_window_is_rejected() {
        let ch = blank_chronogram();
        assert!(matches!(
            WindowSpec::new(&ch, 250.0),
            Err(Error::WindowRange(_))
        ));
    }

    #[test]
    fn count_windows_zero_and_delta() {
        let ch = blank_chronogram();
        let w = WindowSpec::new(&ch, 16.0).unwrap();
        assert_eq!(count_windows(&ch, &w).unwrap(), triple(0, 0, 0));

        let mut delta = blank_chronogram();
        let zero_bin = delta.bin_of(0).unwrap();
        delta.bins[zero_bin] = 1;
        for width in [1.0, 4.0, 16.0, 40.0] {
            let w = WindowSpec::new(&delta, width).unwrap();
            assert_eq!(count_windows(&delta, &w).unwrap(), triple(1, 0, 0));
        }
    }

    #[test]
    fn alpha_reproduces_reference_budgets() {
        let a1 = alpha_from_counts_f64(1000.0, 7400.0, 560.0).unwrap();
        assert_relative_eq!(a1, 440.0 / 6840.0);
        assert!((a1 - 0.06433).abs() < 5e-6);
        let a2 = alpha_from_counts_f64(900.0, 5300.0, 530.0).unwrap();
        assert_relative_eq!(a2, 370.0 / 4770.0);
        assert!((a2 - 0.07757).abs() < 5e-6);
    }

    #[test]
    fn alpha_edge_cases() {
        // perfect single-photon limit
        assert_eq!(alpha_from_counts_f64(560.0, 7400.0, 560.0).unwrap(), 0.0);
        // unit ratio when true equals accidental
        assert_eq!(alpha_from_counts_f64(900.0, 900.0, 123.0).unwrap(), 1.0);
        // degenerate statistics
        assert!(alpha_from_counts_f64(900.0, 500.0, 560.0).is_err());
        assert!(alpha_from_counts_f64(900.0, 560.0, 560.0).is_err());
    }

    #[test]
    fn negative_numerator_is_flagged_not_rejected() {
        let ch = blank_chronogram();
        let w = WindowSpec::new(&ch, 16.0).unwrap();
        let est = compute_alpha(triple(400, 7400, 560), w, 100).unwrap();
        assert!(est.negative_numerator);
        assert!(est.alpha < 0.0);
    }

    #[test]
    fn probability_estimator_identities() {
        // Poissonian identity with no background
        assert_eq!(
            alpha_from_probabilities(0.3 * 0.4, 0.3, 0.4, 0.0, 0.0, 0.0).unwrap(),
            1.0
        );
        assert!(alpha_from_probabilities(0.1, 0.0, 0.5, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn probability_estimator_is_efficiency_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..200 {
            let p_a: f64 = rng.gen_range(0.01..0.2);
            let p_b: f64 = rng.gen_range(0.01..0.2);
            let p_c: f64 = rng.gen_range(0.0..p_a * p_b);
            let bg_a = p_a * rng.gen_range(0.0..0.5);
            let bg_b = p_b * rng.gen_range(0.0..0.5);
            let bg_c = p_c * rng.gen_range(0.0..0.5);
            let base = alpha_from_probabilities(p_c, p_a, p_b, bg_c, bg_a, bg_b).unwrap();
            let eta_a: f64 = rng.gen_range(0.01..1.0);
            let eta_b: f64 = rng.gen_range(0.01..1.0);
            let scaled = alpha_from_probabilities(
                eta_a * eta_b * p_c,
                eta_a * p_a,
                eta_b * p_b,
                eta_a * eta_b * bg_c,
                eta_a * bg_a,
                eta_b * bg_b,
            )
            .unwrap();
            assert_relative_eq!(base, scaled, max_relative = 1e-12);

            // independent re-implementation of the same formula
            let direct = (p_c - bg_c) / ((p_a - bg_a) * (p_b - bg_b));
            assert_relative_eq!(base, direct, max_relative = 1e-15);
        }
    }

    #[test]
    fn low_flux_boundaries() {
        assert_eq!(low_flux_check(0.002, 0.002).unwrap(), LowFluxCheck::Pass);
        assert!(matches!(
            low_flux_check(0.5, 0.001).unwrap(),
            LowFluxCheck::Warning { .. }
        ));
        // boundary inclusive
        assert!(matches!(
            low_flux_check(0.1, 0.1).unwrap(),
            LowFluxCheck::Warning { .. }
        ));
        assert!(low_flux_check(1.2, 0.0).is_err());
    }

    #[test]
    fn validate_window_on_empty_chronogram_has_no_flags() {
        let ch = blank_chronogram();
        let w = WindowSpec::new(&ch, 16.0).unwrap();
        let report = validate_window(&ch, &w);
        assert!(report.flags.is_empty());
        assert!(!report.model_fitted);
    }

    #[test]
    fn sweep_single_width_matches_direct_estimate() {
        let mut ch = blank_chronogram();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for b in ch.bins.iter_mut() {
            *b = rng.gen_range(0..30);
        }
        // put a real accidental peak in place
        for k in 992..1008 {
            ch.bins[k] += 400;
        }
        let sweep = window_sweep(&ch, &[16.0]).unwrap();
        let direct = estimate_alpha(&ch, 16.0).unwrap();
        assert_eq!(sweep.len(), 1);
        assert_eq!(sweep[0], direct);
    }

    #[test]
    fn enlarging_window_grows_counts_monotonically() {
        let mut ch = blank_chronogram();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for b in ch.bins.iter_mut() {
            *b = rng.gen_range(0..50);
        }
        let mut prev = triple(0, 0, 0);
        for width in 1..=100 {
            let w = WindowSpec::new(&ch, width as f64).unwrap();
            let c = count_windows(&ch, &w).unwrap();
            assert!(c.true_coincidences >= prev.true_coincidences);
            assert!(c.accidentals >= prev.accidentals);
            assert!(c.background >= prev.background);
            prev = c;
        }
    }

    #[test]
    fn sweep_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let mut ch = blank_chronogram();
        for k in 992..1008 {
            ch.bins[k] += 100;
        }
        let sweep = window_sweep(&ch, &[8.0, 16.0]).unwrap();
        export_sweep(&sweep, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("w_ns,alpha,u_alpha_k1"));
        assert_eq!(lines.count(), 2);
    }
}
