//! Emitter lifetime extraction: fits the pulse-train two-sided exponential
//! model to a coincidence chronogram with Poisson weights.
//!
//! The model is `f(tau) = a + b * sum_n (1 - delta_{0n}/c) * exp(-|tau - n*T|/d)`,
//! where `a` is the flat background per bin, `b` the peak normalization, `c`
//! the effective number of excited emitters (suppresses only the central
//! peak), `d` the lifetime convolved with detector jitter, and `T` the
//! excitation period. The pulse sum is truncated far enough that omitted
//! tails are below 1e-12 relative.

use serde::Serialize;

use crate::correlator::Chronogram;
use crate::error::{Error, Result};

/// Pulse-train exponential model parameters. Peak suppression applies to the
/// n = 0 term only: weight `1 - 1/c` instead of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeModel {
    /// Background coincidences per bin (counts).
    pub background: f64,
    /// Peak normalization (counts).
    pub amplitude: f64,
    /// Number of excited emitters, >= 1.
    pub emitters: f64,
    /// Lifetime including detector jitter (ns).
    pub lifetime_ns: f64,
    /// Excitation period (ns), fixed by the clock, never fitted.
    pub period_ns: f64,
    /// Pulse-sum truncation: terms with |n| <= n_range are evaluated.
    pub n_range: i64,
}

/// Truncation bound such that omitted terms contribute < 1e-12 relative:
/// every peak center inside the delay range plus 40 lifetimes of margin.
pub fn truncation_bound(range_ns: f64, period_ns: f64, lifetime_ns: f64) -> i64 {
    (range_ns / period_ns).ceil() as i64 + (40.0 * lifetime_ns / period_ns).ceil() as i64
}

impl LifetimeModel {
    pub fn new(
        background: f64,
        amplitude: f64,
        emitters: f64,
        lifetime_ns: f64,
        period_ns: f64,
        range_ns: f64,
    ) -> Result<Self> {
        let model = LifetimeModel {
            background,
            amplitude,
            emitters,
            lifetime_ns,
            period_ns,
            n_range: truncation_bound(range_ns, period_ns, lifetime_ns),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lifetime_ns > 0.0) {
            return Err(Error::Config("lifetime must be positive".into()));
        }
        if !(self.period_ns > 0.0) {
            return Err(Error::Config("excitation period must be positive".into()));
        }
        if !(self.emitters >= 1.0) {
            return Err(Error::Config("emitter number must be >= 1".into()));
        }
        Ok(())
    }

    /// Expected counts per bin at delay `tau_ns`.
    pub fn eval(&self, tau_ns: f64) -> f64 {
        self.background + self.amplitude * self.peak_sum(tau_ns)
    }

    /// The truncated pulse sum without background and normalization.
    pub fn peak_sum(&self, tau_ns: f64) -> f64 {
        let mut sum = 0.0;
        for n in -self.n_range..=self.n_range {
            let weight = if n == 0 {
                1.0 - 1.0 / self.emitters
            } else {
                1.0
            };
            sum += weight * (-(tau_ns - n as f64 * self.period_ns).abs() / self.lifetime_ns).exp();
        }
        sum
    }

    /// Analytic partial derivatives of `eval` with respect to
    /// (background, amplitude, emitters, lifetime).
    pub fn gradient(&self, tau_ns: f64) -> [f64; 4] {
        let mut d_amplitude = 0.0;
        let mut d_lifetime = 0.0;
        for n in -self.n_range..=self.n_range {
            let weight = if n == 0 {
                1.0 - 1.0 / self.emitters
            } else {
                1.0
            };
            let dist = (tau_ns - n as f64 * self.period_ns).abs();
            let e = (-dist / self.lifetime_ns).exp();
            d_amplitude += weight * e;
            d_lifetime += weight * e * dist / (self.lifetime_ns * self.lifetime_ns);
        }
        let d_emitters = self.amplitude * (-tau_ns.abs() / self.lifetime_ns).exp()
            / (self.emitters * self.emitters);
        [1.0, d_amplitude, d_emitters, self.amplitude * d_lifetime]
    }

    /// Closed-form side-peak tail seen at a peak center:
    /// `2 exp(-T/d) / (1 - exp(-T/d))`.
    pub fn side_tail(period_ns: f64, lifetime_ns: f64) -> f64 {
        let q = (-period_ns / lifetime_ns).exp();
        2.0 * q / (1.0 - q)
    }
}

/// Fit result: parameters, parameter covariance, and solver diagnostics.
#[derive(Debug, Clone)]
pub struct LifetimeFit {
    pub model: LifetimeModel,
    /// Covariance of (background, amplitude, emitters, lifetime).
    pub covariance: [[f64; 4]; 4],
    pub chi2_reduced: f64,
    pub n_iter: usize,
    pub converged: bool,
}

/// JSON rendering of a fit, keyed by the conventional parameter letters.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub delta_t_ns: f64,
    pub cov: [[f64; 4]; 4],
    pub chi2_reduced: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub weighting: String,
    pub optimizer: String,
}

impl LifetimeFit {
    pub fn report(&self) -> FitReport {
        FitReport {
            a: self.model.background,
            b: self.model.amplitude,
            c: self.model.emitters,
            d: self.model.lifetime_ns,
            delta_t_ns: self.model.period_ns,
            cov: self.covariance,
            chi2_reduced: self.chi2_reduced,
            n_iter: self.n_iter,
            converged: self.converged,
            weighting: "poisson max(N,1)".into(),
            optimizer: "damped gauss-newton with active-set lower bounds".into(),
        }
    }
}

const LOWER_BOUNDS: [f64; 4] = [0.0, 1e-12, 1.0, 1e-9];
const MAX_ITER: usize = 500;
const GRAD_TOL: f64 = 1e-8;

fn clamp_params(p: &mut [f64; 4]) {
    for (v, lo) in p.iter_mut().zip(LOWER_BOUNDS) {
        if *v < lo {
            *v = lo;
        }
    }
}

/// Solves an n x n system (n <= 4) by Gaussian elimination with partial
/// pivoting.
fn solve_n(n: usize, m: &mut [[f64; 4]; 4], rhs: &mut [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= factor * m[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = [0.0; 4];
    for col in (0..n).rev() {
        let mut acc = rhs[col];
        for k in col + 1..n {
            acc -= m[col][k] * x[k];
        }
        x[col] = acc / m[col][col];
    }
    Some(x)
}

fn solve4(m: [[f64; 4]; 4], rhs: [f64; 4]) -> Option<[f64; 4]> {
    let mut m = m;
    let mut rhs = rhs;
    solve_n(4, &mut m, &mut rhs)
}

/// Damped step over the free parameters only; parameters pinned at their
/// lower bound by the gradient receive a zero step.
fn damped_step(
    jtj: &[[f64; 4]; 4],
    jtr: &[f64; 4],
    lambda: f64,
    free: &[usize],
) -> Option<[f64; 4]> {
    let n = free.len();
    let mut a = [[0.0; 4]; 4];
    let mut b = [0.0; 4];
    for (ri, &i) in free.iter().enumerate() {
        b[ri] = -jtr[i];
        for (ci, &j) in free.iter().enumerate() {
            a[ri][ci] = jtj[i][j];
        }
        a[ri][ri] += lambda * jtj[i][i].max(1e-12);
    }
    let x = solve_n(n, &mut a, &mut b)?;
    let mut step = [0.0; 4];
    for (ri, &i) in free.iter().enumerate() {
        step[i] = x[ri];
    }
    Some(step)
}

fn invert4(m: [[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let mut inv = [[0.0; 4]; 4];
    for col in 0..4 {
        let mut e = [0.0; 4];
        e[col] = 1.0;
        let x = solve4(m, e)?;
        for row in 0..4 {
            inv[row][col] = x[row];
        }
    }
    Some(inv)
}

struct WeightedProblem<'a> {
    tau_ns: &'a [f64],
    counts: &'a [f64],
    inv_sqrt_w: Vec<f64>,
    period_ns: f64,
    n_range: i64,
}

impl WeightedProblem<'_> {
    fn model(&self, p: &[f64; 4]) -> LifetimeModel {
        LifetimeModel {
            background: p[0],
            amplitude: p[1],
            emitters: p[2],
            lifetime_ns: p[3],
            period_ns: self.period_ns,
            n_range: self.n_range,
        }
    }

    fn cost(&self, p: &[f64; 4]) -> f64 {
        let m = self.model(p);
        self.tau_ns
            .iter()
            .zip(self.counts)
            .zip(&self.inv_sqrt_w)
            .map(|((&t, &y), &iw)| {
                let r = (y - m.eval(t)) * iw;
                r * r
            })
            .sum()
    }

    /// Normal-equation pieces: J^T J and the gradient J^T r of the weighted
    /// residual vector r_i = (y_i - f_i) / sqrt(w_i).
    fn normal_eq(&self, p: &[f64; 4]) -> ([[f64; 4]; 4], [f64; 4]) {
        let m = self.model(p);
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for ((&t, &y), &iw) in self.tau_ns.iter().zip(self.counts).zip(&self.inv_sqrt_w) {
            let r = (y - m.eval(t)) * iw;
            let g = m.gradient(t);
            // residual derivative is -g * iw
            for i in 0..4 {
                let ji = -g[i] * iw;
                jtr[i] += ji * r;
                for j in i..4 {
                    jtj[i][j] += ji * (-g[j] * iw);
                }
            }
        }
        for i in 0..4 {
            for j in 0..i {
                jtj[i][j] = jtj[j][i];
            }
        }
        (jtj, jtr)
    }
}

/// Projected gradient norm, scaled by parameter magnitude and cost level.
fn scaled_gradient_norm(jtr: &[f64; 4], p: &[f64; 4], cost: f64) -> f64 {
    let mut norm: f64 = 0.0;
    for i in 0..4 {
        // 2*jtr is the cost gradient; descent direction is -jtr
        let mut g = jtr[i];
        if p[i] <= LOWER_BOUNDS[i] && g > 0.0 {
            g = 0.0; // pinned at the lower bound
        }
        norm = norm.max((g * p[i].abs().max(1.0)).abs());
    }
    norm / cost.max(1.0)
}

/// Weighted least-squares fit on raw (delay, counts) points.
///
/// The excitation period is fixed; free parameters are background,
/// amplitude, emitter number (>= 1), and lifetime. Damped Gauss-Newton
/// steps with monotone cost decrease; converges when the scaled projected
/// gradient drops below 1e-8 or the step stalls, capped at 500 iterations.
pub fn fit_lifetime_points(
    tau_ns: &[f64],
    counts: &[f64],
    period_ns: f64,
    init: Option<LifetimeModel>,
) -> Result<LifetimeFit> {
    if tau_ns.len() != counts.len() || tau_ns.len() < 8 {
        return Err(Error::Usage(format!(
            "lifetime fit needs matching delay/count arrays with >= 8 points (got {}/{})",
            tau_ns.len(),
            counts.len()
        )));
    }
    let range_ns = tau_ns.iter().fold(0f64, |m, t| m.max(t.abs()));
    let init = match init {
        Some(m) => m,
        None => initial_guess(tau_ns, counts, period_ns, range_ns)?,
    };
    init.validate()?;

    let problem = WeightedProblem {
        tau_ns,
        counts,
        inv_sqrt_w: counts.iter().map(|&y| 1.0 / y.max(1.0).sqrt()).collect(),
        period_ns,
        n_range: init
            .n_range
            .max(truncation_bound(range_ns, period_ns, init.lifetime_ns)),
    };

    let mut p = [
        init.background,
        init.amplitude,
        init.emitters,
        init.lifetime_ns,
    ];
    clamp_params(&mut p);
    let mut cost = problem.cost(&p);
    let mut lambda = 1e-3;
    let mut n_iter = 0;
    let mut converged = false;

    while n_iter < MAX_ITER {
        n_iter += 1;
        let (jtj, jtr) = problem.normal_eq(&p);
        if scaled_gradient_norm(&jtr, &p, cost) < GRAD_TOL {
            converged = true;
            break;
        }
        // active set: parameters held at the lower bound by the gradient
        // are excluded from the solve, otherwise the clamped step fights
        // the damping forever
        let free: Vec<usize> = (0..4)
            .filter(|&i| !(p[i] <= LOWER_BOUNDS[i] && jtr[i] > 0.0))
            .collect();
        if free.is_empty() {
            converged = true;
            break;
        }
        // Solve (J^T J + lambda diag(J^T J)) step = -J^T r over the free set
        let mut accepted = false;
        for _ in 0..30 {
            let Some(step) = damped_step(&jtj, &jtr, lambda, &free) else {
                lambda *= 10.0;
                continue;
            };
            let mut candidate = [
                p[0] + step[0],
                p[1] + step[1],
                p[2] + step[2],
                p[3] + step[3],
            ];
            clamp_params(&mut candidate);
            let candidate_cost = problem.cost(&candidate);
            if candidate_cost.is_finite() && candidate_cost <= cost {
                let step_norm: f64 = (0..4)
                    .map(|i| ((candidate[i] - p[i]) / p[i].abs().max(1.0)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let stalled =
                    step_norm < 1e-12 || (cost - candidate_cost) <= 1e-14 * cost.max(1e-300);
                p = candidate;
                cost = candidate_cost;
                lambda = (lambda / 3.0).max(1e-14);
                accepted = true;
                if stalled {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // cannot decrease the objective any further
            let (_, jtr) = problem.normal_eq(&p);
            converged = scaled_gradient_norm(&jtr, &p, cost) < 1e-3;
            break;
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            reason: "iteration cap reached".into(),
            iterations: n_iter,
            cost,
        });
    }

    let (jtj, _) = problem.normal_eq(&p);
    let covariance = invert4(jtj).unwrap_or([[f64::NAN; 4]; 4]);
    let dof = (tau_ns.len().saturating_sub(4)).max(1) as f64;
    Ok(LifetimeFit {
        model: problem.model(&p),
        covariance,
        chi2_reduced: cost / dof,
        n_iter,
        converged,
    })
}

/// Fits the model to a chronogram. The excitation period comes from the
/// chronogram clock metadata; the range must span at least two side peaks.
pub fn fit_lifetime(ch: &Chronogram, init: Option<LifetimeModel>) -> Result<LifetimeFit> {
    let period_ns = match &init {
        Some(m) => m.period_ns,
        None => {
            let p = ch.period_ticks.ok_or_else(|| {
                Error::Usage(
                    "chronogram carries no excitation period; pass an initial model".into(),
                )
            })?;
            p as f64 * ch.resolution_ps as f64 / 1000.0
        }
    };
    let side_peaks = (1..)
        .take_while(|&n| {
            let t = n as f64 * period_ns;
            let lo = ch.min_delay_ticks as f64 * ch.resolution_ps as f64 / 1000.0;
            let hi = ch.max_delay_ticks as f64 * ch.resolution_ps as f64 / 1000.0;
            -t > lo || t < hi
        })
        .map(|n| {
            let lo = ch.min_delay_ticks as f64 * ch.resolution_ps as f64 / 1000.0;
            let hi = ch.max_delay_ticks as f64 * ch.resolution_ps as f64 / 1000.0;
            let t = n as f64 * period_ns;
            u32::from(-t > lo) + u32::from(t < hi)
        })
        .take(4)
        .sum::<u32>();
    if side_peaks < 2 {
        return Err(Error::Usage(
            "chronogram range must span at least two side peaks".into(),
        ));
    }
    if ch.total_counts() == 0 {
        return Err(Error::Degenerate(
            "chronogram is empty; nothing to fit".into(),
        ));
    }
    let tau: Vec<f64> = (0..ch.n_bins()).map(|k| ch.bin_center_ns(k)).collect();
    let counts: Vec<f64> = ch.bins.iter().map(|&c| c as f64).collect();
    fit_lifetime_points(&tau, &counts, period_ns, init)
}

/// Deterministic starting point: background from the median between peaks,
/// lifetime from a log-linear regression of the first side peak's right
/// flank, amplitude from the side-peak height, emitter number from the
/// central-peak suppression.
fn initial_guess(
    tau_ns: &[f64],
    counts: &[f64],
    period_ns: f64,
    range_ns: f64,
) -> Result<LifetimeModel> {
    let in_window = |center: f64, half: f64| {
        tau_ns
            .iter()
            .zip(counts)
            .filter(move |(&t, _)| (t - center).abs() <= half)
    };

    let mut bg: Vec<f64> = in_window(-period_ns / 2.0, period_ns / 8.0)
        .map(|(_, &c)| c)
        .collect();
    if bg.is_empty() {
        bg = counts.to_vec();
    }
    bg.sort_by(f64::total_cmp);
    let background0 = bg[bg.len() / 2];

    let (peak_tau, peak_height) =
        in_window(period_ns, period_ns / 4.0).fold((period_ns, 0.0f64), |acc, (&t, &c)| {
            if c > acc.1 {
                (t, c)
            } else {
                acc
            }
        });
    if peak_height < 1.0 {
        return Err(Error::Degenerate(
            "no counts in the side-peak region; cannot initialize the fit".into(),
        ));
    }
    let amplitude0 = (peak_height - background0)
        .max(peak_height * 1e-3)
        .max(1e-9);

    // crude scale: where the right flank first drops to 1/e of the peak excess
    let threshold = background0 + amplitude0 / std::f64::consts::E;
    let rough = tau_ns
        .iter()
        .zip(counts)
        .filter(|(&t, &c)| t > peak_tau && c < threshold)
        .map(|(&t, _)| t - peak_tau)
        .fold(f64::INFINITY, f64::min);
    let rough = if rough.is_finite() {
        rough.clamp(1e-3, period_ns / 4.0)
    } else {
        period_ns / 25.0
    };

    // log-linear regression over one to three rough lifetimes of flank
    let pts: Vec<(f64, f64)> = tau_ns
        .iter()
        .zip(counts)
        .filter(|(&t, &c)| {
            t >= peak_tau + rough && t <= peak_tau + 3.0 * rough && c > background0 + 1.0
        })
        .map(|(&t, &c)| (t - peak_tau, (c - background0).ln()))
        .collect();
    let lifetime0 = if pts.len() >= 3 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        if slope < -1e-12 {
            (-1.0 / slope).clamp(1e-3, period_ns)
        } else {
            rough
        }
    } else {
        rough
    };

    let central_height = in_window(0.0, period_ns / 4.0)
        .map(|(_, &c)| c)
        .fold(0.0f64, f64::max);
    let tail = LifetimeModel::side_tail(period_ns, lifetime0);
    let central_excess = central_height - background0 - amplitude0 * tail;
    let emitters0 =
        (amplitude0 / (amplitude0 - central_excess).max(amplitude0 / 100.0)).clamp(1.0, 100.0);

    LifetimeModel::new(
        background0,
        amplitude0,
        emitters0,
        lifetime0,
        period_ns,
        range_ns,
    )
}

/// Unweighted mean and standard error of the mean across repeated fits.
pub fn aggregate_lifetime(lifetimes_ns: &[f64]) -> Result<(f64, f64)> {
    if lifetimes_ns.len() < 2 {
        return Err(Error::Usage(
            "aggregation requires at least two fits".into(),
        ));
    }
    let n = lifetimes_ns.len() as f64;
    let mean = lifetimes_ns.iter().sum::<f64>() / n;
    let var = lifetimes_ns.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, Poisson};

    fn model(a: f64, b: f64, c: f64, d: f64) -> LifetimeModel {
        LifetimeModel::new(a, b, c, d, 400.0, 600.0).unwrap()
    }

    #[test]
    fn peak_value_closed_forms() {
        let tail = LifetimeModel::side_tail(400.0, 15.34);
        // c -> infinity: full central peak
        let m = model(10.0, 100.0, 1e12, 15.34);
        assert_relative_eq!(
            m.eval(0.0),
            10.0 + 100.0 * (1.0 + tail),
            max_relative = 1e-10
        );
        // c = 1: central term vanishes entirely
        let m1 = model(10.0, 100.0, 1.0, 15.34);
        assert_relative_eq!(m1.eval(0.0), 10.0 + 100.0 * tail, max_relative = 1e-12);
    }

    #[test]
    fn truncated_sum_matches_wide_oracle() {
        let m = model(10.0, 100.0, 1.0, 15.34);
        let tau = 400.0;
        let mut oracle = 0.0;
        for n in -10_000i64..=10_000 {
            let weight = if n == 0 { 0.0 } else { 1.0 };
            oracle += weight * (-(tau - n as f64 * 400.0).abs() / 15.34).exp();
        }
        oracle = 10.0 + 100.0 * oracle;
        assert_relative_eq!(m.eval(tau), oracle, max_relative = 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        use rand::Rng;
        for _ in 0..40 {
            let p = [
                rng.gen_range(0.5..50.0),
                rng.gen_range(10.0..500.0),
                rng.gen_range(1.05..20.0),
                rng.gen_range(5.0..40.0),
            ];
            let tau: f64 = rng.gen_range(-590.0..590.0);
            let m = model(p[0], p[1], p[2], p[3]);
            let analytic = m.gradient(tau);
            for i in 0..4 {
                let h = p[i].abs().max(1.0) * 1e-5;
                let mut hi = p;
                hi[i] += h;
                let mut lo = p;
                lo[i] -= h;
                let up = model(hi[0], hi[1], hi[2], hi[3]).eval(tau);
                let dn = model(lo[0], lo[1], lo[2], lo[3]).eval(tau);
                let numeric = (up - dn) / (2.0 * h);
                assert_relative_eq!(analytic[i], numeric, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn dominant_peak_term_is_even() {
        // wide period so neighbor tails are negligible
        let m = LifetimeModel::new(5.0, 200.0, 2.0, 15.0, 1.5e5, 3.1e5).unwrap();
        for x in [0.5, 3.0, 11.0, 40.0] {
            let up = m.eval(1.5e5 + x) - 5.0;
            let dn = m.eval(1.5e5 - x) - 5.0;
            assert_relative_eq!(up, dn, max_relative = 1e-9);
        }
    }

    fn synthetic_points(m: &LifetimeModel) -> (Vec<f64>, Vec<f64>) {
        let tau: Vec<f64> = (-600..600).map(|k| k as f64 + 0.5).collect();
        let counts: Vec<f64> = tau.iter().map(|&t| m.eval(t)).collect();
        (tau, counts)
    }

    #[test]
    fn noiseless_fit_recovers_parameters() {
        let truth = model(12.0, 800.0, 2.5, 15.34);
        let (tau, counts) = synthetic_points(&truth);
        let fit = fit_lifetime_points(&tau, &counts, 400.0, None).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.model.background, 12.0, max_relative = 1e-6);
        assert_relative_eq!(fit.model.amplitude, 800.0, max_relative = 1e-6);
        assert_relative_eq!(fit.model.emitters, 2.5, max_relative = 1e-6);
        assert_relative_eq!(fit.model.lifetime_ns, 15.34, max_relative = 1e-6);
    }

    #[test]
    fn fit_is_scale_equivariant() {
        let truth = model(12.0, 800.0, 2.5, 15.34);
        let (tau, counts) = synthetic_points(&truth);
        let scaled: Vec<f64> = counts.iter().map(|c| c * 7.5).collect();
        let fit = fit_lifetime_points(&tau, &scaled, 400.0, None).unwrap();
        assert_relative_eq!(fit.model.background, 12.0 * 7.5, max_relative = 1e-5);
        assert_relative_eq!(fit.model.amplitude, 800.0 * 7.5, max_relative = 1e-5);
        assert_relative_eq!(fit.model.emitters, 2.5, max_relative = 1e-5);
        assert_relative_eq!(fit.model.lifetime_ns, 15.34, max_relative = 1e-5);
    }

    #[test]
    fn fit_is_translation_covariant() {
        // equal peak weights (huge c), otherwise the suppressed peak would
        // move out of the model class under an axis shift
        let truth = model(12.0, 800.0, 1e9, 15.34);
        let (tau, counts) = synthetic_points(&truth);
        let shifted: Vec<f64> = tau.iter().map(|t| t + 400.0).collect();
        let init = LifetimeModel::new(10.0, 700.0, 1e9, 14.0, 400.0, 1000.0).unwrap();
        let base = fit_lifetime_points(&tau, &counts, 400.0, Some(init.clone())).unwrap();
        let moved = fit_lifetime_points(&shifted, &counts, 400.0, Some(init)).unwrap();
        assert_relative_eq!(base.model.lifetime_ns, 15.34, max_relative = 1e-6);
        assert_relative_eq!(
            moved.model.lifetime_ns,
            base.model.lifetime_ns,
            max_relative = 1e-6
        );
    }

    #[test]
    fn poisson_noisy_fit_recovers_lifetime() {
        let truth = model(30.0, 1000.0, 2.0, 15.34);
        let (tau, clean) = synthetic_points(&truth);
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..8 {
            let noisy: Vec<f64> = clean
                .iter()
                .map(|&mu| Poisson::new(mu.max(1e-9)).unwrap().sample(&mut rng))
                .collect();
            let fit = fit_lifetime_points(&tau, &noisy, 400.0, None).unwrap();
            assert!(
                (fit.model.lifetime_ns - 15.34).abs() / 15.34 < 0.02,
                "lifetime off: {}",
                fit.model.lifetime_ns
            );
            assert!(
                (fit.model.emitters - 2.0).abs() / 2.0 < 0.10,
                "emitters off: {}",
                fit.model.emitters
            );
        }
    }

    #[test]
    fn empty_data_is_degenerate() {
        let tau: Vec<f64> = (-600..600).map(|k| k as f64 + 0.5).collect();
        let counts = vec![0.0; tau.len()];
        assert!(fit_lifetime_points(&tau, &counts, 400.0, None).is_err());
    }

    #[test]
    fn aggregate_mean_and_standard_error() {
        let (mean, se) = aggregate_lifetime(&[15.0, 16.0]).unwrap();
        assert_relative_eq!(mean, 15.5);
        assert_relative_eq!(se, 0.5);
        let (_, se0) = aggregate_lifetime(&[15.2, 15.2, 15.2]).unwrap();
        assert!(se0 < 1e-12);
        assert!(aggregate_lifetime(&[15.0]).is_err());
    }
}
