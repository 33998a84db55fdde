//! Seeded Monte Carlo generator of time-tag streams from a parametric model
//! of a pulsed emitter feeding an HBT detection chain, plus closed-form
//! expected window counts for configurations without dead time or backflash.
//!
//! Identical (config, seed) pairs produce identical streams byte for byte.
//! Undetected photons never interact with anything downstream, so emission
//! and detection are sampled jointly: per emitter, the pulses that yield a
//! *detected* photon follow geometric gaps with probability
//! `p_emit * (eta_a + eta_b)` per pulse.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::estimator::WindowSpec;
use crate::timetag::{ChannelInfo, EventRecord, RunMetadata, TimeTagStream};

/// Photon-number statistics of the source per excitation pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceModel {
    /// Independent identical emitters, each yielding at most one photon per
    /// pulse with probability `p_emit`.
    Emitters { n_emitters: u32, p_emit: f64 },
    /// Coherent-state benchmark: photon number per pulse is Poisson
    /// distributed with the given mean.
    Poissonian { mean_photons: f64 },
}

impl SourceModel {
    /// Mean photons per pulse.
    pub fn mean_photons(&self) -> f64 {
        match *self {
            SourceModel::Emitters { n_emitters, p_emit } => n_emitters as f64 * p_emit,
            SourceModel::Poissonian { mean_photons } => mean_photons,
        }
    }

    /// Mean ordered same-pulse photon pairs, `E[K(K-1)]`.
    pub fn mean_ordered_pairs(&self) -> f64 {
        match *self {
            SourceModel::Emitters { n_emitters, p_emit } => {
                n_emitters as f64 * (n_emitters as f64 - 1.0) * p_emit * p_emit
            }
            SourceModel::Poissonian { mean_photons } => mean_photons * mean_photons,
        }
    }
}

/// Detector backflash: each surviving detection spawns, with the given
/// probability, a spurious event on the opposite channel at a fixed mean
/// delay with Gaussian spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackflashConfig {
    pub probability: f64,
    pub delay_ns: f64,
    pub spread_ns: f64,
}

/// Full generative model of one acquisition run on two detector channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub excitation_rate_hz: f64,
    pub acquisition_time_s: f64,
    /// Emitter decay constant (ns).
    pub lifetime_ns: f64,
    pub source: SourceModel,
    /// Uniform-in-time darks/stray light per detector (Hz).
    pub background_rate_hz: f64,
    /// Detection probability per photon on channel A, including the 50:50
    /// split and all optical/detector losses. `eta_a + eta_b <= 1`.
    pub eta_a: f64,
    pub eta_b: f64,
    /// Non-paralyzable dead time per detector (ns); 0 disables.
    pub dead_time_ns: f64,
    /// Gaussian timing jitter per detection (ns); 0 disables.
    pub jitter_sigma_ns: f64,
    pub backflash: Option<BackflashConfig>,
    pub resolution_ps: u32,
    pub seed: u64,
}

impl SimConfig {
    /// Reference scenario: a faint pulsed NV-centre-like emitter at 2.5 MHz
    /// excitation, 500 s acquisition, 15.34 ns lifetime, calibrated so a
    /// 16 ns window yields accidental counts near 7e3 and background window
    /// counts near 5.6e2 per run.
    pub fn reference() -> Self {
        SimConfig {
            excitation_rate_hz: 2.5e6,
            acquisition_time_s: 500.0,
            lifetime_ns: 15.34,
            source: SourceModel::Emitters {
                n_emitters: 1,
                p_emit: 0.5,
            },
            background_rate_hz: 3300.0,
            eta_a: 0.0072,
            eta_b: 0.0072,
            dead_time_ns: 0.0,
            jitter_sigma_ns: 0.35,
            backflash: None,
            resolution_ps: 1,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("excitation_rate_hz", self.excitation_rate_hz),
            ("acquisition_time_s", self.acquisition_time_s),
            ("lifetime_ns", self.lifetime_ns),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("background_rate_hz", self.background_rate_hz),
            ("dead_time_ns", self.dead_time_ns),
            ("jitter_sigma_ns", self.jitter_sigma_ns),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        for (name, v) in [("eta_a", self.eta_a), ("eta_b", self.eta_b)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.eta_a + self.eta_b > 1.0 {
            return Err(Error::Config(format!(
                "eta_a + eta_b must not exceed 1 (a photon is detected at most once), got {}",
                self.eta_a + self.eta_b
            )));
        }
        match self.source {
            SourceModel::Emitters { n_emitters, p_emit } => {
                if n_emitters < 1 {
                    return Err(Error::Config("n_emitters must be >= 1".into()));
                }
                if !(0.0..=1.0).contains(&p_emit) {
                    return Err(Error::Config(format!(
                        "p_emit must lie in [0, 1], got {p_emit}"
                    )));
                }
            }
            SourceModel::Poissonian { mean_photons } => {
                if mean_photons < 0.0 || !mean_photons.is_finite() {
                    return Err(Error::Config(format!(
                        "mean_photons must be non-negative, got {mean_photons}"
                    )));
                }
            }
        }
        if let Some(bf) = &self.backflash {
            if !(0.0..=1.0).contains(&bf.probability) {
                return Err(Error::Config(
                    "backflash probability must lie in [0, 1]".into(),
                ));
            }
            if bf.spread_ns < 0.0 {
                return Err(Error::Config(
                    "backflash spread must be non-negative".into(),
                ));
            }
        }
        if self.resolution_ps == 0 {
            return Err(Error::Config("resolution_ps must be positive".into()));
        }
        self.period_ticks()?;
        Ok(())
    }

    /// Excitation period in ticks; the simulator requires it to be integral.
    pub fn period_ticks(&self) -> Result<u64> {
        let t = 1e12 / (self.excitation_rate_hz * self.resolution_ps as f64);
        if (t - t.round()).abs() > 1e-6 || t.round() < 1.0 {
            return Err(Error::Config(format!(
                "excitation period {t} ticks is not integral; adjust rate or resolution"
            )));
        }
        Ok(t.round() as u64)
    }

    pub fn n_pulses(&self) -> u64 {
        (self.excitation_rate_hz * self.acquisition_time_s).round() as u64
    }

    pub fn duration_ticks(&self) -> u64 {
        (self.acquisition_time_s * 1e12 / self.resolution_ps as f64).round() as u64
    }

    pub fn ns_to_ticks(&self, ns: f64) -> f64 {
        ns * 1000.0 / self.resolution_ps as f64
    }

    pub fn metadata(&self) -> RunMetadata {
        RunMetadata::new(self.excitation_rate_hz, self.acquisition_time_s)
    }

    /// Parses the plain-text `key = value` configuration format; keys not
    /// present keep the [`SimConfig::reference`] defaults, unknown keys are
    /// rejected. Backflash is enabled whenever `backflash_probability > 0`.
    pub fn from_keyval(text: &str) -> Result<Self> {
        let mut config = SimConfig::reference();
        let (mut n_emitters, mut p_emit) = (1u32, 0.5f64);
        let mut mean_photons = 1.0f64;
        let mut source_mode = "emitters".to_string();
        let (mut bf_prob, mut bf_delay, mut bf_spread) = (0.0f64, 50.0f64, 1.0f64);

        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                reason: format!("expected key = value, got {line:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Parse {
                line: idx + 1,
                reason: format!("bad {what} value {value:?}"),
            };
            match key {
                "excitation_rate_hz" => {
                    config.excitation_rate_hz = value.parse().map_err(|_| bad(key))?
                }
                "acquisition_time_s" => {
                    config.acquisition_time_s = value.parse().map_err(|_| bad(key))?
                }
                "lifetime_ns" => config.lifetime_ns = value.parse().map_err(|_| bad(key))?,
                "source_mode" => source_mode = value.to_string(),
                "n_emitters" => n_emitters = value.parse().map_err(|_| bad(key))?,
                "p_emit" => p_emit = value.parse().map_err(|_| bad(key))?,
                "mean_photons" => mean_photons = value.parse().map_err(|_| bad(key))?,
                "background_rate_hz" => {
                    config.background_rate_hz = value.parse().map_err(|_| bad(key))?
                }
                "eta_a" => config.eta_a = value.parse().map_err(|_| bad(key))?,
                "eta_b" => config.eta_b = value.parse().map_err(|_| bad(key))?,
                "dead_time_ns" => config.dead_time_ns = value.parse().map_err(|_| bad(key))?,
                "jitter_sigma_ns" => {
                    config.jitter_sigma_ns = value.parse().map_err(|_| bad(key))?
                }
                "backflash_probability" => bf_prob = value.parse().map_err(|_| bad(key))?,
                "backflash_delay_ns" => bf_delay = value.parse().map_err(|_| bad(key))?,
                "backflash_spread_ns" => bf_spread = value.parse().map_err(|_| bad(key))?,
                "resolution_ps" => config.resolution_ps = value.parse().map_err(|_| bad(key))?,
                "seed" => config.seed = value.parse().map_err(|_| bad(key))?,
                other => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        reason: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        config.source = match source_mode.as_str() {
            "emitters" => SourceModel::Emitters { n_emitters, p_emit },
            "poissonian" => SourceModel::Poissonian { mean_photons },
            other => {
                return Err(Error::Config(format!(
                    "source_mode must be \"emitters\" or \"poissonian\", got {other:?}"
                )))
            }
        };
        config.backflash = (bf_prob > 0.0).then_some(BackflashConfig {
            probability: bf_prob,
            delay_ns: bf_delay,
            spread_ns: bf_spread,
        });
        config.validate()?;
        Ok(config)
    }

    /// Renders the configuration in the `key = value` format understood by
    /// [`SimConfig::from_keyval`].
    pub fn to_keyval(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("excitation_rate_hz", self.excitation_rate_hz.to_string());
        kv("acquisition_time_s", self.acquisition_time_s.to_string());
        kv("lifetime_ns", self.lifetime_ns.to_string());
        match self.source {
            SourceModel::Emitters { n_emitters, p_emit } => {
                kv("source_mode", "emitters".into());
                kv("n_emitters", n_emitters.to_string());
                kv("p_emit", p_emit.to_string());
            }
            SourceModel::Poissonian { mean_photons } => {
                kv("source_mode", "poissonian".into());
                kv("mean_photons", mean_photons.to_string());
            }
        }
        kv("background_rate_hz", self.background_rate_hz.to_string());
        kv("eta_a", self.eta_a.to_string());
        kv("eta_b", self.eta_b.to_string());
        kv("dead_time_ns", self.dead_time_ns.to_string());
        kv("jitter_sigma_ns", self.jitter_sigma_ns.to_string());
        let bf = self.backflash.unwrap_or(BackflashConfig {
            probability: 0.0,
            delay_ns: 50.0,
            spread_ns: 1.0,
        });
        kv("backflash_probability", bf.probability.to_string());
        kv("backflash_delay_ns", bf.delay_ns.to_string());
        kv("backflash_spread_ns", bf.spread_ns.to_string());
        kv("resolution_ps", self.resolution_ps.to_string());
        kv("seed", self.seed.to_string());
        out
    }
}

/// Geometric gap to the next success, in whole trials (0 = this trial).
fn geometric_failures(rng: &mut ChaCha12Rng, p: f64) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    let u: f64 = rng.gen();
    ((1.0 - u).ln() / (1.0 - p).ln()) as u64
}

struct DetectionDraws {
    route_a_probability: f64,
    delay: Exp<f64>,
    jitter: Option<Normal<f64>>,
}

impl DetectionDraws {
    fn new(config: &SimConfig) -> Self {
        DetectionDraws {
            route_a_probability: config.eta_a / (config.eta_a + config.eta_b),
            delay: Exp::new(1.0 / config.lifetime_ns).expect("lifetime validated positive"),
            jitter: (config.jitter_sigma_ns > 0.0)
                .then(|| Normal::new(0.0, config.jitter_sigma_ns).expect("sigma validated")),
        }
    }

    /// Channel and tick offset from the pulse time for one detected photon.
    fn sample(&self, rng: &mut ChaCha12Rng, config: &SimConfig) -> (usize, i64) {
        let channel = usize::from(!(rng.gen::<f64>() < self.route_a_probability));
        let mut offset_ns = self.delay.sample(rng);
        if let Some(j) = &self.jitter {
            offset_ns += j.sample(rng);
        }
        (channel, config.ns_to_ticks(offset_ns).round() as i64)
    }
}

/// Generates one two-channel acquisition run.
///
/// Per pulse, each emitter yields at most one photon (exponential delay),
/// routed and detected with the channel efficiencies; background events are
/// Poisson in time; detections get Gaussian jitter, then non-paralyzable
/// dead-time removal, then optional backflash injection on the opposite
/// channel. Events are tick-quantized, clipped to the acquisition span, and
/// sorted.
pub fn simulate_run(config: &SimConfig) -> Result<TimeTagStream> {
    config.validate()?;
    let period = config.period_ticks()? as i128;
    let duration = config.duration_ticks();
    let n_pulses = config.n_pulses();
    let p_detect_per_photon = config.eta_a + config.eta_b;

    let mut root = ChaCha12Rng::seed_from_u64(config.seed);
    let signal_seed = root.gen::<u64>();
    let background_seeds = [root.gen::<u64>(), root.gen::<u64>()];
    let backflash_seed = root.gen::<u64>();

    let mut channels: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
    let draws = DetectionDraws::new(config);
    let mut push = |channel: usize, pulse: u64, offset: i64| {
        let t = pulse as i128 * period + offset as i128;
        if t >= 0 && (t as u128) < duration as u128 {
            channels[channel].push(t as u64);
        }
    };

    let mut signal_rng = ChaCha12Rng::seed_from_u64(signal_seed);
    if p_detect_per_photon > 0.0 {
        match config.source {
            SourceModel::Emitters { n_emitters, p_emit } => {
                let p_det = p_emit * p_detect_per_photon;
                let emitter_seeds: Vec<u64> =
                    (0..n_emitters).map(|_| signal_rng.gen::<u64>()).collect();
                for seed in emitter_seeds {
                    if p_det <= 0.0 {
                        continue;
                    }
                    let mut rng = ChaCha12Rng::seed_from_u64(seed);
                    let mut pulse = geometric_failures(&mut rng, p_det);
                    while pulse < n_pulses {
                        let (channel, offset) = draws.sample(&mut rng, config);
                        push(channel, pulse, offset);
                        pulse += 1 + geometric_failures(&mut rng, p_det);
                    }
                }
            }
            SourceModel::Poissonian { mean_photons } => {
                let rate = mean_photons * p_detect_per_photon;
                if rate > 0.0 {
                    // Poisson process over the continuous pulse axis
                    let gap = Exp::new(rate).expect("rate positive");
                    let mut x = gap.sample(&mut signal_rng);
                    while x < n_pulses as f64 {
                        let (channel, offset) = draws.sample(&mut signal_rng, config);
                        push(channel, x as u64, offset);
                        x += gap.sample(&mut signal_rng);
                    }
                }
            }
        }
    }

    // background: Poisson count with uniform arrival ticks
    for (idx, seed) in background_seeds.into_iter().enumerate() {
        let mean = config.background_rate_hz * config.acquisition_time_s;
        if mean <= 0.0 {
            continue;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let count = Poisson::new(mean).expect("mean positive").sample(&mut rng) as u64;
        for _ in 0..count {
            channels[idx].push(rng.gen_range(0..duration));
        }
    }

    for ch in channels.iter_mut() {
        ch.sort_unstable();
    }

    // non-paralyzable dead time
    let dead_ticks = config.ns_to_ticks(config.dead_time_ns).round() as u64;
    if dead_ticks > 0 {
        for ch in channels.iter_mut() {
            let mut kept = Vec::with_capacity(ch.len());
            let mut last: Option<u64> = None;
            for &t in ch.iter() {
                if last.is_none_or(|l| t >= l + dead_ticks) {
                    kept.push(t);
                    last = Some(t);
                }
            }
            *ch = kept;
        }
    }

    // backflash injection on the opposite channel, after dead-time removal
    if let Some(bf) = &config.backflash {
        if bf.probability > 0.0 {
            let mut rng = ChaCha12Rng::seed_from_u64(backflash_seed);
            let spread = (bf.spread_ns > 0.0)
                .then(|| Normal::new(bf.delay_ns, bf.spread_ns).expect("spread validated"));
            let mut injected: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
            for source in 0..2 {
                for &t in &channels[source] {
                    if rng.gen::<f64>() < bf.probability {
                        let delay_ns = spread.as_ref().map_or(bf.delay_ns, |s| s.sample(&mut rng));
                        let shifted = t as i128 + config.ns_to_ticks(delay_ns).round() as i128;
                        if shifted >= 0 && (shifted as u128) < duration as u128 {
                            injected[1 - source].push(shifted as u64);
                        }
                    }
                }
            }
            for (ch, extra) in channels.iter_mut().zip(injected) {
                ch.extend(extra);
                ch.sort_unstable();
            }
        }
    }

    let mut events: Vec<EventRecord> = channels[0]
        .iter()
        .map(|&t| EventRecord {
            channel: 0,
            timestamp: t,
        })
        .chain(channels[1].iter().map(|&t| EventRecord {
            channel: 1,
            timestamp: t,
        }))
        .collect();
    events.sort_by_key(|e| (e.timestamp, e.channel));

    TimeTagStream::new(
        config.resolution_ps,
        vec![ChannelInfo::detector(0), ChannelInfo::detector(1)],
        events,
        duration,
        config.metadata(),
    )
}

fn normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / std::f64::consts::SQRT_2)
}

/// CDF of the sum of a Laplace(scale) and an independent centered Gaussian:
/// the delay distribution between two detections of photons with
/// exponential emission delays and jittered detectors.
pub fn laplace_gauss_cdf(x: f64, scale: f64, sigma: f64) -> f64 {
    if sigma <= 1e-9 * scale {
        return if x < 0.0 {
            0.5 * (x / scale).exp()
        } else {
            1.0 - 0.5 * (-x / scale).exp()
        };
    }
    let z = x / sigma;
    let s = sigma / scale;
    // asymptotic branches where the Gaussian factor has fully saturated
    if z > 38.0 {
        return 1.0 - 0.5 * (s * s / 2.0 - x / scale).exp();
    }
    if z < -38.0 {
        return 0.5 * (s * s / 2.0 + x / scale).exp();
    }
    normal_cdf(z)
        + 0.5
            * ((s * s / 2.0 + x / scale).exp() * normal_cdf(-z - s)
                - (s * s / 2.0 - x / scale).exp() * normal_cdf(z - s))
}

/// Expected window counts and the resulting ratio for a configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectations {
    pub n_c: f64,
    pub n_xi: f64,
    pub n_bg: f64,
    pub alpha: f64,
}

/// Closed-form expected window counts from Poisson/binomial algebra.
///
/// Valid only without dead time and backflash: same-pulse coincidences from
/// the source's ordered-pair moment, cross-pulse coincidences from squared
/// singles probabilities, and uniform terms from every pairing that involves
/// a background event.
pub fn analytic_expectations(config: &SimConfig, window: &WindowSpec) -> Result<Expectations> {
    config.validate()?;
    if config.dead_time_ns > 0.0 {
        return Err(Error::UnsupportedConfig(
            "closed form assumes zero dead time".into(),
        ));
    }
    if config.backflash.map_or(false, |b| b.probability > 0.0) {
        return Err(Error::UnsupportedConfig(
            "closed form assumes no backflash".into(),
        ));
    }

    let ticks_to_ns = config.resolution_ps as f64 / 1000.0;
    let period_ns = config.period_ticks()? as f64 * ticks_to_ns;
    let n_pulses = config.n_pulses() as f64;
    let t_acq = config.acquisition_time_s;
    let mean_k = config.source.mean_photons();
    let pairs_same = config.source.mean_ordered_pairs();

    // signal singles over the run and background rate per channel
    let s_a = n_pulses * mean_k * config.eta_a;
    let s_b = n_pulses * mean_k * config.eta_b;
    let r_bg = config.background_rate_hz;

    let pair_sigma = config.jitter_sigma_ns * std::f64::consts::SQRT_2;
    let window_mass = |interval: (i64, i64), lag: f64| -> f64 {
        let lo = interval.0 as f64 * ticks_to_ns - lag * period_ns;
        let hi = interval.1 as f64 * ticks_to_ns - lag * period_ns;
        laplace_gauss_cdf(hi, config.lifetime_ns, pair_sigma)
            - laplace_gauss_cdf(lo, config.lifetime_ns, pair_sigma)
    };

    let expected = |interval: (i64, i64)| -> f64 {
        let width_s = (interval.1 - interval.0) as f64 * ticks_to_ns * 1e-9;
        let uniform = width_s * (r_bg * s_a + r_bg * s_b + r_bg * r_bg * t_acq);
        let edge = interval.0.abs().max(interval.1.abs()) as f64 * ticks_to_ns;
        let lags = ((edge + 40.0 * config.lifetime_ns) / period_ns).ceil() as i64 + 1;
        let mut peaks = 0.0;
        for lag in -lags..=lags {
            let pair_moment = if lag == 0 {
                pairs_same
            } else {
                mean_k * mean_k
            };
            peaks += n_pulses
                * pair_moment
                * config.eta_a
                * config.eta_b
                * window_mass(interval, lag as f64);
        }
        uniform + peaks
    };

    let n_c = expected(window.true_interval_ticks);
    let n_xi = expected(window.accidental_interval_ticks);
    let n_bg = expected(window.background_interval_ticks);
    let denom = n_xi - n_bg;
    if denom <= 0.0 {
        return Err(Error::Degenerate(format!(
            "expected accidental count {n_xi} does not exceed background {n_bg}"
        )));
    }
    Ok(Expectations {
        n_c,
        n_xi,
        n_bg,
        alpha: (n_c - n_bg) / denom,
    })
}

/// Closed-form per-detector singles rates (Hz), thinned to first order by
/// non-paralyzable dead time.
pub fn expected_singles_rates(config: &SimConfig) -> Result<(f64, f64)> {
    config.validate()?;
    let mean_k = config.source.mean_photons();
    let tau_dead = config.dead_time_ns * 1e-9;
    let thin = |raw: f64| raw / (1.0 + raw * tau_dead);
    Ok((
        thin(config.excitation_rate_hz * mean_k * config.eta_a + config.background_rate_hz),
        thin(config.excitation_rate_hz * mean_k * config.eta_b + config.background_rate_hz),
    ))
}
