//! Coincidence chronogram construction: histogram of inter-detector delays
//! over sorted time-tag streams, with a sliding-window two-pointer sweep
//! that never degrades to the O(n_a * n_b) pairing.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::timetag::{PulseClock, TimeTagStream};

/// Histogram of delays `t_b - t_a` between two detector channels.
/// Bins are half-open on the right: bin k covers
/// `[min_delay + k*bin_width, min_delay + (k+1)*bin_width)` ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct Chronogram {
    pub bin_width_ticks: u64,
    pub min_delay_ticks: i64,
    pub max_delay_ticks: i64,
    pub bins: Vec<u64>,
    pub n_pulses: u64,
    pub resolution_ps: u32,
    pub channel_pair: (u8, u8),
    /// Excitation period in ticks when known and integral.
    pub period_ticks: Option<u64>,
}

impl Chronogram {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn total_counts(&self) -> u64 {
        self.bins.iter().sum()
    }

    /// Bin index containing a delay, if in range.
    pub fn bin_of(&self, delay_ticks: i64) -> Option<usize> {
        if delay_ticks < self.min_delay_ticks || delay_ticks >= self.max_delay_ticks {
            return None;
        }
        Some(((delay_ticks - self.min_delay_ticks) as u64 / self.bin_width_ticks) as usize)
    }

    /// Left edge of bin k in ticks.
    pub fn bin_left_ticks(&self, k: usize) -> i64 {
        self.min_delay_ticks + (k as i64) * self.bin_width_ticks as i64
    }

    /// Center of bin k in nanoseconds.
    pub fn bin_center_ns(&self, k: usize) -> f64 {
        (self.bin_left_ticks(k) as f64 + self.bin_width_ticks as f64 / 2.0)
            * self.resolution_ps as f64
            / 1000.0
    }

    pub fn bin_width_ns(&self) -> f64 {
        self.bin_width_ticks as f64 * self.resolution_ps as f64 / 1000.0
    }

    /// Same-geometry all-zero chronogram (the merge identity).
    pub fn zero_like(&self) -> Chronogram {
        Chronogram {
            bins: vec![0; self.bins.len()],
            n_pulses: 0,
            ..self.clone()
        }
    }

    fn check_same_geometry(&self, other: &Chronogram) -> Result<()> {
        fn mismatch<T: std::fmt::Debug>(field: &'static str, a: T, b: T) -> Error {
            Error::Geometry {
                field,
                left: format!("{a:?}"),
                right: format!("{b:?}"),
            }
        }
        if self.bin_width_ticks != other.bin_width_ticks {
            return Err(mismatch(
                "bin_width_ticks",
                self.bin_width_ticks,
                other.bin_width_ticks,
            ));
        }
        if self.min_delay_ticks != other.min_delay_ticks {
            return Err(mismatch(
                "min_delay_ticks",
                self.min_delay_ticks,
                other.min_delay_ticks,
            ));
        }
        if self.max_delay_ticks != other.max_delay_ticks {
            return Err(mismatch(
                "max_delay_ticks",
                self.max_delay_ticks,
                other.max_delay_ticks,
            ));
        }
        if self.resolution_ps != other.resolution_ps {
            return Err(mismatch(
                "resolution_ps",
                self.resolution_ps,
                other.resolution_ps,
            ));
        }
        if self.channel_pair != other.channel_pair {
            return Err(mismatch(
                "channel_pair",
                self.channel_pair,
                other.channel_pair,
            ));
        }
        Ok(())
    }
}

fn validate_geometry(bin_width_ticks: u64, range_ticks: (i64, i64)) -> Result<usize> {
    let (min, max) = range_ticks;
    if bin_width_ticks == 0 {
        return Err(Error::Geometry {
            field: "bin_width_ticks",
            left: "0".into(),
            right: ">= 1".into(),
        });
    }
    if max <= min {
        return Err(Error::Geometry {
            field: "range_ticks",
            left: format!("({min}, {max})"),
            right: "max > min".into(),
        });
    }
    let span = (max as i128 - min as i128) as u128;
    if span % bin_width_ticks as u128 != 0 {
        return Err(Error::Geometry {
            field: "range_ticks",
            left: format!("span {span}"),
            right: format!("multiple of bin width {bin_width_ticks}"),
        });
    }
    Ok((span / bin_width_ticks as u128) as usize)
}

/// Two-pointer sweep of one sorted a-slice against the full sorted b-slice.
fn correlate_into(times_a: &[u64], times_b: &[u64], bw: u64, min: i64, max: i64, bins: &mut [u64]) {
    let mut lo = 0usize;
    let mut hi = 0usize;
    for &ta in times_a {
        let ta = ta as i128;
        let lo_bound = ta + min as i128;
        let hi_bound = ta + max as i128;
        while lo < times_b.len() && (times_b[lo] as i128) < lo_bound {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < times_b.len() && (times_b[hi] as i128) < hi_bound {
            hi += 1;
        }
        for &tb in &times_b[lo..hi] {
            let bin = ((tb as i128 - ta - min as i128) / bw as i128) as usize;
            bins[bin] += 1;
        }
    }
}

const PARALLEL_THRESHOLD: usize = 200_000;

/// Builds the coincidence chronogram between two channels of a stream.
///
/// Large inputs are processed as disjoint chunks of a-events in parallel and
/// summed; the result is identical to the sequential sweep.
pub fn cross_correlate(
    stream: &TimeTagStream,
    ch_a: u8,
    ch_b: u8,
    bin_width_ticks: u64,
    range_ticks: (i64, i64),
) -> Result<Chronogram> {
    if ch_a == ch_b {
        return Err(Error::Usage(format!(
            "cross-correlation requires distinct channels (got {ch_a} twice)"
        )));
    }
    for ch in [ch_a, ch_b] {
        if !stream.channels.iter().any(|c| c.id == ch) {
            return Err(Error::Usage(format!("channel {ch} not present in stream")));
        }
    }
    let n_bins = validate_geometry(bin_width_ticks, range_ticks)?;
    let times_a = stream.channel_timestamps(ch_a);
    let times_b = stream.channel_timestamps(ch_b);

    let (min, max) = range_ticks;
    let bins = if times_a.len() >= PARALLEL_THRESHOLD {
        let chunk = times_a
            .len()
            .div_ceil(4 * rayon::current_num_threads().max(1));
        times_a
            .par_chunks(chunk.max(1))
            .map(|part| {
                let mut local = vec![0u64; n_bins];
                correlate_into(part, &times_b, bin_width_ticks, min, max, &mut local);
                local
            })
            .reduce(
                || vec![0u64; n_bins],
                |mut acc, local| {
                    for (a, l) in acc.iter_mut().zip(local) {
                        *a += l;
                    }
                    acc
                },
            )
    } else {
        let mut bins = vec![0u64; n_bins];
        correlate_into(&times_a, &times_b, bin_width_ticks, min, max, &mut bins);
        bins
    };

    let period_ticks = PulseClock::from_metadata(&stream.metadata, stream.resolution_ps)
        .ok()
        .and_then(|c| c.period_ticks());
    Ok(Chronogram {
        bin_width_ticks,
        min_delay_ticks: min,
        max_delay_ticks: max,
        bins,
        n_pulses: stream.metadata.n_pulses(),
        resolution_ps: stream.resolution_ps,
        channel_pair: (ch_a, ch_b),
        period_ticks,
    })
}

/// Element-wise sum of same-geometry chronograms; `n_pulses` accumulates.
pub fn merge(chronograms: &[Chronogram]) -> Result<Chronogram> {
    let first = chronograms
        .first()
        .ok_or_else(|| Error::Usage("merge requires at least one chronogram".into()))?;
    let mut out = first.clone();
    for ch in &chronograms[1..] {
        first.check_same_geometry(ch)?;
        for (acc, b) in out.bins.iter_mut().zip(&ch.bins) {
            *acc += b;
        }
        out.n_pulses += ch.n_pulses;
        if out.period_ticks != ch.period_ticks {
            out.period_ticks = None;
        }
    }
    Ok(out)
}

/// Writes `delay_ns,counts` CSV with the exact geometry echoed in `#` header
/// lines, so a re-import is lossless.
pub fn export_chronogram(ch: &Chronogram, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut w = |s: String| -> Result<()> { writeln!(out, "{s}").map_err(|e| Error::io(path, e)) };
    w("# g2kit chronogram v1".into())?;
    w(format!("# resolution_ps = {}", ch.resolution_ps))?;
    w(format!("# bin_width_ticks = {}", ch.bin_width_ticks))?;
    w(format!("# min_delay_ticks = {}", ch.min_delay_ticks))?;
    w(format!("# max_delay_ticks = {}", ch.max_delay_ticks))?;
    w(format!("# channel_a = {}", ch.channel_pair.0))?;
    w(format!("# channel_b = {}", ch.channel_pair.1))?;
    w(format!("# n_pulses = {}", ch.n_pulses))?;
    match ch.period_ticks {
        Some(p) => w(format!("# period_ticks = {p}"))?,
        None => w("# period_ticks = unknown".into())?,
    }
    w("delay_ns,counts".into())?;
    for (k, count) in ch.bins.iter().enumerate() {
        w(format!("{},{}", ch.bin_center_ns(k), count))?;
    }
    Ok(())
}

/// Reads a chronogram CSV written by [`export_chronogram`].
pub fn import_chronogram(path: impl AsRef<Path>) -> Result<Chronogram> {
    let path = path.as_ref();
    let file = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);

    let mut resolution_ps: Option<u32> = None;
    let mut bin_width: Option<u64> = None;
    let mut min_delay: Option<i64> = None;
    let mut max_delay: Option<i64> = None;
    let mut channel_a: Option<u8> = None;
    let mut channel_b: Option<u8> = None;
    let mut n_pulses: Option<u64> = None;
    let mut period: Option<u64> = None;
    let mut bins: Vec<u64> = Vec::new();
    let mut saw_column_header = false;

    for (idx, line) in file.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = rest.split_once('=') {
                let key = key.trim();
                let value = value.trim();
                let parse_err = |_| Error::Parse {
                    line: line_no,
                    reason: format!("bad value {value:?} for {key}"),
                };
                match key {
                    "resolution_ps" => resolution_ps = Some(value.parse().map_err(parse_err)?),
                    "bin_width_ticks" => bin_width = Some(value.parse().map_err(parse_err)?),
                    "min_delay_ticks" => min_delay = Some(value.parse().map_err(parse_err)?),
                    "max_delay_ticks" => max_delay = Some(value.parse().map_err(parse_err)?),
                    "channel_a" => channel_a = Some(value.parse().map_err(parse_err)?),
                    "channel_b" => channel_b = Some(value.parse().map_err(parse_err)?),
                    "n_pulses" => n_pulses = Some(value.parse().map_err(parse_err)?),
                    "period_ticks" => period = value.parse().ok(),
                    _ => {}
                }
            }
            continue;
        }
        if trimmed.starts_with("delay_ns") {
            saw_column_header = true;
            continue;
        }
        let count_field = trimmed.split(',').nth(1).ok_or_else(|| Error::Parse {
            line: line_no,
            reason: "expected delay_ns,counts".into(),
        })?;
        bins.push(count_field.trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            reason: format!("bad count {count_field:?}"),
        })?);
    }

    let missing = |what: &str| Error::format(path, format!("missing header line: {what}"));
    let ch = Chronogram {
        bin_width_ticks: bin_width.ok_or_else(|| missing("bin_width_ticks"))?,
        min_delay_ticks: min_delay.ok_or_else(|| missing("min_delay_ticks"))?,
        max_delay_ticks: max_delay.ok_or_else(|| missing("max_delay_ticks"))?,
        bins,
        n_pulses: n_pulses.ok_or_else(|| missing("n_pulses"))?,
        resolution_ps: resolution_ps.ok_or_else(|| missing("resolution_ps"))?,
        channel_pair: (
            channel_a.ok_or_else(|| missing("channel_a"))?,
            channel_b.ok_or_else(|| missing("channel_b"))?,
        ),
        period_ticks: period,
    };
    if !saw_column_header {
        return Err(Error::format(path, "missing delay_ns,counts column header"));
    }
    let expected = validate_geometry(ch.bin_width_ticks, (ch.min_delay_ticks, ch.max_delay_ticks))?;
    if ch.bins.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bins, found {}", ch.bins.len()),
        ));
    }
    Ok(ch)
}
