//! Gillespie trajectories of the classical chain.
//!
//! Rates are evaluated on the fly with [`local_rates`], so trajectories at
//! `N = 10^4` need no generator matrix. A trajectory is an unraveling of the
//! rate equation only; it is not a record of any physical measurement.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Level, ModelParams};
use crate::rates::{local_rates, Channel, LocalRates, Transition};
use crate::steady::Distribution;

/// Name of the random number generator recorded with every trajectory.
pub const RNG_NAME: &str = "ChaCha8Rng";

/// Burn-in used for long trajectories unless overridden.
pub const DEFAULT_BURN_IN: f64 = 40.0;

/// Initial state for trajectories: every atom in the ground state.
pub fn default_initial(params: &ModelParams) -> Level {
    Level::dark(params.j_max())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub channel: Channel,
    pub from: Level,
    pub to: Level,
}

/// How a trajectory ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// End of the simulated window. Equal to `t_max` also for absorbed runs,
    /// which sit in the absorbing state from their last event on.
    pub t_end: f64,
    pub absorbed: bool,
    pub final_level: Level,
    pub n_events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub params: ModelParams,
    pub initial: Level,
    pub seed: u64,
    pub rng: String,
    pub events: Vec<Event>,
    pub t_end: f64,
    pub absorbed: bool,
}

impl JumpRecord {
    pub fn final_level(&self) -> Level {
        self.events.last().map_or(self.initial, |e| e.to)
    }

    /// Checks time ordering and that consecutive events chain into a path
    /// of allowed moves.
    pub fn validate(&self) -> Result<()> {
        let mut at = self.initial;
        let mut last_t = 0.0;
        for (k, e) in self.events.iter().enumerate() {
            let (dj, dm) = e.channel.displacement();
            let expected = self.params.shifted(e.from, dj, dm);
            if e.from != at || expected != Some(e.to) || !(e.t > last_t) || e.t > self.t_end {
                return Err(Error::InvalidParams(format!(
                    "event {k} breaks the trajectory at t = {}",
                    e.t
                )));
            }
            at = e.to;
            last_t = e.t;
        }
        Ok(())
    }

    /// Event times, optionally restricted to one channel.
    pub fn times(&self, channel: Option<Channel>) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| channel.is_none_or(|c| e.channel == c))
            .map(|e| e.t)
            .collect()
    }

    /// Writes `t,channel,J_from,M_from,J_to,M_to`, optionally one channel only.
    pub fn write_csv<W: Write>(&self, channel: Option<Channel>, mut out: W) -> Result<()> {
        writeln!(out, "t,channel,J_from,M_from,J_to,M_to")?;
        for e in self.events.iter().filter(|e| channel.is_none_or(|c| e.channel == c)) {
            writeln!(
                out,
                "{:e},{},{},{},{},{}",
                e.t, e.channel, e.from.j, e.from.m, e.to.j, e.to.m
            )?;
        }
        Ok(())
    }
}

/// Picks the channel whose cumulative rate first exceeds `u * total`.
pub fn pick_channel(rates: &LocalRates, u: f64) -> usize {
    let target = u * rates.total();
    let mut acc = 0.0;
    for (k, t) in rates.iter().enumerate() {
        acc += t.rate;
        if target < acc {
            return k;
        }
    }
    // Rounding can leave target == acc; the last positive channel owns it.
    rates.len() - 1
}

/// One Gillespie draw at `at`: an exponential waiting time with the total
/// exit rate, then a channel chosen in proportion to its rate. `None` for an
/// absorbing state.
pub fn gillespie_step<R: Rng>(params: &ModelParams, at: Level, rng: &mut R) -> Option<(f64, Transition)> {
    let rates = local_rates(params, at);
    let total = rates.total();
    if total <= 0.0 {
        return None;
    }
    // 1 - u lies in (0, 1], so the logarithm is finite.
    let wait = -(1.0 - rng.random::<f64>()).ln() / total;
    Some((wait, rates[pick_channel(&rates, rng.random::<f64>())]))
}

/// Runs one trajectory and hands each event to `observer` instead of
/// storing it.
pub fn simulate_with<F: FnMut(&Event)>(
    params: &ModelParams,
    initial: Level,
    t_max: f64,
    seed: u64,
    mut observer: F,
) -> Result<RunSummary> {
    params.check(initial)?;
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "t_max must be positive and finite, got {t_max}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut at = initial;
    let mut t = 0.0f64;
    let mut n_events = 0u64;
    loop {
        let Some((wait, chosen)) = gillespie_step(params, at, &mut rng) else {
            return Ok(RunSummary {
                t_end: t_max,
                absorbed: true,
                final_level: at,
                n_events,
            });
        };
        let next = (t + wait).max(t.next_up());
        if next > t_max {
            return Ok(RunSummary {
                t_end: t_max,
                absorbed: false,
                final_level: at,
                n_events,
            });
        }
        let event = Event {
            t: next,
            channel: chosen.channel,
            from: at,
            to: chosen.target,
        };
        observer(&event);
        n_events += 1;
        at = chosen.target;
        t = next;
    }
}

/// Runs one trajectory and keeps every event.
pub fn simulate(params: &ModelParams, initial: Level, t_max: f64, seed: u64) -> Result<JumpRecord> {
    let mut events = Vec::new();
    let summary = simulate_with(params, initial, t_max, seed, |e| events.push(*e))?;
    Ok(JumpRecord {
        params: *params,
        initial,
        seed,
        rng: RNG_NAME.to_string(),
        events,
        t_end: summary.t_end,
        absorbed: summary.absorbed,
    })
}

/// Streaming accumulator of time spent per state after `t_burn`.
#[derive(Debug, Clone)]
pub struct OccupancyTracker {
    params: ModelParams,
    t_burn: f64,
    current: Level,
    since: f64,
    time: Vec<f64>,
}

impl OccupancyTracker {
    pub fn new(params: &ModelParams, initial: Level, t_burn: f64) -> Result<Self> {
        params.check(initial)?;
        if !(t_burn >= 0.0 && t_burn.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "burn-in must be finite and >= 0, got {t_burn}"
            )));
        }
        Ok(Self {
            params: *params,
            t_burn,
            current: initial,
            since: 0.0,
            time: vec![0.0; params.state_count()],
        })
    }

    fn credit(&mut self, until: f64) {
        let start = self.since.max(self.t_burn);
        if until > start {
            self.time[self.current.index()] += until - start;
        }
    }

    pub fn observe(&mut self, event: &Event) {
        self.credit(event.t);
        self.current = event.to;
        self.since = event.t;
    }

    /// Closes the window at `t_end` and returns normalized occupation times.
    pub fn finish(mut self, t_end: f64) -> Result<Distribution> {
        if !(t_end > self.t_burn) {
            return Err(Error::EmptyWindow {
                t_burn: self.t_burn,
                t_end,
            });
        }
        self.credit(t_end);
        Distribution::from_weights(self.params, self.time, true)
    }
}

/// Fraction of `[t_burn, t_end]` spent in each state.
pub fn occupancy(record: &JumpRecord, t_burn: f64) -> Result<Distribution> {
    if !(t_burn < record.t_end) {
        return Err(Error::EmptyWindow {
            t_burn,
            t_end: record.t_end,
        });
    }
    let mut tracker = OccupancyTracker::new(&record.params, record.initial, t_burn)?;
    for e in &record.events {
        tracker.observe(e);
    }
    tracker.finish(record.t_end)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

/// Counting statistics of one event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstStats {
    pub n_events: usize,
    pub window: f64,
    pub n_windows: usize,
    pub mean_count: f64,
    pub variance: f64,
    /// Variance over mean of per-window counts; 1 for a Poisson stream.
    pub fano: f64,
    /// Inter-event waiting times in log-spaced bins.
    pub waiting_times: Vec<HistogramBin>,
}

const BINS_PER_DECADE: f64 = 5.0;

/// Fano factor and waiting-time histogram of the events in `[t_start, t_end)`.
///
/// `times` must be sorted. Only complete windows of length `window` enter
/// the count statistics.
pub fn burst_stats_from_times(times: &[f64], t_start: f64, t_end: f64, window: f64) -> Result<BurstStats> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::InvalidParams(format!("window must be positive, got {window}")));
    }
    if !(t_end > t_start) {
        return Err(Error::EmptyWindow { t_burn: t_start, t_end });
    }
    let lo = times.partition_point(|&t| t < t_start);
    let hi = times.partition_point(|&t| t < t_end);
    let kept = &times[lo..hi];
    if kept.len() < 2 {
        return Err(Error::TooFewEvents {
            needed: 2,
            found: kept.len(),
        });
    }
    let n_windows = ((t_end - t_start) / window).floor() as usize;
    if n_windows < 2 {
        return Err(Error::InvalidParams(format!(
            "need at least two complete windows of length {window} in [{t_start}, {t_end})"
        )));
    }
    let mut counts = vec![0u64; n_windows];
    for &t in kept {
        let k = ((t - t_start) / window) as usize;
        if k < n_windows {
            counts[k] += 1;
        }
    }
    let mean = counts.iter().sum::<u64>() as f64 / n_windows as f64;
    let variance = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n_windows - 1) as f64;
    let fano = if mean > 0.0 { variance / mean } else { f64::NAN };

    Ok(BurstStats {
        n_events: kept.len(),
        window,
        n_windows,
        mean_count: mean,
        variance,
        fano,
        waiting_times: log_histogram(kept.windows(2).map(|p| p[1] - p[0])),
    })
}

fn log_histogram(values: impl Iterator<Item = f64> + Clone) -> Vec<HistogramBin> {
    let positive = values.clone().filter(|&v| v > 0.0);
    let min = positive.clone().fold(f64::INFINITY, f64::min);
    let max = positive.fold(0.0, f64::max);
    if !min.is_finite() {
        return Vec::new();
    }
    let first = (min.log10() * BINS_PER_DECADE).floor() as i32;
    let last = (max.log10() * BINS_PER_DECADE).floor() as i32;
    let edge = |k: i32| 10f64.powf(k as f64 / BINS_PER_DECADE);
    let mut bins: Vec<HistogramBin> = (first..=last)
        .map(|k| HistogramBin {
            lo: edge(k),
            hi: edge(k + 1),
            count: 0,
        })
        .collect();
    for v in values {
        // Zero waits (coincident times) land in the first bin.
        let k = if v > 0.0 {
            ((v.log10() * BINS_PER_DECADE).floor() as i32 - first).clamp(0, bins.len() as i32 - 1)
        } else {
            0
        };
        bins[k as usize].count += 1;
    }
    bins
}

/// [`burst_stats_from_times`] on the events of one record after `t_burn`.
pub fn burst_stats(record: &JumpRecord, channel: Option<Channel>, window: f64, t_burn: f64) -> Result<BurstStats> {
    burst_stats_from_times(&record.times(channel), t_burn, record.t_end, window)
}
