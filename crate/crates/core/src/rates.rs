//! Transition rates of the seven Lindblad channels and the sparse generator.
//!
//! Each channel moves `(J, M)` by a fixed `(dJ, dM)`. Rate formulas are
//! evaluated numerator first: whenever an angular-momentum factor of the
//! numerator vanishes, or the target lies outside the state space, the rate
//! is exactly zero. This also removes every `0/0` at `J = 0`.

use std::fmt;
use std::io::Write;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Level, ModelParams};

/// Dissipative process responsible for a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    /// Collective emission into the cavity, `(J, M) -> (J, M-1)`.
    CollectiveDecay,
    /// Individual repump, `(J, M) -> (J, M+1)`.
    RepumpSameJ,
    /// Individual repump, `(J, M) -> (J-1, M+1)`.
    RepumpJMinus,
    /// Individual repump, `(J, M) -> (J+1, M+1)`.
    RepumpJPlus,
    /// Individual free-space decay, `(J, M) -> (J, M-1)`.
    DecaySameJ,
    /// Individual free-space decay, `(J, M) -> (J-1, M-1)`.
    DecayJMinus,
    /// Individual free-space decay, `(J, M) -> (J+1, M-1)`.
    DecayJPlus,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::CollectiveDecay,
        Channel::RepumpSameJ,
        Channel::RepumpJMinus,
        Channel::RepumpJPlus,
        Channel::DecaySameJ,
        Channel::DecayJMinus,
        Channel::DecayJPlus,
    ];

    /// `(dJ, dM)` applied by this channel.
    pub const fn displacement(self) -> (i32, i32) {
        match self {
            Channel::CollectiveDecay | Channel::DecaySameJ => (0, -1),
            Channel::RepumpSameJ => (0, 1),
            Channel::RepumpJMinus => (-1, 1),
            Channel::RepumpJPlus => (1, 1),
            Channel::DecayJMinus => (-1, -1),
            Channel::DecayJPlus => (1, -1),
        }
    }

    /// Short label used in files and on the command line.
    pub const fn name(self) -> &'static str {
        match self {
            Channel::CollectiveDecay => "collective",
            Channel::RepumpSameJ => "repump_same_j",
            Channel::RepumpJMinus => "repump_j_minus",
            Channel::RepumpJPlus => "repump_j_plus",
            Channel::DecaySameJ => "decay_same_j",
            Channel::DecayJMinus => "decay_j_minus",
            Channel::DecayJPlus => "decay_j_plus",
        }
    }

    pub fn target(self, params: &ModelParams, from: Level) -> Option<Level> {
        let (dj, dm) = self.displacement();
        params.shifted(from, dj, dm)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown channel '{s}'")))
    }
}

/// Rate of `channel` out of `from`, in units of the collective rate.
///
/// `from` is assumed to be a valid level of `params`; invalid levels give 0.
pub fn channel_rate(params: &ModelParams, from: Level, channel: Channel) -> f64 {
    if !params.contains(from) || channel.target(params, from).is_none() {
        return 0.0;
    }
    let n = params.n() as f64;
    let j = from.j as f64;
    let m = from.m as f64;
    match channel {
        Channel::CollectiveDecay => (j + m) * (j - m + 1.0),
        Channel::RepumpSameJ => {
            let num = (n + 2.0) * (j - m) * (j + m + 1.0);
            guarded(params.w(), num, 4.0 * j * (j + 1.0))
        }
        Channel::RepumpJMinus => {
            let num = (n + 2.0 * j + 2.0) * (j - m) * (j - m - 1.0);
            guarded(params.w(), num, 4.0 * j * (2.0 * j + 1.0))
        }
        Channel::RepumpJPlus => {
            let num = (n - 2.0 * j) * (j + m + 1.0) * (j + m + 2.0);
            guarded(params.w(), num, 4.0 * (j + 1.0) * (2.0 * j + 1.0))
        }
        Channel::DecaySameJ => {
            let num = (n + 2.0) * (j + m) * (j - m + 1.0);
            guarded(params.gamma(), num, 4.0 * j * (j + 1.0))
        }
        Channel::DecayJMinus => {
            let num = (n + 2.0 * j + 2.0) * (j + m) * (j + m - 1.0);
            guarded(params.gamma(), num, 4.0 * j * (2.0 * j + 1.0))
        }
        Channel::DecayJPlus => {
            let num = (n - 2.0 * j) * (j - m + 1.0) * (j - m + 2.0);
            guarded(params.gamma(), num, 4.0 * (j + 1.0) * (2.0 * j + 1.0))
        }
    }
}

#[inline]
fn guarded(prefactor: f64, numerator: f64, denominator: f64) -> f64 {
    if numerator == 0.0 || prefactor == 0.0 {
        0.0
    } else {
        prefactor * numerator / denominator
    }
}

/// One strictly positive outgoing channel of a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub channel: Channel,
    pub target: Level,
    pub rate: f64,
}

/// Positive channels out of one state, stored inline.
#[derive(Debug, Clone, Copy)]
pub struct LocalRates {
    entries: [Transition; 7],
    len: usize,
}

impl LocalRates {
    pub fn total(&self) -> f64 {
        self.iter().map(|t| t.rate).sum()
    }
}

impl Deref for LocalRates {
    type Target = [Transition];

    fn deref(&self) -> &[Transition] {
        &self.entries[..self.len]
    }
}

/// All strictly positive channels out of `from`, in [`Channel::ALL`] order.
///
/// `CollectiveDecay` and `DecaySameJ` share a target but are reported
/// separately here.
pub fn local_rates(params: &ModelParams, from: Level) -> LocalRates {
    let placeholder = Transition {
        channel: Channel::CollectiveDecay,
        target: from,
        rate: 0.0,
    };
    let mut out = LocalRates {
        entries: [placeholder; 7],
        len: 0,
    };
    for channel in Channel::ALL {
        let rate = channel_rate(params, from, channel);
        if rate > 0.0 {
            let target = channel
                .target(params, from)
                .expect("positive rate implies valid target");
            out.entries[out.len] = Transition { channel, target, rate };
            out.len += 1;
        }
    }
    out
}

/// Sparse Markov generator `Q` over all states, stored by source state.
///
/// `Q[to][from]` is the total rate `from -> to` for `to != from`, and the
/// diagonal holds minus the total exit rate, so every column sums to zero.
#[derive(Debug, Clone)]
pub struct Generator {
    params: ModelParams,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    rates: Vec<f64>,
    diagonal: Vec<f64>,
}

impl Generator {
    /// Assembles the generator from the channel rates; rates into the same
    /// target are summed.
    pub fn build(params: &ModelParams) -> Self {
        let dim = params.state_count();
        let mut offsets = Vec::with_capacity(dim + 1);
        let mut targets = Vec::with_capacity(6 * dim);
        let mut rates = Vec::with_capacity(6 * dim);
        offsets.push(0);
        for level in params.levels() {
            let start = targets.len();
            for t in local_rates(params, level).iter() {
                let idx = t.target.index() as u32;
                match targets[start..].iter().position(|&x| x == idx) {
                    Some(k) => rates[start + k] += t.rate,
                    None => {
                        targets.push(idx);
                        rates.push(t.rate);
                    }
                }
            }
            offsets.push(targets.len());
        }
        Self::from_csr(*params, offsets, targets, rates)
    }

    fn from_csr(params: ModelParams, offsets: Vec<usize>, targets: Vec<u32>, rates: Vec<f64>) -> Self {
        let diagonal = offsets
            .windows(2)
            .map(|w| -rates[w[0]..w[1]].iter().sum::<f64>())
            .collect();
        Self {
            params,
            offsets,
            targets,
            rates,
            diagonal,
        }
    }

    /// Copy of the generator keeping only edges whose endpoints both satisfy
    /// `keep`. Dropped states stay in the index space but become isolated.
    pub fn restricted(&self, keep: impl Fn(Level) -> bool) -> Self {
        let mut offsets = Vec::with_capacity(self.offsets.len());
        let mut targets = Vec::new();
        let mut rates = Vec::new();
        offsets.push(0);
        for from in 0..self.dimension() {
            if keep(Level::from_index(from)) {
                for (to, rate) in self.out_edges(from) {
                    if keep(Level::from_index(to)) {
                        targets.push(to as u32);
                        rates.push(rate);
                    }
                }
            }
            offsets.push(targets.len());
        }
        Self::from_csr(self.params, offsets, targets, rates)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dimension(&self) -> usize {
        self.diagonal.len()
    }

    /// Diagonal of `Q` (minus the exit rates).
    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn exit_rate(&self, from: usize) -> f64 {
        -self.diagonal[from]
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diagonal.iter().fold(0.0, |acc, &d| acc.max(-d))
    }

    /// Number of stored off-diagonal entries.
    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    /// Off-diagonal `(target, rate)` pairs leaving `from`.
    pub fn out_edges(&self, from: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[from]..self.offsets[from + 1];
        self.targets[range.clone()]
            .iter()
            .zip(&self.rates[range])
            .map(|(&t, &r)| (t as usize, r))
    }

    /// Total rate `from -> to` (zero when absent or `from == to`).
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.out_edges(from).find(|&(t, _)| t == to).map_or(0.0, |(_, r)| r)
    }

    /// `y = Q x`.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (yi, (&xi, &d)) in y.iter_mut().zip(x.iter().zip(&self.diagonal)) {
            *yi = d * xi;
        }
        for (from, &xf) in x.iter().enumerate() {
            if xf != 0.0 {
                for (to, rate) in self.out_edges(from) {
                    y[to] += rate * xf;
                }
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                found: x.len(),
            });
        }
        let mut y = vec![0.0; x.len()];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    /// Writes `row,col,rate` triplets of `Q` (row = target, col = source),
    /// diagonal included, sorted by column then row.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "row,col,rate")?;
        for from in 0..self.dimension() {
            let mut entries: Vec<(usize, f64)> = self.out_edges(from).collect();
            entries.push((from, self.diagonal[from]));
            entries.sort_by_key(|&(to, _)| to);
            for (to, rate) in entries {
                writeln!(out, "{to},{from},{rate:e}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(n: u32, w: f64, gamma: f64) -> ModelParams {
        ModelParams::new(n, w, gamma).unwrap()
    }

    #[test]
    fn hand_evaluated_rates() {
        let p = params(4, 1.0, 0.1);
        assert_eq!(channel_rate(&p, Level::new(2, 1), Channel::CollectiveDecay), 6.0);
        assert_eq!(
            channel_rate(&params(10, 0.3, 0.2), Level::new(2, 1), Channel::CollectiveDecay),
            6.0
        );
        assert_eq!(channel_rate(&p, Level::new(1, 0), Channel::RepumpSameJ), 1.5);
        assert_eq!(channel_rate(&p, Level::new(0, 0), Channel::RepumpJPlus), 2.0);
    }

    #[test]
    fn apex_only_couples_upward() {
        let p = params(4, 1.0, 0.1);
        let apex = Level::new(0, 0);
        for ch in Channel::ALL {
            let r = channel_rate(&p, apex, ch);
            match ch {
                Channel::RepumpJPlus | Channel::DecayJPlus => assert!(r > 0.0, "{ch}"),
                _ => assert_eq!(r, 0.0, "{ch}"),
            }
        }
    }

    #[test]
    fn dark_states_do_not_emit() {
        let p = params(40, 0.2, 0.1);
        for j in 0..=20 {
            assert_eq!(channel_rate(&p, Level::dark(j), Channel::CollectiveDecay), 0.0);
        }
    }

    #[test]
    fn absorbing_dark_state_without_pump_or_decay() {
        let p = params(10, 0.0, 0.0);
        for j in 0..=5 {
            assert!(local_rates(&p, Level::dark(j)).is_empty());
        }
    }

    #[test]
    fn top_row_has_no_j_plus() {
        let p = params(12, 0.2, 0.1);
        for m in -6..=6 {
            let rates = local_rates(&p, Level::new(6, m));
            assert!(rates
                .iter()
                .all(|t| !matches!(t.channel, Channel::RepumpJPlus | Channel::DecayJPlus)));
        }
    }

    #[test]
    fn n2_pure_collective_generator() {
        let p = params(2, 0.0, 0.0);
        let g = Generator::build(&p);
        assert_eq!(g.nnz(), 2);
        assert_eq!(g.rate(2, 1), 2.0);
        assert_eq!(g.rate(3, 2), 2.0);
        assert_eq!(g.diagonal(), &[0.0, 0.0, -2.0, -2.0]);
    }

    #[test]
    fn generator_conservation_and_structure() {
        for &(n, w, gamma) in &[(100, 0.2, 0.1), (50, 0.05, 0.1), (30, 1e-4, 0.0)] {
            let p = params(n, w, gamma);
            let g = Generator::build(&p);
            assert!(g.nnz() <= 6 * g.dimension());
            let max_exit = g.max_exit_rate();
            for from in 0..g.dimension() {
                let mut count = 0;
                let mut sum = g.diagonal()[from];
                for (to, r) in g.out_edges(from) {
                    assert!(r > 0.0);
                    assert_ne!(to, from);
                    sum += r;
                    count += 1;
                }
                assert!(count <= 6);
                assert!(sum.abs() / max_exit < 1e-14);
            }
        }
    }

    #[test]
    fn support_is_symmetric_when_pumped_and_decaying() {
        for n in (2..=60).step_by(2) {
            let g = Generator::build(&params(n, 0.2, 0.1));
            for a in 0..g.dimension() {
                for (b, r) in g.out_edges(a) {
                    assert!(r > 0.0);
                    assert!(g.rate(b, a) > 0.0, "N={n} edge {a}->{b} has no reverse");
                }
            }
        }
    }

    #[test]
    fn local_rates_match_generator() {
        let p = params(20, 0.2, 0.1);
        let g = Generator::build(&p);
        for (i, level) in p.levels().enumerate() {
            let mut from_local = vec![0.0; g.dimension()];
            for t in local_rates(&p, level).iter() {
                assert!(t.rate > 0.0);
                from_local[t.target.index()] += t.rate;
            }
            let mut from_gen = vec![0.0; g.dimension()];
            for (to, r) in g.out_edges(i) {
                from_gen[to] = r;
            }
            assert_eq!(from_local, from_gen, "state {level}");
        }
    }

    #[test]
    fn channel_names_round_trip() {
        for ch in Channel::ALL {
            assert_eq!(ch.name().parse::<Channel>().unwrap(), ch);
        }
        assert!("bogus".parse::<Channel>().is_err());
    }

    #[test]
    fn triplets_include_diagonal() {
        let g = Generator::build(&params(2, 0.0, 0.0));
        let mut buf = Vec::new();
        g.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "row,col,rate");
        assert_eq!(lines.len(), 1 + 4 + 2);
        assert!(lines.contains(&"1,2,2e0"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100_000))]
        #[test]
        fn rates_are_nonnegative(
            half in 1u32..200,
            w in 0.0f64..5.0,
            gamma in 0.0f64..5.0,
            jf in 0.0f64..1.0,
            mf in 0.0f64..1.0,
            ch in 0usize..7,
        ) {
            let p = params(2 * half, w, gamma);
            let j = (jf * (half as f64 + 1.0)).floor().min(half as f64) as u32;
            let m = (mf * (2 * j + 1) as f64).floor().min(2.0 * j as f64) as i32 - j as i32;
            let r = channel_rate(&p, Level::new(j, m), Channel::ALL[ch]);
            prop_assert!(r >= 0.0 && r.is_finite());
        }
    }
}
