//! Stationary distribution of the generator.
//!
//! The direct solver is a Grassmann-Taksar-Heyman (GTH) elimination: state
//! reduction by censoring, which never subtracts, so every stationary weight
//! is computed to high relative accuracy. This matters here because
//! subradiant steady states spread their mass over hundreds of orders of
//! magnitude.
//!
//! Every channel changes `M` by exactly one, so ordering the states by `M`
//! level makes the generator block tridiagonal with empty diagonal blocks.
//! Eliminating one `M` level at a time only ever touches a dense window made
//! of that level and the next, which keeps the cost at `O(N^4)` flops and
//! `O(N^3)` storage for the back-substitution columns.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Level, ModelParams};
use crate::rates::Generator;

/// Weight below this magnitude is treated as roundoff when cleaning.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;

/// Weights over the `(J, M)` states in linear index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    params: ModelParams,
    weights: Vec<f64>,
    normalized: bool,
}

impl Distribution {
    /// Wraps raw weights after cleaning roundoff-level negatives.
    pub fn from_weights(params: ModelParams, weights: Vec<f64>, normalize: bool) -> Result<Self> {
        if weights.len() != params.state_count() {
            return Err(Error::DimensionMismatch {
                expected: params.state_count(),
                found: weights.len(),
            });
        }
        let mut dist = Self {
            params,
            weights,
            normalized: false,
        };
        dist.clean()?;
        if normalize {
            dist.normalize()?;
        }
        Ok(dist)
    }

    pub fn point_mass(params: ModelParams, level: Level) -> Result<Self> {
        let idx = params.index_of(level)?;
        let mut weights = vec![0.0; params.state_count()];
        weights[idx] = 1.0;
        Ok(Self {
            params,
            weights,
            normalized: true,
        })
    }

    pub fn uniform(params: ModelParams) -> Self {
        let n = params.state_count();
        Self {
            params,
            weights: vec![1.0 / n as f64; n],
            normalized: true,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, level: Level) -> f64 {
        if self.params.contains(level) {
            self.weights[level.index()]
        } else {
            0.0
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Total weight on the dark boundary `M = -J`.
    pub fn boundary_mass(&self) -> f64 {
        (0..=self.params.j_max())
            .map(|j| self.weights[Level::dark(j).index()])
            .sum()
    }

    /// Weight summed over `M` for each `J`.
    pub fn j_marginal(&self) -> Vec<f64> {
        (0..=self.params.j_max())
            .map(|j| {
                let start = (j * j) as usize;
                self.weights[start..start + 2 * j as usize + 1].iter().sum()
            })
            .collect()
    }

    /// Clamps entries in `(-tol, 0)` to zero, where `tol` scales with the
    /// total weight. More negative entries are an error.
    fn clean(&mut self) -> Result<()> {
        let scale = self.weights.iter().map(|w| w.abs()).sum::<f64>().max(1.0);
        for (index, w) in self.weights.iter_mut().enumerate() {
            if !w.is_finite() {
                return Err(Error::NegativeWeight { index, value: *w });
            }
            if *w < 0.0 {
                if *w < -NEGATIVE_TOLERANCE * scale {
                    return Err(Error::NegativeWeight { index, value: *w });
                }
                *w = 0.0;
            }
        }
        Ok(())
    }

    fn normalize(&mut self) -> Result<()> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(Error::InvalidParams("distribution has no weight".into()));
        }
        for w in &mut self.weights {
            *w /= total;
        }
        self.normalized = true;
        Ok(())
    }

    /// Writes `J,M,P` rows for every weight above `1e-300`, in index order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "J,M,P")?;
        for (i, &p) in self.weights.iter().enumerate() {
            if p > 1e-300 {
                let level = Level::from_index(i);
                writeln!(out, "{},{},{:e}", level.j, level.m, p)?;
            }
        }
        Ok(())
    }
}

/// Solver selection for [`steady_state_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SteadyMethod {
    /// Direct elimination unless its storage would exceed
    /// [`DIRECT_STORAGE_LIMIT`], power iteration otherwise.
    Auto,
    Direct,
    PowerIteration,
}

/// Number of stored f64 factors above which `Auto` switches to power iteration.
pub const DIRECT_STORAGE_LIMIT: usize = 150_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyOptions {
    pub method: SteadyMethod,
    pub max_iterations: u64,
    /// Power iteration stops once successive iterates differ by less than
    /// this in the max norm.
    pub tolerance: f64,
    /// Record the power-iteration residual every this many sweeps.
    pub trace_every: Option<u64>,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            method: SteadyMethod::Auto,
            max_iterations: 10_000_000,
            tolerance: 1e-13,
            trace_every: None,
        }
    }
}

/// Diagnostics of one stationary solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyReport {
    pub method: SteadyMethod,
    /// State kept to the end of the elimination (weight fixed to one before
    /// normalization).
    pub reference_state: Option<Level>,
    /// States without any edge, given zero weight.
    pub isolated_states: usize,
    pub iterations: u64,
    pub residual: f64,
    /// `(sweep, residual)` pairs recorded by power iteration.
    pub residual_trace: Vec<(u64, f64)>,
}

/// Stationary distribution with the default solver.
pub fn steady_state(gen: &Generator) -> Result<Distribution> {
    steady_state_with(gen, &SteadyOptions::default()).map(|(d, _)| d)
}

pub fn steady_state_with(gen: &Generator, opts: &SteadyOptions) -> Result<(Distribution, SteadyReport)> {
    let params = *gen.params();
    if params.w() == 0.0 && params.gamma() == 0.0 {
        return Err(Error::SingularOrNonUnique(
            "without repump or free-space decay every dark state is absorbing".into(),
        ));
    }
    let method = match opts.method {
        SteadyMethod::Auto if direct_storage_estimate(&params) <= DIRECT_STORAGE_LIMIT => SteadyMethod::Direct,
        SteadyMethod::Auto => SteadyMethod::PowerIteration,
        m => m,
    };
    let (weights, mut report) = match method {
        SteadyMethod::PowerIteration => power_iteration(gen, opts)?,
        _ => gth(gen)?,
    };
    let dist = Distribution::from_weights(params, weights, true)?;
    report.residual = residual(gen, &dist)?;
    Ok((dist, report))
}

/// `||Q P||_inf` divided by the largest exit rate.
pub fn residual(gen: &Generator, dist: &Distribution) -> Result<f64> {
    let qp = gen.apply(dist.weights())?;
    let norm = qp.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
    let scale = gen.max_exit_rate();
    Ok(if scale > 0.0 { norm / scale } else { norm })
}

/// Upper bound on the number of f64 values kept for back-substitution.
pub fn direct_storage_estimate(params: &ModelParams) -> usize {
    let layout = LevelLayout::new(params);
    (0..layout.sizes.len())
        .map(|l| layout.sizes[l] * (layout.sizes[l] + layout.sizes.get(l + 1).copied().unwrap_or(0)))
        .sum()
}

/// Elimination order: `M` levels from `+N/2` down to `-N/2`, `J` ascending
/// inside a level. The last position is the fully dark state `(N/2, -N/2)`.
struct LevelLayout {
    j_max: u32,
    sizes: Vec<usize>,
    starts: Vec<usize>,
}

impl LevelLayout {
    fn new(params: &ModelParams) -> Self {
        let j_max = params.j_max();
        let sizes: Vec<usize> = (0..=2 * j_max)
            .map(|l| (j_max - (j_max as i64 - l as i64).unsigned_abs() as u32) as usize + 1)
            .collect();
        let mut starts = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in &sizes {
            starts.push(acc);
            acc += s;
        }
        Self { j_max, sizes, starts }
    }

    fn m_of(&self, level_idx: usize) -> i32 {
        self.j_max as i32 - level_idx as i32
    }

    fn level_idx(&self, m: i32) -> usize {
        (self.j_max as i32 - m) as usize
    }

    /// Position of `(J, M)` in elimination order.
    fn position(&self, level: Level) -> usize {
        let l = self.level_idx(level.m);
        self.starts[l] + (level.j - level.m.unsigned_abs()) as usize
    }

    /// `(J, M)` at a position local to level `l`.
    fn level_at(&self, l: usize, local: usize) -> Level {
        let m = self.m_of(l);
        Level::new(m.unsigned_abs() + local as u32, m)
    }
}

/// Back-substitution data for one eliminated state: the reduced rates into
/// it from the contiguous position range starting at `first`.
struct EliminatedColumn {
    exit: f64,
    first: usize,
    rates: Vec<f64>,
}

fn gth(gen: &Generator) -> Result<(Vec<f64>, SteadyReport)> {
    let params = *gen.params();
    let layout = LevelLayout::new(&params);
    let dim = gen.dimension();
    let n_levels = layout.sizes.len();

    let mut in_degree = vec![0u32; dim];
    for from in 0..dim {
        for (to, _) in gen.out_edges(from) {
            in_degree[to] += 1;
        }
    }

    let mut columns: Vec<EliminatedColumn> = Vec::with_capacity(dim);
    let mut isolated = vec![false; dim];
    // Reduced rates inside the level about to be eliminated.
    let mut carry = vec![0.0; layout.sizes[0] * layout.sizes[0]];

    for l in 0..n_levels - 1 {
        let a_len = layout.sizes[l];
        let b_len = layout.sizes[l + 1];
        let d = a_len + b_len;
        let base = layout.starts[l];
        let mut win = vec![0.0; d * d];
        for r in 0..a_len {
            win[r * d..r * d + a_len].copy_from_slice(&carry[r * a_len..(r + 1) * a_len]);
        }
        // Original rates between the two levels. Every channel moves M by
        // one, so there are no same-level edges to add.
        for (side, lvl) in [(0, l), (a_len, l + 1)] {
            for local in 0..layout.sizes[lvl] {
                let from = layout.level_at(lvl, local);
                for (to, rate) in gen.out_edges(from.index()) {
                    let to_pos = layout.position(Level::from_index(to));
                    if to_pos >= base && to_pos < base + d {
                        let to_local = to_pos - base;
                        if (side == 0) != (to_local < a_len) {
                            win[(side + local) * d + to_local] += rate;
                        }
                    }
                }
            }
        }

        for a in 0..a_len {
            let row = &win[a * d..(a + 1) * d];
            let mut exit = 0.0;
            let mut lo = d;
            let mut hi = a;
            for (j, &r) in row.iter().enumerate().skip(a + 1) {
                if r != 0.0 {
                    exit += r;
                    lo = lo.min(j);
                    hi = j;
                }
            }
            let mut c_lo = d;
            let mut c_hi = a;
            for i in a + 1..d {
                if win[i * d + a] != 0.0 {
                    c_lo = c_lo.min(i);
                    c_hi = i;
                }
            }
            let pos = base + a;
            if exit == 0.0 {
                let state = layout.level_at(l, a);
                if c_lo == d && in_degree[state.index()] == 0 && gen.exit_rate(state.index()) == 0.0 {
                    isolated[pos] = true;
                    columns.push(EliminatedColumn {
                        exit: 0.0,
                        first: pos,
                        rates: Vec::new(),
                    });
                    continue;
                }
                return Err(Error::SingularOrNonUnique(format!(
                    "state {state} cannot reach the rest of the chain"
                )));
            }
            let pivot_row: Vec<f64> = win[a * d + lo..=a * d + hi].to_vec();
            let mut col = Vec::with_capacity(c_hi.saturating_sub(c_lo) + 1);
            if c_lo < d {
                for i in c_lo..=c_hi {
                    let into = win[i * d + a];
                    col.push(into);
                    if into == 0.0 {
                        continue;
                    }
                    let f = into / exit;
                    let dst = &mut win[i * d + lo..=i * d + hi];
                    for (k, (x, &r)) in dst.iter_mut().zip(&pivot_row).enumerate() {
                        if lo + k != i {
                            *x += f * r;
                        }
                    }
                }
            }
            columns.push(EliminatedColumn {
                exit,
                first: base + c_lo.min(d),
                rates: col,
            });
        }

        carry = vec![0.0; b_len * b_len];
        for r in 0..b_len {
            let src = (a_len + r) * d + a_len;
            carry[r * b_len..(r + 1) * b_len].copy_from_slice(&win[src..src + b_len]);
        }
    }

    let last = dim - 1;
    let last_state = layout.level_at(n_levels - 1, 0);
    if in_degree[last_state.index()] == 0 && gen.exit_rate(last_state.index()) == 0.0 {
        return Err(Error::SingularOrNonUnique("reference state is isolated".into()));
    }

    // Back-substitution in reverse elimination order, rescaling on the way
    // so that huge ratios never overflow.
    let mut pi = vec![0.0; dim];
    pi[last] = 1.0;
    for k in (0..last).rev() {
        let c = &columns[k];
        if isolated[k] {
            continue;
        }
        let inflow: f64 = c.rates.iter().zip(&pi[c.first..]).map(|(&r, &p)| r * p).sum();
        let v = inflow / c.exit;
        pi[k] = v;
        if v > 1e250 {
            for p in &mut pi[k..] {
                *p *= 1e-250;
            }
        }
    }

    let mut weights = vec![0.0; dim];
    for l in 0..n_levels {
        for local in 0..layout.sizes[l] {
            let state = layout.level_at(l, local);
            weights[state.index()] = pi[layout.starts[l] + local];
        }
    }
    let report = SteadyReport {
        method: SteadyMethod::Direct,
        reference_state: Some(last_state),
        isolated_states: isolated.iter().filter(|&&x| x).count(),
        iterations: 0,
        residual: f64::NAN,
        residual_trace: Vec::new(),
    };
    Ok((weights, report))
}

/// Power iteration on the uniformized chain `I + Q / (1.01 max exit)`.
fn power_iteration(gen: &Generator, opts: &SteadyOptions) -> Result<(Vec<f64>, SteadyReport)> {
    let dim = gen.dimension();
    let lambda = 1.01 * gen.max_exit_rate();
    let mut x = vec![1.0 / dim as f64; dim];
    let mut qx = vec![0.0; dim];
    let mut trace = Vec::new();
    let mut last_change = f64::INFINITY;
    for sweep in 1..=opts.max_iterations {
        gen.apply_into(&x, &mut qx);
        if let Some(every) = opts.trace_every {
            if (sweep - 1) % every == 0 {
                let res = qx.iter().fold(0.0f64, |acc, &v| acc.max(v.abs())) / gen.max_exit_rate();
                trace.push((sweep - 1, res));
            }
        }
        let mut change = 0.0f64;
        for (xi, &q) in x.iter_mut().zip(&qx) {
            let step = q / lambda;
            *xi += step;
            change = change.max(step.abs());
        }
        last_change = change;
        if change < opts.tolerance {
            let report = SteadyReport {
                method: SteadyMethod::PowerIteration,
                reference_state: None,
                isolated_states: 0,
                iterations: sweep,
                residual: f64::NAN,
                residual_trace: trace,
            };
            return Ok((x, report));
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iterations,
        last_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(n: u32, w: f64, gamma: f64) -> (Generator, Distribution) {
        let gen = Generator::build(&ModelParams::new(n, w, gamma).unwrap());
        let dist = steady_state(&gen).unwrap();
        (gen, dist)
    }

    #[test]
    fn layout_positions_are_a_bijection() {
        let p = ModelParams::new(12, 0.1, 0.1).unwrap();
        let layout = LevelLayout::new(&p);
        let mut seen = vec![false; p.state_count()];
        for level in p.levels() {
            let pos = layout.position(level);
            assert!(!seen[pos]);
            seen[pos] = true;
            let l = layout.level_idx(level.m);
            assert_eq!(layout.level_at(l, pos - layout.starts[l]), level);
        }
        assert_eq!(layout.position(Level::dark(6)), p.state_count() - 1);
    }

    #[test]
    fn n2_full_support() {
        let (gen, dist) = solve(2, 1.0, 0.0);
        assert!(dist.weights().iter().all(|&p| p > 0.0));
        assert!((dist.total() - 1.0).abs() < 1e-14);
        assert!(residual(&gen, &dist).unwrap() < 1e-14);
    }

    #[test]
    fn rejects_doubly_degenerate_chain() {
        let gen = Generator::build(&ModelParams::new(4, 0.0, 0.0).unwrap());
        assert!(matches!(steady_state(&gen), Err(Error::SingularOrNonUnique(_))));
    }

    #[test]
    fn pure_decay_collapses_to_ground_state() {
        let (_, dist) = solve(8, 0.0, 0.3);
        assert_eq!(dist.get(Level::dark(4)), 1.0);
        assert_eq!(dist.total(), 1.0);
    }

    #[test]
    fn uniform_is_not_stationary() {
        let gen = Generator::build(&ModelParams::new(4, 0.2, 0.1).unwrap());
        let uniform = Distribution::uniform(*gen.params());
        assert!(residual(&gen, &uniform).unwrap() > 1e-3);
    }

    #[test]
    fn residual_rejects_wrong_dimension() {
        let gen = Generator::build(&ModelParams::new(4, 0.2, 0.1).unwrap());
        let other = Distribution::uniform(ModelParams::new(6, 0.2, 0.1).unwrap());
        assert!(matches!(residual(&gen, &other), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn direct_and_power_iteration_agree() {
        let gen = Generator::build(&ModelParams::new(10, 0.3, 0.1).unwrap());
        let direct = steady_state(&gen).unwrap();
        let opts = SteadyOptions {
            method: SteadyMethod::PowerIteration,
            ..Default::default()
        };
        let (power, report) = steady_state_with(&gen, &opts).unwrap();
        assert_eq!(report.method, SteadyMethod::PowerIteration);
        let diff = direct
            .weights()
            .iter()
            .zip(power.weights())
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        assert!(diff < 1e-9, "diff {diff}");
    }

    #[test]
    fn power_iteration_cap_reports_not_converged() {
        let gen = Generator::build(&ModelParams::new(10, 0.3, 0.1).unwrap());
        let opts = SteadyOptions {
            method: SteadyMethod::PowerIteration,
            max_iterations: 5,
            ..Default::default()
        };
        assert!(matches!(
            steady_state_with(&gen, &opts),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn negative_weights_policy() {
        let p = ModelParams::new(2, 0.1, 0.1).unwrap();
        let d = Distribution::from_weights(p, vec![0.5, -1e-14, 0.25, 0.25], true).unwrap();
        assert_eq!(d.weights()[1], 0.0);
        assert!(Distribution::from_weights(p, vec![0.5, -1e-3, 0.25, 0.25], true).is_err());
    }

    #[test]
    fn csv_layout() {
        let p = ModelParams::new(2, 0.1, 0.1).unwrap();
        let d = Distribution::point_mass(p, Level::new(1, -1)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "J,M,P\n1,-1,1e0\n");
    }

    #[test]
    fn marginals() {
        let (_, dist) = solve(20, 0.2, 0.1);
        let marginal = dist.j_marginal();
        assert_eq!(marginal.len(), 11);
        assert!((marginal.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(dist.boundary_mass() > 0.0 && dist.boundary_mass() < 1.0);
    }
}
