//! Dense reference computations shared by the integration tests. They are
//! assembled straight from the per-channel rates and solved with generic
//! dense linear algebra, so they share no code with the sparse solvers.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use subrad::{channel_rate, Channel, Distribution, Level, ModelParams};

pub fn dense_generator(params: &ModelParams) -> DMatrix<f64> {
    let dim = params.state_count();
    let mut q = DMatrix::zeros(dim, dim);
    for from in params.levels() {
        for channel in Channel::ALL {
            let rate = channel_rate(params, from, channel);
            if rate == 0.0 {
                continue;
            }
            let (dj, dm) = channel.displacement();
            let to = Level::new((from.j as i32 + dj) as u32, from.m + dm);
            let (a, b) = (from.index(), to.index());
            q[(b, a)] += rate;
            q[(a, a)] -= rate;
        }
    }
    q
}

/// Null vector of `Q` with unit sum, via `Q` with its last row replaced by ones.
pub fn dense_null_vector(params: &ModelParams) -> Vec<f64> {
    let mut q = dense_generator(params);
    let dim = q.nrows();
    for c in 0..dim {
        q[(dim - 1, c)] = 1.0;
    }
    let mut rhs = DVector::zeros(dim);
    rhs[dim - 1] = 1.0;
    q.lu()
        .solve(&rhs)
        .expect("stationary law is unique")
        .iter()
        .copied()
        .collect()
}

pub fn dense_propagate(params: &ModelParams, x: &[f64], tau: f64) -> Vec<f64> {
    let e = (dense_generator(params) * tau).exp();
    (e * DVector::from_column_slice(x)).iter().copied().collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// `sum_{J,M} P f(J,M) f(J,M-1) / (sum P f(J,M))^2` with
/// `f(J,M) = (J+M)(J-M+1)`.
pub fn g2_zero_double_sum(dist: &Distribution) -> f64 {
    let f = |j: i64, m: i64| ((j + m) * (j - m + 1)) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for level in dist.params().levels() {
        let p = dist.get(level);
        let (j, m) = (level.j as i64, level.m as i64);
        num += p * f(j, m) * f(j, m - 1);
        den += p * f(j, m);
    }
    num / (den * den)
}

/// Mean and variance of `J` under a full distribution.
pub fn j_moments(dist: &Distribution) -> (f64, f64) {
    let marginal = dist.j_marginal();
    let total: f64 = marginal.iter().sum();
    let mean = marginal.iter().enumerate().map(|(j, p)| j as f64 * p).sum::<f64>() / total;
    let var = marginal
        .iter()
        .enumerate()
        .map(|(j, p)| (j as f64 - mean).powi(2) * p)
        .sum::<f64>()
        / total;
    (mean, var)
}
