//! Analytic results for the dark boundary `(J, -J)`.
//!
//! When the repump is weak compared with collective emission, almost all
//! population sits on the dark states and the chain reduces to a birth-death
//! process in `J`. Its stationary law follows from detailed balance between
//! neighbouring boundary states. These closed forms serve as independent
//! checks of the numerical solvers.

use num_bigint::BigInt;
pub use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Level, ModelParams};
use crate::steady::Distribution;

/// Effective rate `(J, -J) -> (J+1, -J-1)` on the boundary: repump into
/// `(J+1, -J)` followed by fast collective decay, plus individual decay.
pub fn boundary_up_rate(params: &ModelParams, j: u32) -> f64 {
    if j >= params.j_max() {
        return 0.0;
    }
    let n = params.n() as f64;
    let j = j as f64;
    let repump = params.w() * (n - 2.0 * j) * 2.0 / (4.0 * (j + 1.0) * (2.0 * j + 1.0));
    let decay = params.gamma() * (n - 2.0 * j) / 2.0;
    repump + decay
}

/// Effective rate `(J, -J) -> (J-1, -J+1)`, a pure repump; zero at `J = 0`.
pub fn boundary_down_rate(params: &ModelParams, j: u32) -> f64 {
    if j == 0 || j > params.j_max() {
        return 0.0;
    }
    let n = params.n() as f64;
    let j = j as f64;
    params.w() * (n + 2.0 * j + 2.0) * (2.0 * j) * (2.0 * j - 1.0) / (4.0 * j * (2.0 * j + 1.0))
}

/// Stationary populations of the dark states `(J, -J)`, `J = 0..=N/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDistribution {
    pub params: ModelParams,
    pub p: Vec<f64>,
}

impl BoundaryDistribution {
    /// Boundary slice of a full distribution, renormalized to unit mass.
    pub fn from_distribution(dist: &Distribution) -> Result<Self> {
        let params = *dist.params();
        let p: Vec<f64> = (0..=params.j_max()).map(|j| dist.get(Level::dark(j))).collect();
        let total: f64 = p.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParams(
                "distribution has no weight on the boundary".into(),
            ));
        }
        Ok(Self {
            params,
            p: p.into_iter().map(|x| x / total).collect(),
        })
    }

    pub fn mean_j(&self) -> f64 {
        self.p.iter().enumerate().map(|(j, p)| j as f64 * p).sum()
    }

    pub fn variance_j(&self) -> f64 {
        let mean = self.mean_j();
        self.p
            .iter()
            .enumerate()
            .map(|(j, p)| (j as f64 - mean).powi(2) * p)
            .sum()
    }

    pub fn total_variation(&self, other: &Self) -> Result<f64> {
        if self.p.len() != other.p.len() {
            return Err(Error::DimensionMismatch {
                expected: self.p.len(),
                found: other.p.len(),
            });
        }
        Ok(0.5 * self.p.iter().zip(&other.p).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }
}

/// Detailed-balance recursion `P_J R_J^- = P_{J-1} (R_{J-1}^+ + G_{J-1}^+)`.
///
/// Only meaningful below threshold, where the boundary carries the mass.
/// Products are accumulated as logarithms.
pub fn boundary_recursion(params: &ModelParams) -> Result<BoundaryDistribution> {
    if params.w() <= 0.0 {
        return Err(Error::InvalidParams(
            "boundary recursion needs a positive repump rate".into(),
        ));
    }
    let j_max = params.j_max();
    let mut log_p = Vec::with_capacity(j_max as usize + 1);
    log_p.push(0.0f64);
    for j in 1..=j_max {
        let prev = log_p[j as usize - 1];
        log_p.push(prev + boundary_up_rate(params, j - 1).ln() - boundary_down_rate(params, j).ln());
    }
    let peak = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = log_p.iter().map(|l| (l - peak).exp()).collect();
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    Ok(BoundaryDistribution { params: *params, p })
}

/// Large-`N` Gaussian approximation of the `J` distribution for `w < gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLimit {
    pub mu: f64,
    pub sigma2: f64,
    pub validity: String,
}

pub fn gaussian_limit(params: &ModelParams) -> Result<GaussianLimit> {
    let (w, gamma) = (params.w(), params.gamma());
    if !(w > 0.0 && w < gamma) {
        return Err(Error::InvalidParams(format!(
            "Gaussian limit needs 0 < w < gamma, got w = {w}, gamma = {gamma}"
        )));
    }
    let n = params.n() as f64;
    Ok(GaussianLimit {
        mu: 0.5 * n * (gamma - w) / (gamma + w),
        sigma2: n * gamma * w / ((gamma + w) * (gamma + w)),
        validity: "boundary-dominated phase 0 < w < gamma, N >> 1".into(),
    })
}

fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Large-`N` limit of `R_{J-1}^+ / R_J^-`, namely `(2J+1) / (J (2J-1)^2)`.
pub fn ratio_table(j: u32) -> Result<BigRational> {
    if j == 0 {
        return Err(Error::InvalidParams("ratio defined for J >= 1".into()));
    }
    let j = j as i64;
    Ok(rational(2 * j + 1, j * (2 * j - 1) * (2 * j - 1)))
}

/// Finite-`N` ratio `R_{J-1}^+ / R_J^-` of the pure repump rates.
pub fn finite_n_ratio(n: u32, j: u32) -> Result<BigRational> {
    if !n.is_multiple_of(2) || n < 2 {
        return Err(Error::InvalidParams(format!(
            "atom number must be even and at least 2, got {n}"
        )));
    }
    if j == 0 || j > n / 2 {
        return Err(Error::InvalidParams(format!("ratio needs 1 <= J <= N/2, got J = {j}")));
    }
    let (n, j) = (n as i64, j as i64);
    Ok(rational(n - 2 * j + 2, n + 2 * j + 2) * ratio_table(j as u32)?)
}

/// `(P0, P1, P2)` of the weak-pump, no-decay, large-`N` limit, keeping only
/// `J <= 2` (the neglected `P3` is `7 P2 / 75`).
pub fn small_w_populations() -> [BigRational; 3] {
    // P1 = 3 P0 and P2 = (5/18) P1, normalized over the three levels.
    [rational(6, 29), rational(18, 29), rational(5, 29)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::{One, ToPrimitive};

    #[test]
    fn table_values() {
        let expect = [(1, 3, 1), (2, 5, 18), (3, 7, 75), (4, 9, 196)];
        for (j, a, b) in expect {
            assert_eq!(ratio_table(j).unwrap(), rational(a, b));
        }
        assert!(ratio_table(0).is_err());
    }

    #[test]
    fn small_w_consistency() {
        let [p0, p1, p2] = small_w_populations();
        assert_eq!(&p0 + &p1 + &p2, BigRational::one());
        assert_eq!(p1, &p0 * ratio_table(1).unwrap());
        assert_eq!(p2, &p1 * ratio_table(2).unwrap());
    }

    #[test]
    fn finite_ratio_approaches_limit() {
        let limit = ratio_table(2).unwrap().to_f64().unwrap();
        let at = |n| finite_n_ratio(n, 2).unwrap().to_f64().unwrap();
        assert!(((at(10_000) - limit) / limit).abs() < 0.01);
        assert!(((at(100) - limit) / limit).abs() > ((at(1000) - limit) / limit).abs());
        assert!(finite_n_ratio(4, 3).is_err());
        assert!(finite_n_ratio(5, 1).is_err());
    }

    #[test]
    fn finite_ratio_matches_boundary_rates() {
        let p = ModelParams::new(40, 0.3, 0.0).unwrap();
        for j in 1..=20 {
            let float = boundary_up_rate(&p, j - 1) / boundary_down_rate(&p, j);
            let exact = finite_n_ratio(40, j).unwrap().to_f64().unwrap();
            assert!((float - exact).abs() < 1e-13 * exact, "J = {j}");
        }
    }

    #[test]
    fn gaussian_values() {
        let g = gaussian_limit(&ModelParams::new(400, 0.05, 0.1).unwrap()).unwrap();
        assert!((g.mu - 200.0 / 3.0).abs() < 1e-12);
        assert!((g.sigma2 - 800.0 / 9.0).abs() < 1e-12);
        assert!(gaussian_limit(&ModelParams::new(400, 0.1, 0.1).unwrap()).is_err());
        assert!(gaussian_limit(&ModelParams::new(400, 0.0, 0.1).unwrap()).is_err());
    }

    #[test]
    fn recursion_normalized_and_rejects_zero_pump() {
        let b = boundary_recursion(&ModelParams::new(2000, 0.05, 0.1).unwrap()).unwrap();
        assert!((b.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(b.p.iter().all(|&x| x >= 0.0));
        assert!(boundary_recursion(&ModelParams::new(10, 0.0, 0.1).unwrap()).is_err());
    }

    #[test]
    fn recursion_weak_pump_tracks_table() {
        // With gamma = 0 the first ratios are the finite-N versions of the table.
        let b = boundary_recursion(&ModelParams::new(100, 1e-4, 0.0).unwrap()).unwrap();
        let r1 = finite_n_ratio(100, 1).unwrap().to_f64().unwrap();
        assert!((b.p[1] / b.p[0] - r1).abs() < 1e-12 * r1);
    }
}
