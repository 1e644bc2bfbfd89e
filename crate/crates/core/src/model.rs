//! Physical parameters and the triangular `(J, M)` state space.
//!
//! States are collective angular-momentum labels `(J, M)` with
//! `0 <= J <= N/2` and `|M| <= J`. They are flattened J-major with M
//! ascending inside each block, so the dark state `(J, -J)` is the first
//! entry of its block and `index(J, M) = J^2 + J + M`.
//!
//! All rates are measured in units of the collective emission rate, which
//! is fixed to one.

use std::fmt;

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Free-space decay rate used throughout unless overridden.
pub const DEFAULT_GAMMA: f64 = 0.1;

/// One physical instance: atom number, repump rate and free-space decay rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    n: u32,
    w: f64,
    gamma: f64,
}

impl ModelParams {
    pub fn new(n: u32, w: f64, gamma: f64) -> Result<Self> {
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!(
                "atom number must be even and at least 2, got {n}"
            )));
        }
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidParams(format!(
                "repump rate must be finite and non-negative, got {w}"
            )));
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::InvalidParams(format!(
                "decay rate must be finite and non-negative, got {gamma}"
            )));
        }
        Ok(Self { n, w, gamma })
    }

    /// Atom number `N`.
    pub fn n(&self) -> u32 {
        self.n
    }

    /// Repump rate `w`.
    pub fn w(&self) -> f64 {
        self.w
    }

    /// Free-space decay rate `gamma`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Largest total angular momentum, `N/2`.
    pub fn j_max(&self) -> u32 {
        self.n / 2
    }

    /// Number of `(J, M)` states, `(N/2 + 1)^2 = (N + 2)^2 / 4`.
    pub fn state_count(&self) -> usize {
        let side = self.j_max() as usize + 1;
        side * side
    }

    pub fn contains(&self, level: Level) -> bool {
        level.j <= self.j_max() && level.m.unsigned_abs() <= level.j
    }

    pub fn check(&self, level: Level) -> Result<()> {
        if self.contains(level) {
            Ok(())
        } else {
            Err(Error::InvalidLevel {
                j: level.j as i64,
                m: level.m as i64,
                n: self.n,
            })
        }
    }

    pub fn index_of(&self, level: Level) -> Result<usize> {
        self.check(level)?;
        Ok(level.index())
    }

    pub fn level_of(&self, index: usize) -> Result<Level> {
        let count = self.state_count();
        if index >= count {
            return Err(Error::IndexOutOfRange { index, count });
        }
        Ok(Level::from_index(index))
    }

    /// Returns the level displaced by `(dj, dm)` if it lies in the state space.
    pub fn shifted(&self, level: Level, dj: i32, dm: i32) -> Option<Level> {
        let j = level.j as i64 + dj as i64;
        let m = level.m as i64 + dm as i64;
        if j < 0 || j > self.j_max() as i64 || m.abs() > j {
            None
        } else {
            Some(Level::new(j as u32, m as i32))
        }
    }

    /// All levels in index order.
    pub fn levels(&self) -> impl Iterator<Item = Level> {
        (0..=self.j_max()).flat_map(|j| (-(j as i32)..=j as i32).map(move |m| Level::new(j, m)))
    }
}

/// A collective state `(J, M)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Level {
    pub j: u32,
    pub m: i32,
}

impl Level {
    pub const fn new(j: u32, m: i32) -> Self {
        Self { j, m }
    }

    /// The dark state `(J, -J)` at the lower boundary.
    pub const fn dark(j: u32) -> Self {
        Self { j, m: -(j as i32) }
    }

    pub fn is_dark(&self) -> bool {
        self.m == -(self.j as i32)
    }

    /// Linear index without range checks against a particular `N`.
    pub fn index(&self) -> usize {
        let j = self.j as usize;
        (j * j + j).wrapping_add_signed(self.m as isize)
    }

    pub fn from_index(index: usize) -> Self {
        let j = index.isqrt();
        let m = index as i64 - (j * j + j) as i64;
        Self::new(j as u32, m as i32)
    }

    /// Collective emission factor `(J + M)(J - M + 1)`, the eigenvalue of
    /// `J+ J-` on this state.
    pub fn emission_factor(&self) -> f64 {
        let j = self.j as i64;
        let m = self.m as i64;
        ((j + m) * (j - m + 1)) as f64
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.j, self.m)
    }
}

/// Degeneracy `d_N^J = N! (2J+1) / ((N/2 + J + 1)! (N/2 - J)!)`, exact.
pub fn multiplicity(n: u32, j: u32) -> Result<BigUint> {
    if !n.is_multiple_of(2) {
        return Err(Error::InvalidParams(format!("atom number must be even, got {n}")));
    }
    if j > n / 2 {
        return Err(Error::InvalidLevel { j: j as i64, m: 0, n });
    }
    let half = n / 2;
    // d = C(N, N/2 - J) (2J + 1) / (N/2 + J + 1); the division is exact.
    let k = half - j;
    let mut binom = BigUint::one();
    for i in 0..k {
        binom *= n - i;
        binom /= i + 1;
    }
    Ok(binom * (2 * j + 1) / (half + j + 1))
}
