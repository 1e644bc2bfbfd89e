//! Permutation-invariant Markov chain of a below-threshold bad-cavity laser.
//!
//! The collective `(J, M)` populations of `N` incoherently repumped atoms
//! that decay collectively into a damped cavity mode (rate fixed to one)
//! and individually into free space (rate `gamma`) obey a classical rate
//! equation on a triangular state space. This crate builds that chain and
//! analyses it:
//!
//! - [`model`]: parameters, state indexing and degeneracies
//! - [`rates`]: the seven channel rates and the sparse generator
//! - [`steady`]: stationary distributions
//! - [`noneq`]: probability currents, entropy production, detailed balance
//! - [`evolve`]: time propagation, observables and `g2(tau)`
//! - [`kmc`]: seedable kinetic Monte Carlo trajectories
//! - [`closedform`]: analytic boundary-chain results used as oracles

// Negated float comparisons such as `!(x > 0.0)` are used on purpose so
// that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closedform;
pub mod error;
pub mod evolve;
pub mod kmc;
pub mod model;
pub mod noneq;
pub mod rates;
pub mod steady;

pub use closedform::{
    boundary_recursion, finite_n_ratio, gaussian_limit, ratio_table, small_w_populations, BoundaryDistribution,
    GaussianLimit,
};
pub use error::{Error, Result};
pub use evolve::{evolve, g2, jump_map, observables, ObservableSet, PropagationSettings, Propagator};
pub use kmc::{burst_stats, occupancy, simulate, BurstStats, Event, JumpRecord};
pub use model::{multiplicity, Level, ModelParams, DEFAULT_GAMMA};
pub use noneq::{currents, detailed_balance_check, entropy_rates, BalanceCheck, CurrentField, EntropyReport};
pub use rates::{channel_rate, local_rates, Channel, Generator, LocalRates, Transition};
pub use steady::{residual, steady_state, steady_state_with, Distribution, SteadyMethod, SteadyOptions, SteadyReport};
