//! Time propagation `P(t) = exp(Q t) P(0)`, observables and `g2(tau)`.
//!
//! The default propagator is uniformization: with `L >= max exit rate`,
//! `exp(Q t) = sum_k Pois(k; L t) (I + Q/L)^k`, a positive combination of
//! powers of a column-stochastic matrix. It conserves weight and keeps
//! entries non-negative by construction, independent of stiffness.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Level;
use crate::rates::Generator;
use crate::steady::Distribution;

/// Largest state count accepted by the dense exponential.
pub const DENSE_STATE_LIMIT: usize = 400;

const MAX_POISSON_TERMS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Propagator {
    Uniformization,
    /// Dense matrix exponential, for small state spaces only.
    DenseExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationSettings {
    pub method: Propagator,
    /// Poisson mass allowed to be dropped per uniformization step.
    pub poisson_tail: f64,
    /// Upper bound on `L * dt` for one uniformization step.
    pub max_step: f64,
    /// `L = rate_factor * max exit rate`.
    pub rate_factor: f64,
}

impl Default for PropagationSettings {
    fn default() -> Self {
        Self {
            method: Propagator::Uniformization,
            poisson_tail: 1e-12,
            max_step: 50.0,
            rate_factor: 1.01,
        }
    }
}

impl PropagationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.poisson_tail > 0.0 && self.poisson_tail <= 1e-6) {
            return Err(Error::InvalidParams(format!(
                "poisson_tail must lie in (0, 1e-6], got {}",
                self.poisson_tail
            )));
        }
        // exp(-max_step) must stay representable.
        if !(self.max_step > 0.0 && self.max_step <= 500.0) {
            return Err(Error::InvalidParams(format!(
                "max_step must lie in (0, 500], got {}",
                self.max_step
            )));
        }
        if !(self.rate_factor >= 1.0 && self.rate_factor.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "rate_factor must be at least 1, got {}",
                self.rate_factor
            )));
        }
        Ok(())
    }
}

/// Truncated, renormalized Poisson weights for one uniformization step.
fn poisson_weights(lambda: f64, tail: f64) -> Result<Vec<f64>> {
    let mut weights = vec![(-lambda).exp()];
    let mut k = 0usize;
    loop {
        let wk = weights[k];
        let ratio = lambda / (k as f64 + 1.0);
        // sum_{i>k} w_i <= w_k * ratio / (1 - ratio) once ratio < 1.
        if ratio < 1.0 && wk * ratio / (1.0 - ratio) < tail {
            break;
        }
        if k >= MAX_POISSON_TERMS {
            return Err(Error::NotConverged {
                iterations: k as u64,
                last_change: wk,
            });
        }
        weights.push(wk * ratio);
        k += 1;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Reusable uniformization propagator over one generator.
pub struct Uniformizer<'a> {
    gen: &'a Generator,
    lambda: f64,
    settings: PropagationSettings,
    cached: Option<(f64, Vec<f64>)>,
    power: Vec<f64>,
    scratch: Vec<f64>,
    acc: Vec<f64>,
}

impl<'a> Uniformizer<'a> {
    pub fn new(gen: &'a Generator, settings: PropagationSettings) -> Result<Self> {
        settings.validate()?;
        let dim = gen.dimension();
        Ok(Self {
            gen,
            lambda: settings.rate_factor * gen.max_exit_rate(),
            settings,
            cached: None,
            power: vec![0.0; dim],
            scratch: vec![0.0; dim],
            acc: vec![0.0; dim],
        })
    }

    /// Uniformization rate `L`.
    pub fn rate(&self) -> f64 {
        self.lambda
    }

    /// Propagates `x` in place by `tau`.
    pub fn advance(&mut self, x: &mut [f64], tau: f64) -> Result<()> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "propagation time must be finite and >= 0, got {tau}"
            )));
        }
        if x.len() != self.gen.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.gen.dimension(),
                found: x.len(),
            });
        }
        if tau == 0.0 || self.lambda == 0.0 {
            return Ok(());
        }
        let steps = (self.lambda * tau / self.settings.max_step).ceil().max(1.0) as u64;
        let dt = tau / steps as f64;
        let weights = match &self.cached {
            Some((cached_dt, w)) if *cached_dt == dt => w.clone(),
            _ => {
                let w = poisson_weights(self.lambda * dt, self.settings.poisson_tail)?;
                self.cached = Some((dt, w.clone()));
                w
            }
        };
        for _ in 0..steps {
            self.step(x, &weights);
        }
        Ok(())
    }

    fn step(&mut self, x: &mut [f64], weights: &[f64]) {
        self.power.copy_from_slice(x);
        for (a, &p) in self.acc.iter_mut().zip(&self.power) {
            *a = weights[0] * p;
        }
        let inv = 1.0 / self.lambda;
        for &wk in &weights[1..] {
            self.gen.apply_into(&self.power, &mut self.scratch);
            for ((p, &q), a) in self.power.iter_mut().zip(&self.scratch).zip(self.acc.iter_mut()) {
                *p += q * inv;
                *a += wk * *p;
            }
        }
        x.copy_from_slice(&self.acc);
    }
}

fn dense_exponential(gen: &Generator, x: &[f64], tau: f64) -> Result<Vec<f64>> {
    let dim = gen.dimension();
    if dim > DENSE_STATE_LIMIT {
        return Err(Error::InvalidParams(format!(
            "dense exponential limited to {DENSE_STATE_LIMIT} states, generator has {dim}"
        )));
    }
    let mut q = DMatrix::<f64>::zeros(dim, dim);
    for from in 0..dim {
        q[(from, from)] = gen.diagonal()[from];
        for (to, rate) in gen.out_edges(from) {
            q[(to, from)] += rate;
        }
    }
    let e = (q * tau).exp();
    Ok((e * DVector::from_column_slice(x)).iter().copied().collect())
}

/// `exp(Q tau) dist`. Linear in `dist`, which may be unnormalized.
pub fn evolve(gen: &Generator, dist: &Distribution, tau: f64, settings: &PropagationSettings) -> Result<Distribution> {
    settings.validate()?;
    if dist.len() != gen.dimension() {
        return Err(Error::DimensionMismatch {
            expected: gen.dimension(),
            found: dist.len(),
        });
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "propagation time must be finite and >= 0, got {tau}"
        )));
    }
    if tau == 0.0 {
        return Ok(dist.clone());
    }
    let weights = match settings.method {
        Propagator::Uniformization => {
            let mut x = dist.weights().to_vec();
            Uniformizer::new(gen, *settings)?.advance(&mut x, tau)?;
            x
        }
        Propagator::DenseExponential => dense_exponential(gen, dist.weights(), tau)?,
    };
    Distribution::from_weights(*dist.params(), weights, dist.is_normalized())
}

/// Steady-state observables of a (possibly unnormalized) distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableSet {
    /// Collective emission rate `sum (J+M)(J-M+1) P`.
    pub intensity: f64,
    /// `sum M P`.
    pub inversion: f64,
    pub mean_j: f64,
    pub mean_m: f64,
    pub boundary_mass: f64,
}

pub fn observables(dist: &Distribution) -> ObservableSet {
    let mut intensity = 0.0;
    let mut inversion = 0.0;
    let mut sum_j = 0.0;
    let mut total = 0.0;
    for (i, &p) in dist.weights().iter().enumerate() {
        let level = Level::from_index(i);
        intensity += level.emission_factor() * p;
        inversion += level.m as f64 * p;
        sum_j += level.j as f64 * p;
        total += p;
    }
    let (mean_j, mean_m) = if total > 0.0 {
        (sum_j / total, inversion / total)
    } else {
        (0.0, 0.0)
    };
    ObservableSet {
        intensity,
        inversion,
        mean_j,
        mean_m,
        boundary_mass: dist.boundary_mass(),
    }
}

/// Population part of `J- rho J+`: weight `f(J, M) P(J, M)` moved to `(J, M-1)`.
pub fn jump_map(dist: &Distribution) -> Distribution {
    let params = *dist.params();
    let mut out = vec![0.0; dist.len()];
    for (i, &p) in dist.weights().iter().enumerate() {
        let level = Level::from_index(i);
        let f = level.emission_factor();
        if f > 0.0 {
            out[i - 1] += f * p;
        }
    }
    Distribution::from_weights(params, out, false).expect("jump map preserves non-negativity")
}

/// Normalized intensity correlation `g2(tau)` at each requested delay.
///
/// The auxiliary `J- rho J+` is propagated once across the sorted delays.
pub fn g2(gen: &Generator, steady: &Distribution, taus: &[f64]) -> Result<Vec<f64>> {
    g2_with(gen, steady, taus, &PropagationSettings::default())
}

pub fn g2_with(
    gen: &Generator,
    steady: &Distribution,
    taus: &[f64],
    settings: &PropagationSettings,
) -> Result<Vec<f64>> {
    if steady.len() != gen.dimension() {
        return Err(Error::DimensionMismatch {
            expected: gen.dimension(),
            found: steady.len(),
        });
    }
    if let Some(&bad) = taus.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidParams(format!(
            "delays must be finite and >= 0, got {bad}"
        )));
    }
    let intensity = observables(steady).intensity;
    if intensity <= 0.0 {
        return Err(Error::DarkState);
    }
    let denom = intensity * intensity;
    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| taus[a].total_cmp(&taus[b]));

    let mut aux = jump_map(steady).into_weights();
    let mut out = vec![0.0; taus.len()];
    let mut now = 0.0;
    let numerator = |x: &[f64]| -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, &p)| Level::from_index(i).emission_factor() * p)
            .sum()
    };
    match settings.method {
        Propagator::Uniformization => {
            let mut prop = Uniformizer::new(gen, *settings)?;
            for idx in order {
                prop.advance(&mut aux, taus[idx] - now)?;
                now = taus[idx];
                out[idx] = numerator(&aux) / denom;
            }
        }
        Propagator::DenseExponential => {
            for idx in order {
                aux = dense_exponential(gen, &aux, taus[idx] - now)?;
                now = taus[idx];
                out[idx] = numerator(&aux) / denom;
            }
        }
    }
    Ok(out)
}

/// Writes `tau,g2` rows.
pub fn write_g2_csv<W: Write>(taus: &[f64], values: &[f64], mut out: W) -> Result<()> {
    if taus.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: taus.len(),
            found: values.len(),
        });
    }
    writeln!(out, "tau,g2")?;
    for (t, g) in taus.iter().zip(values) {
        writeln!(out, "{t:e},{g:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn params(n: u32, w: f64, gamma: f64) -> ModelParams {
        ModelParams::new(n, w, gamma).unwrap()
    }

    #[test]
    fn poisson_weights_sum_to_one() {
        for lambda in [0.1, 1.0, 10.0, 50.0] {
            let w = poisson_weights(lambda, 1e-12).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(w.len() as f64 > lambda);
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let p = params(6, 0.2, 0.1);
        let gen = Generator::build(&p);
        let d = Distribution::point_mass(p, Level::new(2, 1)).unwrap();
        assert_eq!(evolve(&gen, &d, 0.0, &PropagationSettings::default()).unwrap(), d);
    }

    #[test]
    fn cascade_reaches_dark_state() {
        let p = params(2, 0.0, 0.0);
        let gen = Generator::build(&p);
        let d = Distribution::point_mass(p, Level::new(1, 1)).unwrap();
        let out = evolve(&gen, &d, 40.0, &PropagationSettings::default()).unwrap();
        assert!((out.get(Level::dark(1)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_settings_and_times() {
        let p = params(4, 0.2, 0.1);
        let gen = Generator::build(&p);
        let d = Distribution::uniform(p);
        let bad = PropagationSettings {
            poisson_tail: 1e-3,
            ..Default::default()
        };
        assert!(evolve(&gen, &d, 1.0, &bad).is_err());
        assert!(evolve(&gen, &d, -1.0, &PropagationSettings::default()).is_err());
        assert!(evolve(&gen, &d, f64::NAN, &PropagationSettings::default()).is_err());
    }

    #[test]
    fn observables_of_point_masses() {
        let p = params(4, 0.2, 0.1);
        let dark = observables(&Distribution::point_mass(p, Level::dark(2)).unwrap());
        assert_eq!(dark.intensity, 0.0);
        assert_eq!(dark.boundary_mass, 1.0);
        let top = observables(&Distribution::point_mass(p, Level::new(1, 1)).unwrap());
        assert_eq!(top.intensity, 2.0);
        assert_eq!(top.inversion, 1.0);
        assert_eq!(top.mean_j, 1.0);
        assert_eq!(top.boundary_mass, 0.0);
    }

    #[test]
    fn jump_map_moves_weight_down() {
        let p = params(2, 0.2, 0.1);
        let out = jump_map(&Distribution::point_mass(p, Level::new(1, 1)).unwrap());
        assert_eq!(out.weights(), &[0.0, 0.0, 2.0, 0.0]);
        let boundary = Distribution::from_weights(p, vec![0.5, 0.5, 0.0, 0.0], true).unwrap();
        assert!(jump_map(&boundary).weights().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn g2_of_top_state_is_one() {
        let p = params(2, 0.2, 0.1);
        let gen = Generator::build(&p);
        let d = Distribution::point_mass(p, Level::new(1, 1)).unwrap();
        assert_eq!(g2(&gen, &d, &[0.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn g2_rejects_dark_state() {
        let p = params(4, 0.2, 0.1);
        let gen = Generator::build(&p);
        let d = Distribution::point_mass(p, Level::dark(1)).unwrap();
        assert!(matches!(g2(&gen, &d, &[0.0, 1.0]), Err(Error::DarkState)));
    }

    #[test]
    fn g2_order_independent_of_input_order() {
        let p = params(10, 0.2, 0.1);
        let gen = Generator::build(&p);
        let ss = crate::steady::steady_state(&gen).unwrap();
        let sorted = g2(&gen, &ss, &[0.0, 0.5, 2.0, 7.0]).unwrap();
        let shuffled = g2(&gen, &ss, &[7.0, 0.0, 2.0, 0.5]).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / a).abs();
        assert!(rel(sorted[0], shuffled[1]) < 1e-12);
        assert!(rel(sorted[1], shuffled[3]) < 1e-10);
        assert!(rel(sorted[2], shuffled[2]) < 1e-10);
        assert!(rel(sorted[3], shuffled[0]) < 1e-10);
    }

    #[test]
    fn g2_csv_layout() {
        let mut buf = Vec::new();
        write_g2_csv(&[0.0, 1.5], &[2.0, 1.0], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "tau,g2\n0e0,2e0\n1.5e0,1e0\n");
    }
}
