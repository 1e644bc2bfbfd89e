//! Net probability currents, entropy production and detailed-balance checks.
//!
//! All quantities use total edge rates, i.e. `CollectiveDecay` and
//! `DecaySameJ` are merged as in the generator.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Level, ModelParams};
use crate::rates::Generator;
use crate::steady::Distribution;

/// Fluxes below this are treated as zero when both directions fall under it.
pub const FLUX_FLOOR: f64 = 1e-300;

/// Net current on one neighbor pair, oriented toward the larger index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentEdge {
    pub from: Level,
    pub to: Level,
    /// `P_from R(from -> to) - P_to R(to -> from)`.
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentField {
    params: ModelParams,
    edges: Vec<CurrentEdge>,
}

/// Circulation around one elementary four-state loop.
///
/// The loop is the row segment `(J, M), (J, M+1), (J, M+2)` closed through
/// the apex `(J + apex_dj, M + 1)`, traversed counterclockwise in the
/// `(M, J)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plaquette {
    pub base: Level,
    pub apex_dj: i32,
    pub circulation: f64,
}

impl CurrentField {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn edges(&self) -> &[CurrentEdge] {
        &self.edges
    }

    pub fn max_abs(&self) -> f64 {
        self.edges.iter().fold(0.0, |acc, e| acc.max(e.w.abs()))
    }

    /// Oriented current `a -> b`; zero if the pair is not an edge.
    pub fn current(&self, a: Level, b: Level) -> f64 {
        let (lo, hi, sign) = if a.index() < b.index() {
            (a, b, 1.0)
        } else {
            (b, a, -1.0)
        };
        self.edges
            .binary_search_by(|e| (e.from.index(), e.to.index()).cmp(&(lo.index(), hi.index())))
            .map_or(0.0, |i| sign * self.edges[i].w)
    }

    /// Net current leaving each state; equals `-dP/dt`.
    pub fn net_outflow(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.params.state_count()];
        for e in &self.edges {
            out[e.from.index()] += e.w;
            out[e.to.index()] -= e.w;
        }
        out
    }

    /// Circulations of every elementary loop of the state space.
    pub fn plaquettes(&self) -> Vec<Plaquette> {
        let p = &self.params;
        let mut out = Vec::new();
        for j in 0..=p.j_max() {
            let ji = j as i32;
            for m in -ji..=ji - 2 {
                let a = Level::new(j, m);
                let b = Level::new(j, m + 1);
                let c = Level::new(j, m + 2);
                for apex_dj in [-1, 1] {
                    let Some(apex) = p.shifted(b, apex_dj, 0) else { continue };
                    let path = if apex_dj < 0 { [a, apex, c, b] } else { [a, b, c, apex] };
                    let circulation = (0..4).map(|k| self.current(path[k], path[(k + 1) % 4])).sum();
                    out.push(Plaquette {
                        base: a,
                        apex_dj,
                        circulation,
                    });
                }
            }
        }
        out
    }

    pub fn max_circulation(&self) -> f64 {
        self.plaquettes()
            .iter()
            .fold(0.0, |acc, q| acc.max(q.circulation.abs()))
    }

    /// Writes `J_from,M_from,J_to,M_to,W` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "J_from,M_from,J_to,M_to,W")?;
        for e in &self.edges {
            writeln!(out, "{},{},{},{},{:e}", e.from.j, e.from.m, e.to.j, e.to.m, e.w)?;
        }
        Ok(())
    }
}

fn check_dims(gen: &Generator, dist: &Distribution) -> Result<()> {
    if gen.dimension() != dist.len() {
        return Err(Error::DimensionMismatch {
            expected: gen.dimension(),
            found: dist.len(),
        });
    }
    Ok(())
}

/// Every neighbor pair `(lo, hi)` with at least one positive rate, sorted,
/// together with `R(lo -> hi)` and `R(hi -> lo)`.
fn pairs(gen: &Generator) -> Vec<(usize, usize, f64, f64)> {
    let mut out = Vec::with_capacity(gen.nnz());
    for a in 0..gen.dimension() {
        for (b, r_ab) in gen.out_edges(a) {
            if a < b {
                out.push((a, b, r_ab, gen.rate(b, a)));
            } else if gen.rate(b, a) == 0.0 {
                out.push((b, a, 0.0, r_ab));
            }
        }
    }
    out.sort_by_key(|&(a, b, _, _)| (a, b));
    out
}

pub fn currents(gen: &Generator, dist: &Distribution) -> Result<CurrentField> {
    check_dims(gen, dist)?;
    let p = dist.weights();
    let edges = pairs(gen)
        .into_iter()
        .map(|(a, b, r_ab, r_ba)| CurrentEdge {
            from: Level::from_index(a),
            to: Level::from_index(b),
            w: p[a] * r_ab - p[b] * r_ba,
        })
        .collect();
    Ok(CurrentField {
        params: *gen.params(),
        edges,
    })
}

/// Total, external (flow) and internal (production) entropy rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub s_tot: f64,
    pub s_e: f64,
    pub s_i: f64,
    /// Pairs left out because both fluxes were below [`FLUX_FLOOR`] or a
    /// population underflowed to zero on a two-way edge.
    pub n_edges_skipped: usize,
}

impl EntropyReport {
    pub fn s_i_per_atom(&self, params: &ModelParams) -> f64 {
        self.s_i / params.n() as f64
    }

    /// JSON object with the rates and the echoed parameters.
    pub fn to_json(&self, params: &ModelParams) -> serde_json::Value {
        serde_json::json!({
            "s_tot": self.s_tot,
            "s_e": self.s_e,
            "s_i": self.s_i,
            "s_i_per_atom": self.s_i_per_atom(params),
            "n_edges_skipped": self.n_edges_skipped,
            "N": params.n(),
            "w": params.w(),
            "gamma": params.gamma(),
        })
    }
}

/// Compensated running sum with a fixed visiting order.
#[derive(Default, Clone, Copy)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn entropy_rates(gen: &Generator, dist: &Distribution) -> Result<EntropyReport> {
    check_dims(gen, dist)?;
    let p = dist.weights();
    let mut s_tot = NeumaierSum::default();
    let mut s_e = NeumaierSum::default();
    let mut s_i = NeumaierSum::default();
    let mut skipped = 0;
    for (a, b, r_ab, r_ba) in pairs(gen) {
        let x = p[a] * r_ab;
        let y = p[b] * r_ba;
        if x < FLUX_FLOOR && y < FLUX_FLOOR {
            skipped += 1;
            continue;
        }
        if r_ab == 0.0 || r_ba == 0.0 {
            let (from, to) = if r_ba == 0.0 { (a, b) } else { (b, a) };
            return Err(Error::DivergentEntropy {
                from: Level::from_index(from),
                to: Level::from_index(to),
            });
        }
        if x == 0.0 || y == 0.0 {
            skipped += 1;
            continue;
        }
        let net = x - y;
        s_tot.add(net * (p[a].ln() - p[b].ln()));
        s_e.add(net * (r_ba / r_ab).ln());
        s_i.add(net * (x / y).ln());
    }
    Ok(EntropyReport {
        s_tot: s_tot.value(),
        s_e: s_e.value(),
        s_i: s_i.value(),
        n_edges_skipped: skipped,
    })
}

/// Outcome of [`detailed_balance_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceCheck {
    pub balanced: bool,
    /// Largest `|W| / (forward + backward flux)` over all edges.
    pub max_violation: f64,
    /// Edge attaining `max_violation`.
    pub worst_edge: Option<(Level, Level)>,
    /// `sum |W| / sum (forward + backward flux)`: the violation weighted by
    /// how much probability actually flows through each edge.
    pub flux_weighted_violation: f64,
}

pub fn detailed_balance_check(gen: &Generator, dist: &Distribution, tol: f64) -> Result<BalanceCheck> {
    check_dims(gen, dist)?;
    let p = dist.weights();
    let mut max_violation = 0.0;
    let mut worst_edge = None;
    let mut net = NeumaierSum::default();
    let mut gross = NeumaierSum::default();
    for (a, b, r_ab, r_ba) in pairs(gen) {
        let x = p[a] * r_ab;
        let y = p[b] * r_ba;
        let total = x + y;
        if total == 0.0 {
            continue;
        }
        net.add((x - y).abs());
        gross.add(total);
        let v = (x - y).abs() / total;
        if v > max_violation {
            max_violation = v;
            worst_edge = Some((Level::from_index(a), Level::from_index(b)));
        }
    }
    Ok(BalanceCheck {
        balanced: max_violation < tol,
        max_violation,
        worst_edge,
        flux_weighted_violation: net.value() / gross.value(),
    })
}
