//! Exact transient law of tiny systems on the full product space `Z^N`.
//!
//! The forward equation is solved by uniformization: with `Lambda` at least the
//! largest exit rate, `P = I + Q / Lambda` is stochastic and
//! `p(t) = sum_k Poisson(k; Lambda t) p(0) P^k`. The horizon is split into
//! slices with `Lambda h <= 20` so the Poisson weights never underflow.

use crate::error::{invalid_arg, Error, Result};
use crate::graph::{BlockGraph, NodeClass};
use crate::particle::{local_empirical, SystemState};
use crate::rates::{lambda_c, lambda_p, Measure, RateModel};

/// Largest product space the oracle accepts.
pub const ORACLE_CAPACITY: usize = 4096;
/// Total truncation error of the Poisson series over the whole horizon.
pub const ORACLE_TOLERANCE: f64 = 1e-10;
const MAX_SLICE_INTENSITY: f64 = 20.0;

/// Probability of every configuration; state index is `sum_n x_n K^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDistribution {
    pub nodes: usize,
    pub colors: usize,
    pub probabilities: Vec<f64>,
}

impl OracleDistribution {
    /// Decode a state index into node colors.
    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut x = Vec::with_capacity(self.nodes);
        for _ in 0..self.nodes {
            x.push(index % self.colors);
            index /= self.colors;
        }
        x
    }

    pub fn marginal(&self, node: usize) -> Vec<f64> {
        let stride = self.colors.pow(node as u32);
        let mut out = vec![0.0; self.colors];
        for (s, &p) in self.probabilities.iter().enumerate() {
            out[(s / stride) % self.colors] += p;
        }
        out
    }

    pub fn expectation(&self, f: impl Fn(&[usize]) -> f64) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != 0.0)
            .map(|(s, &p)| p * f(&self.decode(s)))
            .sum()
    }
}

fn state_count(colors: usize, nodes: usize) -> Result<usize> {
    let states = (colors as u128).checked_pow(nodes as u32).unwrap_or(u128::MAX);
    if states > ORACLE_CAPACITY as u128 {
        return Err(Error::Capacity {
            states,
            cap: ORACLE_CAPACITY,
        });
    }
    Ok(states as usize)
}

/// Law of independent nodes with the given marginals.
pub fn product_distribution(marginals: &[Measure]) -> Result<OracleDistribution> {
    let nodes = marginals.len();
    let colors = marginals.first().map(Measure::colors).ok_or_else(|| invalid_arg("no nodes"))?;
    if marginals.iter().any(|m| m.colors() != colors) {
        return Err(invalid_arg("marginals disagree on the number of colors"));
    }
    let states = state_count(colors, nodes)?;
    let mut d = OracleDistribution {
        nodes,
        colors,
        probabilities: vec![0.0; states],
    };
    for s in 0..states {
        d.probabilities[s] = d.decode(s).iter().zip(marginals).map(|(&z, m)| m[z]).product();
    }
    Ok(d)
}

/// Point mass on one configuration.
pub fn point_distribution(colors: usize, state: &[usize]) -> Result<OracleDistribution> {
    let marginals: Vec<Measure> = state.iter().map(|&z| Measure::delta(colors, z)).collect();
    product_distribution(&marginals)
}

/// Every transition `(from, to, rate)` of the generator, rates recounted from scratch.
fn transitions(graph: &BlockGraph, model: &RateModel, states: usize) -> Result<Vec<(usize, usize, f64)>> {
    let k = model.colors();
    let n = graph.node_count();
    let g = model.color_graph();
    let mut out = Vec::new();
    let mut x = vec![0usize; n];
    for s in 0..states {
        let mut rest = s;
        for slot in x.iter_mut() {
            *slot = rest % k;
            rest /= k;
        }
        let state = SystemState::new(graph, x.clone(), k)?;
        let mut stride = 1;
        for node in 0..n {
            let loc = local_empirical(&state, graph, node);
            let spec = model.spec(graph.block_of(node), graph.class_of(node));
            for &e in g.out_edges(x[node]) {
                let edge = g.edge(e);
                let rate = match graph.class_of(node) {
                    NodeClass::Central => {
                        lambda_c(spec, &loc.parts[0], &loc.parts[1], loc.proportions[0], loc.proportions[1], edge)?
                    }
                    NodeClass::Peripheral => {
                        lambda_p(spec, &loc.parts[0], &loc.parts[1..], loc.proportions[0], &loc.proportions[1..], edge)?
                    }
                };
                if rate > 0.0 {
                    let target = s - x[node] * stride + edge.1 * stride;
                    out.push((s, target, rate));
                }
            }
            stride *= k;
        }
    }
    Ok(out)
}

/// Law of the configuration at time `horizon` started from `init`.
pub fn master_equation_oracle(
    graph: &BlockGraph,
    model: &RateModel,
    init: &OracleDistribution,
    horizon: f64,
) -> Result<OracleDistribution> {
    model.check_blocks(graph.block_count())?;
    let k = model.colors();
    let n = graph.node_count();
    let states = state_count(k, n)?;
    if init.nodes != n || init.colors != k || init.probabilities.len() != states {
        return Err(invalid_arg("initial law does not match the graph and color set"));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(invalid_arg(format!("horizon {horizon} must be finite and >= 0")));
    }
    let moves = transitions(graph, model, states)?;
    let mut exit = vec![0.0; states];
    for &(s, _, r) in &moves {
        exit[s] += r;
    }
    let lambda = exit.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut p = init.probabilities.clone();
    if horizon == 0.0 || lambda == 0.0 {
        return Ok(OracleDistribution {
            probabilities: p,
            ..init.clone()
        });
    }
    let slices = (lambda * horizon / MAX_SLICE_INTENSITY).ceil().max(1.0) as usize;
    let h = horizon / slices as f64;
    let a = lambda * h;
    let tol = ORACLE_TOLERANCE / slices as f64;
    let stay: Vec<f64> = exit.iter().map(|e| 1.0 - e / lambda).collect();
    let mut term = vec![0.0; states];
    let mut next = vec![0.0; states];
    let mut acc = vec![0.0; states];
    for _ in 0..slices {
        term.copy_from_slice(&p);
        let mut weight = (-a).exp();
        let mut covered = weight;
        for (o, &t) in acc.iter_mut().zip(&term) {
            *o = weight * t;
        }
        let mut j = 0u32;
        while 1.0 - covered > tol {
            j += 1;
            for (o, (&t, &st)) in next.iter_mut().zip(term.iter().zip(&stay)) {
                *o = t * st;
            }
            for &(s, target, r) in &moves {
                next[target] += term[s] * r / lambda;
            }
            std::mem::swap(&mut term, &mut next);
            weight *= a / j as f64;
            covered += weight;
            for (o, &t) in acc.iter_mut().zip(&term) {
                *o += weight * t;
            }
            if j > 10_000 {
                return Err(Error::Numerical("Poisson series failed to converge".into()));
            }
        }
        std::mem::swap(&mut p, &mut acc);
    }
    Ok(OracleDistribution {
        nodes: n,
        colors: k,
        probabilities: p,
    })
}
