//! Color graphs, rate tables and the affine transition rates driven by local
//! empirical measures.
//!
//! A rate on edge `(z,z')` is
//! `max(0, w_c * sum_x gamma_c(x) nu(x) + sum_i w_i * sum_x gamma_p(x) mu_i(x) + beta)`
//! where the weights sum to one. `beta` is a per-edge constant that depends only
//! on the jumping node's own color (curing, service).

use std::collections::BTreeMap;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_config, Error, Result};
use crate::graph::NodeClass;

const WEIGHT_TOL: f64 = 1e-9;
const PROBABILITY_TOL: f64 = 1e-12;

/// Nonnegative weights on the colors `0..K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Measure(Vec<f64>);

impl Measure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid_arg("measure on zero colors"));
        }
        if let Some(z) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid_arg(format!("measure weight at color {z} is {}", weights[z])));
        }
        Ok(Self(weights))
    }

    /// A measure whose weights sum to one within `1e-12`.
    pub fn probability(weights: Vec<f64>) -> Result<Self> {
        let m = Self::new(weights)?;
        let total = m.mass();
        if (total - 1.0).abs() > PROBABILITY_TOL {
            return Err(invalid_arg(format!("probability weights sum to {total}")));
        }
        Ok(m)
    }

    pub fn delta(colors: usize, z: usize) -> Self {
        let mut w = vec![0.0; colors];
        w[z] = 1.0;
        Self(w)
    }

    pub fn uniform(colors: usize) -> Self {
        Self(vec![1.0 / colors as f64; colors])
    }

    /// Normalised histogram of counts.
    pub fn from_counts(counts: &[usize]) -> Self {
        let total: usize = counts.iter().sum();
        Self(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    /// Wrap weights without validation; used on hot paths where the caller
    /// already guarantees the invariants.
    pub(crate) fn from_vec_unchecked(weights: Vec<f64>) -> Self {
        Self(weights)
    }

    pub fn colors(&self) -> usize {
        self.0.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn mass(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn l1_distance(&self, other: &Measure) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

impl Deref for Measure {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Directed graph on the colors `0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorGraph {
    colors: usize,
    edges: Vec<(usize, usize)>,
    index: Vec<Option<usize>>,
    out_edges: Vec<Vec<usize>>,
}

impl ColorGraph {
    pub fn new(colors: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if colors == 0 {
            return Err(invalid_config("color graph needs at least one color"));
        }
        let mut index = vec![None; colors * colors];
        let mut out_edges = vec![Vec::new(); colors];
        for (e, &(z, w)) in edges.iter().enumerate() {
            if z >= colors || w >= colors {
                return Err(invalid_config(format!("edge ({z},{w}) leaves the colors 0..{colors}")));
            }
            if z == w {
                return Err(invalid_config(format!("self-loop at color {z}")));
            }
            if index[z * colors + w].replace(e).is_some() {
                return Err(invalid_config(format!("duplicate edge ({z},{w})")));
            }
            out_edges[z].push(e);
        }
        Ok(Self {
            colors,
            edges,
            index,
            out_edges,
        })
    }

    /// Every ordered pair of distinct colors.
    pub fn complete(colors: usize) -> Self {
        let edges = (0..colors)
            .flat_map(|z| (0..colors).filter(move |&w| w != z).map(move |w| (z, w)))
            .collect();
        Self::new(colors, edges).expect("complete color graph is valid")
    }

    /// Edges `(z, z+1)` and `(z+1, z)`.
    pub fn birth_death(colors: usize) -> Self {
        let mut edges = Vec::new();
        for z in 0..colors.saturating_sub(1) {
            edges.push((z, z + 1));
        }
        for z in 1..colors {
            edges.push((z, z - 1));
        }
        Self::new(colors, edges).expect("birth-death graph is valid")
    }

    pub fn colors(&self) -> usize {
        self.colors
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn edge_index(&self, from: usize, to: usize) -> Option<usize> {
        if from >= self.colors || to >= self.colors {
            return None;
        }
        self.index[from * self.colors + to]
    }

    /// Indices of the edges leaving `z`.
    pub fn out_edges(&self, z: usize) -> &[usize] {
        &self.out_edges[z]
    }
}

/// `gamma_c`, `gamma_p` tables (indexed `[edge][x]`) plus the state-only term `beta[edge]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSpec {
    graph: ColorGraph,
    gamma_c: Vec<Vec<f64>>,
    gamma_p: Vec<Vec<f64>>,
    beta: Vec<f64>,
    gamma_bar: f64,
    lipschitz: f64,
}

impl RateSpec {
    pub fn new(
        graph: ColorGraph,
        gamma_c: Vec<Vec<f64>>,
        gamma_p: Vec<Vec<f64>>,
        beta: Option<Vec<f64>>,
    ) -> Result<Self> {
        let k = graph.colors();
        let m = graph.edge_count();
        let beta = beta.unwrap_or_else(|| vec![0.0; m]);
        if gamma_c.len() != m || gamma_p.len() != m || beta.len() != m {
            return Err(invalid_config(format!("rate tables must cover all {m} edges")));
        }
        for (e, (gc, gp)) in gamma_c.iter().zip(&gamma_p).enumerate() {
            let (z, w) = graph.edge(e);
            if gc.len() != k || gp.len() != k {
                return Err(invalid_config(format!("edge ({z},{w}): gamma rows must have {k} entries")));
            }
            if gc.iter().chain(gp).any(|g| !(g.is_finite() && *g >= 0.0)) {
                return Err(invalid_config(format!("edge ({z},{w}): gamma entries must be finite and >= 0")));
            }
            if !beta[e].is_finite() {
                return Err(invalid_config(format!("edge ({z},{w}): beta is not finite")));
            }
        }
        let mut gamma_bar = 0.0f64;
        let mut lipschitz = 0.0f64;
        for e in 0..m {
            let top = gamma_c[e].iter().chain(&gamma_p[e]).fold(0.0f64, |a, &g| a.max(g));
            gamma_bar = gamma_bar.max(top + beta[e].max(0.0));
            for row in [&gamma_c[e], &gamma_p[e]] {
                for x in 1..k {
                    lipschitz = lipschitz.max((row[x] - row[x - 1]).abs());
                }
            }
        }
        Ok(Self {
            graph,
            gamma_c,
            gamma_p,
            beta,
            gamma_bar,
            lipschitz,
        })
    }

    /// Every edge has the constant rate `rate` whatever the measures.
    pub fn constant(graph: ColorGraph, rate: f64) -> Result<Self> {
        let k = graph.colors();
        let m = graph.edge_count();
        Self::new(graph, vec![vec![rate; k]; m], vec![vec![rate; k]; m], None)
    }

    pub fn color_graph(&self) -> &ColorGraph {
        &self.graph
    }

    pub fn colors(&self) -> usize {
        self.graph.colors()
    }

    pub fn gamma_c(&self, e: usize) -> &[f64] {
        &self.gamma_c[e]
    }

    pub fn gamma_p(&self, e: usize) -> &[f64] {
        &self.gamma_p[e]
    }

    pub fn beta(&self, e: usize) -> f64 {
        self.beta[e]
    }

    /// Upper bound on every rate evaluated at probability measures.
    pub fn gamma_bar(&self) -> f64 {
        self.gamma_bar
    }

    /// Largest slope of any gamma row along the ordered colors.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Lower bound on every rate evaluated at probability measures.
    pub fn rate_floor(&self) -> f64 {
        (0..self.graph.edge_count())
            .map(|e| {
                let low = self.gamma_c[e].iter().chain(&self.gamma_p[e]).fold(f64::INFINITY, |a, &g| a.min(g));
                (low + self.beta[e]).max(0.0)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn edge_of(&self, edge: (usize, usize)) -> Result<usize> {
        self.graph.edge_index(edge.0, edge.1).ok_or(Error::UnknownEdge {
            from: edge.0,
            to: edge.1,
        })
    }

    /// `sum_x gamma_c(x) w(x)` on edge `e`.
    #[inline]
    pub fn integral_c(&self, e: usize, w: &[f64]) -> f64 {
        dot(&self.gamma_c[e], w)
    }

    /// `sum_x gamma_p(x) w(x)` on edge `e`.
    #[inline]
    pub fn integral_p(&self, e: usize, w: &[f64]) -> f64 {
        dot(&self.gamma_p[e], w)
    }

    /// Rate of a central node on edge index `e`; no argument checks.
    #[inline]
    pub fn central_rate(&self, e: usize, nu: &[f64], mu: &[f64], a1: f64, a2: f64) -> f64 {
        (a1 * self.integral_c(e, nu) + a2 * self.integral_p(e, mu) + self.beta[e]).max(0.0)
    }

    /// Rate of a peripheral node on edge index `e`; no argument checks.
    #[inline]
    pub fn peripheral_rate(&self, e: usize, nu: &[f64], mus: &[&[f64]], a: f64, b: &[f64]) -> f64 {
        let mut s = a * self.integral_c(e, nu) + self.beta[e];
        for (mu, &bi) in mus.iter().zip(b) {
            if bi != 0.0 {
                s += bi * self.integral_p(e, mu);
            }
        }
        s.max(0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&RateSpecJson::from(self)).expect("rate serialisation cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RateSpecJson =
            serde_json::from_str(text).map_err(|e| invalid_config(format!("rate JSON: {e}")))?;
        raw.into_spec()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(invalid_arg(format!("proportions {weights:?} must lie in [0,1]")));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > WEIGHT_TOL {
        return Err(invalid_arg(format!("proportions sum to {s}, expected 1")));
    }
    Ok(())
}

fn check_measure(spec: &RateSpec, m: &[f64]) -> Result<()> {
    if m.len() != spec.colors() {
        return Err(invalid_arg(format!(
            "measure has {} colors, rate table has {}",
            m.len(),
            spec.colors()
        )));
    }
    Ok(())
}

/// `a1 * int gamma_c d nu + a2 * int gamma_p d mu` (plus the state-only term) on `edge`.
pub fn lambda_c(spec: &RateSpec, nu: &Measure, mu: &Measure, a1: f64, a2: f64, edge: (usize, usize)) -> Result<f64> {
    check_weights(&[a1, a2])?;
    check_measure(spec, nu)?;
    check_measure(spec, mu)?;
    let e = spec.edge_of(edge)?;
    Ok(spec.central_rate(e, nu, mu, a1, a2))
}

/// `a * int gamma_c d nu + sum_i b_i * int gamma_p d mu_i` (plus the state-only term) on `edge`.
pub fn lambda_p(spec: &RateSpec, nu: &Measure, mus: &[Measure], a: f64, b: &[f64], edge: (usize, usize)) -> Result<f64> {
    if mus.len() != b.len() {
        return Err(invalid_arg(format!("{} measures but {} weights", mus.len(), b.len())));
    }
    let mut w = vec![a];
    w.extend_from_slice(b);
    check_weights(&w)?;
    check_measure(spec, nu)?;
    for m in mus {
        check_measure(spec, m)?;
    }
    let e = spec.edge_of(edge)?;
    let slices: Vec<&[f64]> = mus.iter().map(|m| m.weights()).collect();
    Ok(spec.peripheral_rate(e, nu, &slices, a, b))
}

/// Rate tables for every (block, class). All tables share one color graph.
#[derive(Debug, Clone, PartialEq)]
pub struct RateModel {
    blocks: Vec<[RateSpec; 2]>,
}

impl RateModel {
    /// Separate central and peripheral tables per block.
    pub fn new(blocks: Vec<[RateSpec; 2]>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(invalid_config("rate model needs at least one block"));
        };
        let g = first[0].color_graph().clone();
        for (j, pair) in blocks.iter().enumerate() {
            for s in pair {
                if s.color_graph() != &g {
                    return Err(invalid_config(format!("block {j}: rate tables use a different color graph")));
                }
            }
        }
        Ok(Self { blocks })
    }

    /// The same table for every block and class.
    pub fn uniform(spec: RateSpec, blocks: usize) -> Self {
        Self {
            blocks: vec![[spec.clone(), spec]; blocks.max(1)],
        }
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn spec(&self, block: usize, class: NodeClass) -> &RateSpec {
        &self.blocks[block][class.index()]
    }

    pub fn color_graph(&self) -> &ColorGraph {
        self.blocks[0][0].color_graph()
    }

    pub fn colors(&self) -> usize {
        self.color_graph().colors()
    }

    pub fn gamma_bar(&self) -> f64 {
        self.blocks.iter().flatten().map(RateSpec::gamma_bar).fold(0.0, f64::max)
    }

    pub fn rate_floor(&self) -> f64 {
        self.blocks.iter().flatten().map(RateSpec::rate_floor).fold(f64::INFINITY, f64::min)
    }

    /// Checks that the model describes exactly `blocks` blocks.
    pub fn check_blocks(&self, blocks: usize) -> Result<()> {
        if self.blocks.len() != blocks {
            return Err(invalid_config(format!(
                "rate model has {} blocks, graph has {blocks}",
                self.blocks.len()
            )));
        }
        Ok(())
    }
}

fn check_nonnegative(name: &str, values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(invalid_arg(format!("{name} = {v} must be finite and >= 0")));
    }
    Ok(())
}

/// Normalised SIS model on colors `{0 = susceptible, 1 = infected}`.
///
/// Block `j` central infection rate: `p^c gamma[j] mu_j^c(1) + p^p nu[j] mu_j^p(1)`.
/// Block `j` peripheral infection rate: `alpha^c nu[j] mu_j^c(1) + sum_i q_ji eta mu_i^p(1)`.
/// Curing happens at rate `zeta[j]` regardless of the neighbourhood.
pub fn sis_spec(r: usize, gamma: &[f64], nu: &[f64], eta: f64, zeta: &[f64]) -> Result<RateModel> {
    if r == 0 {
        return Err(invalid_arg("SIS model needs at least one block"));
    }
    for (name, v) in [("gamma", gamma), ("nu", nu), ("zeta", zeta)] {
        if v.len() != r {
            return Err(invalid_arg(format!("{name} has {} entries, expected {r}", v.len())));
        }
        check_nonnegative(name, v)?;
    }
    check_nonnegative("eta", &[eta])?;
    let graph = ColorGraph::new(2, vec![(0, 1), (1, 0)])?;
    let linear = |s: f64| vec![0.0, s];
    let mut blocks = Vec::with_capacity(r);
    for j in 0..r {
        let cure = Some(vec![0.0, zeta[j]]);
        let central = RateSpec::new(
            graph.clone(),
            vec![linear(gamma[j]), vec![0.0; 2]],
            vec![linear(nu[j]), vec![0.0; 2]],
            cure.clone(),
        )?;
        let peripheral = RateSpec::new(
            graph.clone(),
            vec![linear(nu[j]), vec![0.0; 2]],
            vec![linear(eta), vec![0.0; 2]],
            cure,
        )?;
        blocks.push([central, peripheral]);
    }
    RateModel::new(blocks)
}

/// Finite-buffer queues on colors `0..K` (queue length).
///
/// Arrival `z -> z+1` happens at rate `max(0, zeta[z] + c0 * (m - z))`, where `m` is the
/// mean queue length in the node's neighbourhood; service `z -> z-1` at rate `vartheta[z]`.
pub fn queue_spec(colors: usize, zeta: &[f64], vartheta: &[f64], c0: f64) -> Result<RateSpec> {
    if colors < 2 {
        return Err(invalid_arg(format!("queue needs at least 2 colors, got {colors}")));
    }
    for (name, v) in [("zeta", zeta), ("vartheta", vartheta)] {
        if v.len() != colors {
            return Err(invalid_arg(format!("{name} has {} entries, expected {colors}", v.len())));
        }
        check_nonnegative(name, v)?;
    }
    check_nonnegative("c0", &[c0])?;
    let graph = ColorGraph::birth_death(colors);
    let mut gamma = Vec::with_capacity(graph.edge_count());
    let mut beta = Vec::with_capacity(graph.edge_count());
    for &(z, w) in graph.edges() {
        if w == z + 1 {
            gamma.push((0..colors).map(|x| c0 * x as f64).collect());
            beta.push(zeta[z] - c0 * z as f64);
        } else {
            gamma.push(vec![0.0; colors]);
            beta.push(vartheta[z]);
        }
    }
    RateSpec::new(graph, gamma.clone(), gamma, Some(beta))
}

/// On-disk layout of a custom rate table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpecJson {
    pub colors: usize,
    pub edges: Vec<[usize; 2]>,
    pub gamma_c: BTreeMap<String, Vec<f64>>,
    pub gamma_p: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<BTreeMap<String, f64>>,
    /// Color of the first state in `edges` and keys (0 or 1).
    #[serde(default)]
    pub base: usize,
}

impl From<&RateSpec> for RateSpecJson {
    fn from(s: &RateSpec) -> Self {
        let key = |&(z, w): &(usize, usize)| format!("{z},{w}");
        let edges = s.graph.edges();
        let beta = if s.beta.iter().all(|&b| b == 0.0) {
            None
        } else {
            Some(edges.iter().map(key).zip(s.beta.iter().copied()).collect())
        };
        Self {
            colors: s.colors(),
            edges: edges.iter().map(|&(z, w)| [z, w]).collect(),
            gamma_c: edges.iter().map(key).zip(s.gamma_c.iter().cloned()).collect(),
            gamma_p: edges.iter().map(key).zip(s.gamma_p.iter().cloned()).collect(),
            beta,
            base: 0,
        }
    }
}

fn parse_key(key: &str, base: usize) -> Result<(usize, usize)> {
    let bad = || invalid_config(format!("rate key \"{key}\" must look like \"z,z'\""));
    let (a, b) = key.split_once(',').ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a < base || b < base {
        return Err(invalid_config(format!("rate key \"{key}\" is below base {base}")));
    }
    Ok((a - base, b - base))
}

impl RateSpecJson {
    pub fn into_spec(self) -> Result<RateSpec> {
        if self.base > 1 {
            return Err(invalid_config(format!("base must be 0 or 1, got {}", self.base)));
        }
        let shift = |v: usize| {
            v.checked_sub(self.base)
                .ok_or_else(|| invalid_config(format!("color {v} is below base {}", self.base)))
        };
        let edges = self
            .edges
            .iter()
            .map(|e| Ok((shift(e[0])?, shift(e[1])?)))
            .collect::<Result<Vec<_>>>()?;
        let graph = ColorGraph::new(self.colors, edges)?;
        let m = graph.edge_count();
        let table = |name: &str, map: &BTreeMap<String, Vec<f64>>| -> Result<Vec<Vec<f64>>> {
            let mut out = vec![None; m];
            for (key, row) in map {
                let (z, w) = parse_key(key, self.base)?;
                let e = graph
                    .edge_index(z, w)
                    .ok_or_else(|| invalid_config(format!("{name}: key \"{key}\" is not a listed edge")))?;
                out[e] = Some(row.clone());
            }
            out.into_iter()
                .enumerate()
                .map(|(e, row)| {
                    let (z, w) = graph.edge(e);
                    row.ok_or_else(|| invalid_config(format!("{name}: missing row for edge ({z},{w})")))
                })
                .collect()
        };
        let gamma_c = table("gamma_c", &self.gamma_c)?;
        let gamma_p = table("gamma_p", &self.gamma_p)?;
        let beta = match &self.beta {
            None => None,
            Some(map) => {
                let mut out = vec![0.0; m];
                for (key, &v) in map {
                    let (z, w) = parse_key(key, self.base)?;
                    let e = graph
                        .edge_index(z, w)
                        .ok_or_else(|| invalid_config(format!("beta: key \"{key}\" is not a listed edge")))?;
                    out[e] = v;
                }
                Some(out)
            }
        };
        RateSpec::new(graph, gamma_c, gamma_p, beta)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SisJson {
    #[allow(dead_code)]
    model: String,
    gamma: Vec<f64>,
    nu: Vec<f64>,
    eta: f64,
    zeta: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueueJson {
    #[allow(dead_code)]
    model: String,
    colors: usize,
    zeta: Vec<f64>,
    vartheta: Vec<f64>,
    c0: f64,
}

/// Parse either a built-in model (`{"model": "sis" | "queue", ...}`) or a custom
/// rate table that is then used for every block and class.
pub fn rate_model_from_value(value: &serde_json::Value, blocks: usize) -> Result<RateModel> {
    let err = |e: serde_json::Error| invalid_config(format!("rates: {e}"));
    match value.get("model").and_then(|m| m.as_str()) {
        Some("sis") => {
            let p: SisJson = serde_json::from_value(value.clone()).map_err(err)?;
            sis_spec(blocks, &p.gamma, &p.nu, p.eta, &p.zeta).map_err(|e| invalid_config(format!("rates: {e}")))
        }
        Some("queue") => {
            let p: QueueJson = serde_json::from_value(value.clone()).map_err(err)?;
            let spec = queue_spec(p.colors, &p.zeta, &p.vartheta, p.c0)
                .map_err(|e| invalid_config(format!("rates: {e}")))?;
            Ok(RateModel::uniform(spec, blocks))
        }
        Some(other) => Err(invalid_config(format!("rates: unknown model \"{other}\""))),
        None => {
            let raw: RateSpecJson = serde_json::from_value(value.clone()).map_err(err)?;
            Ok(RateModel::uniform(raw.into_spec()?, blocks))
        }
    }
}
