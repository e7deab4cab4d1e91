//! Exact event-driven simulation of the N-particle system.
//!
//! The chain is simulated with the direct method: exponential waiting time on
//! the total rate, then a channel drawn proportionally to its rate from a sum
//! tree. Nodes of one (block, class) that share a color also share a rate
//! whenever the peripheral subgraph is complete, so channels are aggregated per
//! (block, class, edge) with rate `count(src) * lambda`. Otherwise every
//! peripheral node gets its own channel.

use rand::Rng;

use crate::error::{invalid_arg, invalid_config, Result};
use crate::graph::{component_index, neighborhood_proportions, BlockGraph, NodeClass};
use crate::rates::{Measure, RateModel, RateSpec};
use crate::rng::{substream, SimRng};
use crate::sumtree::SumTree;

/// Full rate recomputation period, in events.
const REFRESH_EVERY: u64 = 10_000;

/// Colors of all nodes plus per-(block, class) color counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemState {
    colors: Vec<usize>,
    k: usize,
    /// `counts[component * k + z]`
    counts: Vec<usize>,
}

impl SystemState {
    pub fn new(graph: &BlockGraph, colors: Vec<usize>, k: usize) -> Result<Self> {
        if colors.len() != graph.node_count() {
            return Err(invalid_arg(format!(
                "state has {} colors for {} nodes",
                colors.len(),
                graph.node_count()
            )));
        }
        if let Some(n) = colors.iter().position(|&z| z >= k) {
            return Err(invalid_arg(format!("node {n} has color {} outside 0..{k}", colors[n])));
        }
        let counts = recount(graph, &colors, k);
        Ok(Self { colors, k, counts })
    }

    /// Every node in color `z`.
    pub fn uniform(graph: &BlockGraph, z: usize, k: usize) -> Result<Self> {
        Self::new(graph, vec![z; graph.node_count()], k)
    }

    pub fn colors(&self) -> &[usize] {
        &self.colors
    }

    pub fn color(&self, node: usize) -> usize {
        self.colors[node]
    }

    pub fn color_count(&self) -> usize {
        self.k
    }

    /// Color counts of `(block, class)`.
    pub fn counts(&self, block: usize, class: NodeClass) -> &[usize] {
        let c = component_index(block, class);
        &self.counts[c * self.k..(c + 1) * self.k]
    }

    /// Recolor a node, keeping the counts in sync.
    pub fn set_color(&mut self, graph: &BlockGraph, node: usize, z: usize) {
        let comp = component_index(graph.block_of(node), graph.class_of(node));
        let old = self.colors[node];
        self.counts[comp * self.k + old] -= 1;
        self.counts[comp * self.k + z] += 1;
        self.colors[node] = z;
    }

    /// True if the cached counts equal a recount from the colors.
    pub fn counts_consistent(&self, graph: &BlockGraph) -> bool {
        recount(graph, &self.colors, self.k) == self.counts
    }

    pub fn empirical(&self, graph: &BlockGraph) -> EmpiricalVector {
        let r = graph.block_count();
        let components = (0..2 * r)
            .map(|c| Measure::from_counts(&self.counts[c * self.k..(c + 1) * self.k]))
            .collect();
        EmpiricalVector { components }
    }
}

fn recount(graph: &BlockGraph, colors: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0; 2 * graph.block_count() * k];
    for (n, &z) in colors.iter().enumerate() {
        let c = component_index(graph.block_of(n), graph.class_of(n));
        counts[c * k + z] += 1;
    }
    counts
}

/// Each node drawn independently from the measure of its (block, class).
pub fn sample_initial_state(graph: &BlockGraph, init: &[Measure], rng: &mut SimRng) -> Result<SystemState> {
    let r = graph.block_count();
    if init.len() != 2 * r {
        return Err(invalid_arg(format!("{} initial measures for {} components", init.len(), 2 * r)));
    }
    let k = init[0].colors();
    if init.iter().any(|m| m.colors() != k) {
        return Err(invalid_arg("initial measures disagree on the number of colors"));
    }
    let mut colors = Vec::with_capacity(graph.node_count());
    for n in 0..graph.node_count() {
        let m = &init[component_index(graph.block_of(n), graph.class_of(n))];
        let total = m.mass();
        let mut u = rng.random::<f64>() * total;
        let mut z = k - 1;
        for (x, &w) in m.iter().enumerate() {
            if u < w {
                z = x;
                break;
            }
            u -= w;
        }
        // Guard against landing on a zero-weight tail color through rounding.
        while m[z] == 0.0 && z > 0 {
            z -= 1;
        }
        colors.push(z);
    }
    SystemState::new(graph, colors, k)
}

/// Per-class empirical measures `(mu_1^c, mu_1^p, ..., mu_r^c, mu_r^p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalVector {
    pub components: Vec<Measure>,
}

impl EmpiricalVector {
    pub fn component(&self, block: usize, class: NodeClass) -> &Measure {
        &self.components[component_index(block, class)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub node: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: SystemState,
    pub events: Vec<Event>,
    pub horizon: f64,
}

impl Trajectory {
    /// Number of jumps of every node.
    pub fn jump_counts(&self) -> Vec<usize> {
        let mut phi = vec![0; self.initial.colors.len()];
        for ev in &self.events {
            phi[ev.node] += 1;
        }
        phi
    }

    /// State after all events.
    pub fn final_state(&self, graph: &BlockGraph) -> SystemState {
        let mut s = self.initial.clone();
        for ev in &self.events {
            s.set_color(graph, ev.node, ev.to);
        }
        s
    }

    /// Replays the events, checking colors, edges and strictly increasing times.
    pub fn verify(&self, graph: &BlockGraph, model: &RateModel) -> Result<()> {
        let g = model.color_graph();
        let mut s = self.initial.clone();
        let mut last = f64::NEG_INFINITY;
        for (i, ev) in self.events.iter().enumerate() {
            if !(ev.t > last && ev.t <= self.horizon) {
                return Err(invalid_config(format!("event {i} at t = {} is out of order", ev.t)));
            }
            if s.color(ev.node) != ev.from || g.edge_index(ev.from, ev.to).is_none() {
                return Err(invalid_config(format!("event {i} is not a legal jump")));
            }
            s.set_color(graph, ev.node, ev.to);
            if !s.counts_consistent(graph) {
                return Err(invalid_config(format!("counts drift after event {i}")));
            }
            last = ev.t;
        }
        Ok(())
    }
}

/// Local empirical measure of a node split into its groups.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEmpirical {
    /// Central node: `[mu_j^c, mu_j^p]`. Peripheral node: `[mu_j^c, mu_1, ..., mu_r]`
    /// where `mu_j` is the whole peripheral class of its own block and `mu_i`
    /// (i != j) covers its neighbours in block `i` (zero measure if it has none).
    pub parts: Vec<Measure>,
    pub proportions: Vec<f64>,
    pub combined: Measure,
}

/// Recount the local empirical measure of `node` from scratch.
pub fn local_empirical(state: &SystemState, graph: &BlockGraph, node: usize) -> LocalEmpirical {
    let k = state.k;
    let j = graph.block_of(node);
    let hist = |nodes: &mut dyn Iterator<Item = usize>| {
        let mut c = vec![0usize; k];
        for n in nodes {
            c[state.colors[n]] += 1;
        }
        c
    };
    let own_c = hist(&mut graph.class_nodes(j, NodeClass::Central));
    let own_p = hist(&mut graph.class_nodes(j, NodeClass::Peripheral));
    let (parts, proportions) = match graph.class_of(node) {
        NodeClass::Central => {
            let nj = graph.block_size(j).total() as f64;
            (
                vec![Measure::from_counts(&own_c), Measure::from_counts(&own_p)],
                vec![
                    graph.block_size(j).central as f64 / nj,
                    graph.block_size(j).peripheral as f64 / nj,
                ],
            )
        }
        NodeClass::Peripheral => {
            let r = graph.block_count();
            let mut parts = vec![Measure::from_counts(&own_c)];
            for i in 0..r {
                let c = if i == j {
                    own_p.clone()
                } else {
                    hist(&mut graph
                        .peripheral_neighbors(node)
                        .iter()
                        .copied()
                        .filter(|&m| graph.block_of(m) == i))
                };
                if c.iter().sum::<usize>() == 0 {
                    parts.push(Measure::from_vec_unchecked(vec![0.0; k]));
                } else {
                    parts.push(Measure::from_counts(&c));
                }
            }
            let props = neighborhood_proportions(graph, node).expect("peripheral node");
            (parts, props.to_vec())
        }
    };
    let mut combined = vec![0.0; k];
    for (m, &w) in parts.iter().zip(&proportions) {
        for (acc, x) in combined.iter_mut().zip(m.iter()) {
            *acc += w * x;
        }
    }
    LocalEmpirical {
        parts,
        proportions,
        combined: Measure::from_vec_unchecked(combined),
    }
}

/// Empirical vector at each grid time, evaluated right-continuously
/// (events at exactly `t` are included).
pub fn empirical_process(traj: &Trajectory, graph: &BlockGraph, grid: &[f64]) -> Result<Vec<EmpiricalVector>> {
    if grid.iter().any(|&t| !(0.0..=traj.horizon).contains(&t)) {
        return Err(invalid_arg(format!("grid leaves [0, {}]", traj.horizon)));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid_arg("grid must be strictly increasing"));
    }
    let mut state = traj.initial.clone();
    let mut next = 0;
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        while next < traj.events.len() && traj.events[next].t <= t {
            let ev = traj.events[next];
            state.set_color(graph, ev.node, ev.to);
            next += 1;
        }
        out.push(state.empirical(graph));
    }
    Ok(out)
}

/// Sample a trajectory on `[0, horizon]` from `init`.
pub fn simulate(graph: &BlockGraph, model: &RateModel, init: &SystemState, horizon: f64, seed: u64) -> Result<Trajectory> {
    let mut rng = substream(seed, 0);
    simulate_with_rng(graph, model, init, horizon, &mut rng)
}

/// As [`simulate`], drawing from a caller-supplied stream.
pub fn simulate_with_rng(
    graph: &BlockGraph,
    model: &RateModel,
    init: &SystemState,
    horizon: f64,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(invalid_arg(format!("horizon {horizon} must be finite and >= 0")));
    }
    model.check_blocks(graph.block_count())?;
    if init.k != model.colors() || init.colors.len() != graph.node_count() {
        return Err(invalid_arg("initial state does not match the graph and color set"));
    }
    if !model.gamma_bar().is_finite() {
        return Err(invalid_config("rates are unbounded"));
    }
    let mut engine = Engine::new(graph, model, init.clone());
    let mut events = Vec::new();
    engine.run(horizon, rng, |ev| events.push(ev));
    Ok(Trajectory {
        initial: init.clone(),
        events,
        horizon,
    })
}

struct Engine<'a> {
    graph: &'a BlockGraph,
    model: &'a RateModel,
    k: usize,
    m: usize,
    r: usize,
    state: SystemState,
    /// Nodes of each (component, color), for uniform choice inside a channel.
    members: Vec<Vec<usize>>,
    slot: Vec<usize>,
    /// Peripheral counts summed over all blocks (complete mode).
    all_peripheral: Vec<usize>,
    complete: bool,
    /// Per peripheral slot: counts of foreign neighbours by color (per-node mode).
    foreign: Vec<usize>,
    /// Per peripheral slot: `deg + 1`.
    closed_degree: Vec<f64>,
    /// Per block and edge: `sum gamma_c * cnt_c + sum gamma_p * cnt_p` under the peripheral table.
    block_part: Vec<f64>,
    tree: SumTree,
    scratch: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(graph: &'a BlockGraph, model: &'a RateModel, state: SystemState) -> Self {
        let k = state.k;
        let r = graph.block_count();
        let m = model.color_graph().edge_count();
        let complete = graph.is_complete_peripheral();
        let p = graph.peripheral_count();
        let leaves = r * m + if complete { r * m } else { p };
        let mut e = Self {
            graph,
            model,
            k,
            m,
            r,
            state,
            members: vec![Vec::new(); 2 * r * k],
            slot: vec![0; graph.node_count()],
            all_peripheral: vec![0; k],
            complete,
            foreign: if complete { Vec::new() } else { vec![0; p * k] },
            closed_degree: graph.peripherals().iter().map(|&n| (graph.degree(n) + 1) as f64).collect(),
            block_part: vec![0.0; r * m],
            tree: SumTree::new(leaves),
            scratch: Vec::with_capacity(k),
        };
        for n in 0..graph.node_count() {
            let key = e.member_key(n, e.state.colors[n]);
            e.slot[n] = e.members[key].len();
            e.members[key].push(n);
        }
        e.refresh();
        e
    }

    fn member_key(&self, node: usize, z: usize) -> usize {
        component_index(self.graph.block_of(node), self.graph.class_of(node)) * self.k + z
    }

    fn counts(&self, block: usize, class: NodeClass) -> &[usize] {
        self.state.counts(block, class)
    }

    fn spec(&self, block: usize, class: NodeClass) -> &'a RateSpec {
        self.model.spec(block, class)
    }

    /// Rebuild every derived quantity from the colors.
    fn refresh(&mut self) {
        let k = self.k;
        self.all_peripheral.fill(0);
        for j in 0..self.r {
            for z in 0..k {
                self.all_peripheral[z] += self.counts(j, NodeClass::Peripheral)[z];
            }
        }
        if !self.complete {
            self.foreign.fill(0);
            for (p, &n) in self.graph.peripherals().iter().enumerate() {
                let j = self.graph.block_of(n);
                for &nb in self.graph.peripheral_neighbors(n) {
                    if self.graph.block_of(nb) != j {
                        self.foreign[p * k + self.state.colors[nb]] += 1;
                    }
                }
            }
        }
        let central = (0..self.r * self.m).map(|i| self.central_leaf(i / self.m, i % self.m));
        let central: Vec<f64> = central.collect();
        for j in 0..self.r {
            self.update_block_part(j);
        }
        let peripheral: Vec<f64> = if self.complete {
            (0..self.r * self.m)
                .map(|i| self.complete_leaf(i / self.m, i % self.m))
                .collect()
        } else {
            (0..self.graph.peripheral_count()).map(|p| self.node_leaf(p)).collect()
        };
        self.tree.fill(|i| if i < central.len() { central[i] } else { peripheral[i - central.len()] });
    }

    fn central_leaf(&self, j: usize, e: usize) -> f64 {
        let spec = self.spec(j, NodeClass::Central);
        let (src, _) = spec.color_graph().edge(e);
        let n_src = self.counts(j, NodeClass::Central)[src];
        if n_src == 0 {
            return 0.0;
        }
        let cc = self.counts(j, NodeClass::Central);
        let cp = self.counts(j, NodeClass::Peripheral);
        let nj = self.graph.block_size(j).total() as f64;
        let raw = (counts_dot(spec.gamma_c(e), cc) + counts_dot(spec.gamma_p(e), cp)) / nj + spec.beta(e);
        n_src as f64 * checked_rate(raw)
    }

    fn complete_leaf(&self, j: usize, e: usize) -> f64 {
        let spec = self.spec(j, NodeClass::Peripheral);
        let (src, _) = spec.color_graph().edge(e);
        let n_src = self.counts(j, NodeClass::Peripheral)[src];
        if n_src == 0 {
            return 0.0;
        }
        let cc = self.counts(j, NodeClass::Central);
        let closed = (self.graph.block_size(j).central + self.graph.peripheral_count()) as f64;
        let raw = (counts_dot(spec.gamma_c(e), cc) + counts_dot(spec.gamma_p(e), &self.all_peripheral)) / closed
            + spec.beta(e);
        n_src as f64 * checked_rate(raw)
    }

    fn update_block_part(&mut self, j: usize) {
        if self.complete {
            return;
        }
        let spec = self.spec(j, NodeClass::Peripheral);
        for e in 0..self.m {
            let v = counts_dot(spec.gamma_c(e), self.counts(j, NodeClass::Central))
                + counts_dot(spec.gamma_p(e), self.counts(j, NodeClass::Peripheral));
            self.block_part[j * self.m + e] = v;
        }
    }

    /// Rate of peripheral slot `p` on edge `e` (per-node mode).
    fn node_rate(&self, p: usize, e: usize) -> f64 {
        let n = self.graph.peripherals()[p];
        let j = self.graph.block_of(n);
        let spec = self.spec(j, NodeClass::Peripheral);
        let f = &self.foreign[p * self.k..(p + 1) * self.k];
        let raw = (self.block_part[j * self.m + e] + counts_dot(spec.gamma_p(e), f)) / self.closed_degree[p] + spec.beta(e);
        checked_rate(raw)
    }

    fn node_leaf(&self, p: usize) -> f64 {
        let n = self.graph.peripherals()[p];
        let g = self.model.color_graph();
        g.out_edges(self.state.colors[n]).iter().map(|&e| self.node_rate(p, e)).sum()
    }

    fn set_central_leaves(&mut self, j: usize) {
        for e in 0..self.m {
            let v = self.central_leaf(j, e);
            self.tree.set(j * self.m + e, v);
        }
    }

    fn set_complete_leaves(&mut self, j: usize) {
        let base = self.r * self.m;
        for e in 0..self.m {
            let v = self.complete_leaf(j, e);
            self.tree.set(base + j * self.m + e, v);
        }
    }

    fn set_node_leaf(&mut self, p: usize) {
        let v = self.node_leaf(p);
        self.tree.set(self.r * self.m + p, v);
    }

    fn pick(&self, list: &[usize], u: f64) -> usize {
        let i = ((u * list.len() as f64) as usize).min(list.len() - 1);
        list[i]
    }

    /// Choose the node and edge for the channel `leaf`.
    fn resolve(&mut self, leaf: usize, u: f64) -> (usize, usize) {
        let rm = self.r * self.m;
        let g = self.model.color_graph();
        if leaf < rm {
            let (j, e) = (leaf / self.m, leaf % self.m);
            let (src, dst) = g.edge(e);
            let key = component_index(j, NodeClass::Central) * self.k + src;
            (self.pick(&self.members[key], u), dst)
        } else if self.complete {
            let (j, e) = ((leaf - rm) / self.m, (leaf - rm) % self.m);
            let (src, dst) = g.edge(e);
            let key = component_index(j, NodeClass::Peripheral) * self.k + src;
            (self.pick(&self.members[key], u), dst)
        } else {
            let p = leaf - rm;
            let n = self.graph.peripherals()[p];
            let out = g.out_edges(self.state.colors[n]);
            self.scratch.clear();
            let mut acc = 0.0;
            for &e in out {
                acc += self.node_rate(p, e);
                self.scratch.push(acc);
            }
            let x = u * acc;
            // First edge whose cumulative rate exceeds x; if rounding pushes x to the
            // top, fall back to the last edge with a positive rate.
            let pick = self.scratch.iter().position(|&c| x < c).unwrap_or_else(|| {
                (0..out.len())
                    .rev()
                    .find(|&i| self.scratch[i] > if i == 0 { 0.0 } else { self.scratch[i - 1] })
                    .expect("positive channel rate")
            });
            (n, g.edge(out[pick]).1)
        }
    }

    fn apply(&mut self, node: usize, to: usize) {
        let from = self.state.colors[node];
        let j = self.graph.block_of(node);
        let class = self.graph.class_of(node);
        // Move the node between member lists.
        let old_key = self.member_key(node, from);
        let s = self.slot[node];
        self.members[old_key].swap_remove(s);
        if let Some(&moved) = self.members[old_key].get(s) {
            self.slot[moved] = s;
        }
        let new_key = self.member_key(node, to);
        self.slot[node] = self.members[new_key].len();
        self.members[new_key].push(node);
        self.state.set_color(self.graph, node, to);

        self.set_central_leaves(j);
        if self.complete {
            match class {
                NodeClass::Central => self.set_complete_leaves(j),
                NodeClass::Peripheral => {
                    self.all_peripheral[from] -= 1;
                    self.all_peripheral[to] += 1;
                    for i in 0..self.r {
                        self.set_complete_leaves(i);
                    }
                }
            }
        } else {
            if class == NodeClass::Peripheral {
                self.all_peripheral[from] -= 1;
                self.all_peripheral[to] += 1;
                for &nb in self.graph.peripheral_neighbors(node) {
                    if self.graph.block_of(nb) != j {
                        let p = self.graph.peripheral_slot(nb).expect("peripheral neighbour");
                        self.foreign[p * self.k + from] -= 1;
                        self.foreign[p * self.k + to] += 1;
                        self.set_node_leaf(p);
                    }
                }
            }
            self.update_block_part(j);
            for n in self.graph.class_nodes(j, NodeClass::Peripheral) {
                let p = self.graph.peripheral_slot(n).expect("peripheral");
                self.set_node_leaf(p);
            }
        }
    }

    fn run(&mut self, horizon: f64, rng: &mut SimRng, mut emit: impl FnMut(Event)) {
        let mut t = 0.0f64;
        let mut since_refresh = 0u64;
        loop {
            let total = self.tree.total();
            assert!(total.is_finite() && total >= 0.0, "total rate {total} is not a valid rate");
            if total <= 0.0 {
                break;
            }
            let u: f64 = rng.random();
            let mut next = t - (1.0 - u).ln() / total;
            if next <= t {
                next = t.next_up();
            }
            if next > horizon {
                break;
            }
            t = next;
            let leaf = self.tree.sample(rng.random());
            let (node, to) = self.resolve(leaf, rng.random());
            let from = self.state.colors[node];
            self.apply(node, to);
            emit(Event { t, node, from, to });
            since_refresh += 1;
            if since_refresh == REFRESH_EVERY {
                since_refresh = 0;
                self.refresh();
            }
        }
    }
}

#[inline]
fn counts_dot(gamma: &[f64], counts: &[usize]) -> f64 {
    gamma.iter().zip(counts).map(|(g, &c)| g * c as f64).sum()
}

#[inline]
fn checked_rate(raw: f64) -> f64 {
    assert!(raw.is_finite(), "rate evaluation produced {raw}");
    raw.max(0.0)
}
