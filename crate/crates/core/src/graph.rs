//! Block-structured graphs with central and peripheral node classes.
//!
//! A graph is a union of `r` blocks. Every block is a clique; central nodes
//! see only their own block, peripheral nodes additionally see some peripheral
//! nodes of other blocks. Node ids are global and contiguous: block `j`
//! occupies `offset(j)..offset(j+1)`, with its central nodes first.
//!
//! Only peripheral-peripheral adjacency is materialised (including the
//! intra-block peripheral clique); central adjacency is implied by the block
//! structure.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_config, Error, Result};

const PROPORTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeClass {
    Central,
    Peripheral,
}

impl NodeClass {
    pub const ALL: [NodeClass; 2] = [NodeClass::Central, NodeClass::Peripheral];

    /// 0 for central, 1 for peripheral; used for component indexing.
    pub fn index(self) -> usize {
        match self {
            NodeClass::Central => 0,
            NodeClass::Peripheral => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeClass::Central => "central",
            NodeClass::Peripheral => "peripheral",
        }
    }

    /// Single-letter tag used in CSV exports.
    pub fn tag(self) -> &'static str {
        match self {
            NodeClass::Central => "c",
            NodeClass::Peripheral => "p",
        }
    }
}

/// Index of the (block, class) component in the `2r` ordering
/// `(1c, 1p, 2c, 2p, ...)`.
pub fn component_index(block: usize, class: NodeClass) -> usize {
    2 * block + class.index()
}

/// Inverse of [`component_index`].
pub fn component_of(index: usize) -> (usize, NodeClass) {
    let class = if index % 2 == 0 {
        NodeClass::Central
    } else {
        NodeClass::Peripheral
    };
    (index / 2, class)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSize {
    pub central: usize,
    pub peripheral: usize,
}

impl BlockSize {
    pub fn new(central: usize, peripheral: usize) -> Self {
        Self { central, peripheral }
    }

    pub fn total(&self) -> usize {
        self.central + self.peripheral
    }

    pub fn of_class(&self, class: NodeClass) -> usize {
        match class {
            NodeClass::Central => self.central,
            NodeClass::Peripheral => self.peripheral,
        }
    }
}

impl From<(usize, usize)> for BlockSize {
    fn from((central, peripheral): (usize, usize)) -> Self {
        Self { central, peripheral }
    }
}

/// Weights a peripheral node gives to each group of its neighbourhood.
///
/// `central` is `N_j^c / (deg(n)+1)`; `peripheral[i]` is `M_i^n / (deg(n)+1)`
/// for a foreign block `i` and `N_j^p / (deg(n)+1)` for the node's own block.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodProportions {
    pub central: f64,
    pub peripheral: Vec<f64>,
}

impl NeighborhoodProportions {
    /// Flattened in the order `(central, peripheral[0], ..., peripheral[r-1])`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.peripheral.len() + 1);
        v.push(self.central);
        v.extend_from_slice(&self.peripheral);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGraph {
    sizes: Vec<BlockSize>,
    offsets: Vec<usize>,
    node_block: Vec<u32>,
    node_class: Vec<NodeClass>,
    /// Dense index of each peripheral node among all peripherals, `u32::MAX` for central nodes.
    peripheral_index: Vec<u32>,
    peripherals: Vec<usize>,
    /// Sorted peripheral neighbours (global ids) of each peripheral node.
    neighbors: Vec<Vec<usize>>,
    /// `M_i^n` for each peripheral node, row-major `[peripheral_index][block]`.
    cross_counts: Vec<usize>,
}

impl BlockGraph {
    /// Build and validate a graph from block sizes and an undirected
    /// peripheral edge list (global ids, any order, no duplicates).
    pub fn from_edges(sizes: &[BlockSize], edges: &[(usize, usize)]) -> Result<Self> {
        let mut graph = Self::skeleton(sizes)?;
        let n = graph.node_count();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(invalid_config(format!("edge ({a},{b}) references a node outside 0..{n}")));
            }
            if a == b {
                return Err(invalid_config(format!("self-loop on node {a}")));
            }
            if graph.node_class[a] != NodeClass::Peripheral || graph.node_class[b] != NodeClass::Peripheral {
                return Err(invalid_config(format!("edge ({a},{b}) touches a central node")));
            }
            let (pa, pb) = (graph.peripheral_index[a] as usize, graph.peripheral_index[b] as usize);
            graph.neighbors[pa].push(b);
            graph.neighbors[pb].push(a);
        }
        for (p, list) in graph.neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                let node = graph.peripherals[p];
                return Err(invalid_config(format!("duplicate edge at node {node}")));
            }
        }
        graph.finish()?;
        Ok(graph)
    }

    /// Every pair of peripheral nodes, across all blocks, is adjacent.
    pub fn complete_peripheral(sizes: &[BlockSize]) -> Result<Self> {
        let mut graph = Self::skeleton(sizes)?;
        let all = graph.peripherals.clone();
        for (p, &node) in all.iter().enumerate() {
            graph.neighbors[p] = all.iter().copied().filter(|&m| m != node).collect();
        }
        graph.finish()?;
        Ok(graph)
    }

    /// Regular design: each peripheral node of block `j` is linked to
    /// `round_half_up(fractions[j][i] * N_i^p)` peripherals of every foreign block `i`.
    ///
    /// The diagonal of `fractions` is ignored (own-block peripherals are always a clique).
    /// Counts must balance: `N_j^p * d_ji == N_i^p * d_ij`.
    pub fn regular_peripheral(sizes: &[BlockSize], fractions: &[Vec<f64>]) -> Result<Self> {
        let r = sizes.len();
        if fractions.len() != r || fractions.iter().any(|row| row.len() != r) {
            return Err(invalid_config(format!("fraction matrix must be {r}x{r}")));
        }
        let mut graph = Self::skeleton(sizes)?;
        let mut degree = vec![vec![0usize; r]; r];
        for j in 0..r {
            for i in 0..r {
                if i == j {
                    continue;
                }
                let f = fractions[j][i];
                if !(f > 0.0 && f <= 1.0) {
                    return Err(invalid_config(format!(
                        "fraction[{j}][{i}] = {f} must lie in (0, 1]"
                    )));
                }
                let d = (f * sizes[i].peripheral as f64 + 0.5).floor() as usize;
                if d == 0 || d > sizes[i].peripheral {
                    return Err(invalid_config(format!(
                        "fraction[{j}][{i}] = {f} yields {d} links into a block of {} peripherals",
                        sizes[i].peripheral
                    )));
                }
                degree[j][i] = d;
            }
        }
        for j in 0..r {
            for i in (j + 1)..r {
                if sizes[j].peripheral * degree[j][i] != sizes[i].peripheral * degree[i][j] {
                    return Err(invalid_config(format!(
                        "blocks {j} and {i}: {}*{} != {}*{} cross links, no regular design exists",
                        sizes[j].peripheral, degree[j][i], sizes[i].peripheral, degree[i][j]
                    )));
                }
            }
        }
        let mut edges = Vec::new();
        for j in 0..r {
            let pj = graph.offsets[j] + sizes[j].central;
            for a in 0..sizes[j].peripheral {
                for b in (a + 1)..sizes[j].peripheral {
                    edges.push((pj + a, pj + b));
                }
            }
            for i in (j + 1)..r {
                // Peripheral a of block j links to the d consecutive (mod N_i^p) peripherals
                // starting at a*d; every peripheral of block i is then hit exactly d_ij times.
                let pi = graph.offsets[i] + sizes[i].central;
                let d = degree[j][i];
                for a in 0..sizes[j].peripheral {
                    for t in 0..d {
                        let b = (a * d + t) % sizes[i].peripheral;
                        edges.push((pj + a, pi + b));
                    }
                }
            }
        }
        drop(graph);
        graph = Self::from_edges(sizes, &edges)?;
        Ok(graph)
    }

    fn skeleton(sizes: &[BlockSize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(invalid_config("graph needs at least one block"));
        }
        for (j, s) in sizes.iter().enumerate() {
            if s.central == 0 || s.peripheral == 0 {
                return Err(invalid_config(format!(
                    "block {j} has {} central and {} peripheral nodes; both classes must be non-empty",
                    s.central, s.peripheral
                )));
            }
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut node_block = Vec::new();
        let mut node_class = Vec::new();
        let mut peripheral_index = Vec::new();
        let mut peripherals = Vec::new();
        let mut acc = 0usize;
        for (j, s) in sizes.iter().enumerate() {
            offsets.push(acc);
            for k in 0..s.total() {
                node_block.push(j as u32);
                if k < s.central {
                    node_class.push(NodeClass::Central);
                    peripheral_index.push(u32::MAX);
                } else {
                    node_class.push(NodeClass::Peripheral);
                    peripheral_index.push(peripherals.len() as u32);
                    peripherals.push(acc + k);
                }
            }
            acc += s.total();
        }
        offsets.push(acc);
        let p = peripherals.len();
        Ok(Self {
            sizes: sizes.to_vec(),
            offsets,
            node_block,
            node_class,
            peripheral_index,
            peripherals,
            neighbors: vec![Vec::new(); p],
            cross_counts: vec![0; p * sizes.len()],
        })
    }

    fn finish(&mut self) -> Result<()> {
        let r = self.sizes.len();
        for (p, &node) in self.peripherals.iter().enumerate() {
            let j = self.node_block[node] as usize;
            let row = &mut self.cross_counts[p * r..(p + 1) * r];
            row.fill(0);
            for &m in &self.neighbors[p] {
                row[self.node_block[m] as usize] += 1;
            }
            // Clique property: M_j^n + 1 = N_j^p.
            if row[j] + 1 != self.sizes[j].peripheral {
                return Err(invalid_config(format!(
                    "peripheral node {node} of block {j} is linked to {} of the other {} peripherals of its block",
                    row[j],
                    self.sizes[j].peripheral - 1
                )));
            }
        }
        Ok(())
    }

    pub fn block_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn block_sizes(&self) -> &[BlockSize] {
        &self.sizes
    }

    pub fn block_size(&self, block: usize) -> BlockSize {
        self.sizes[block]
    }

    pub fn node_count(&self) -> usize {
        self.node_block.len()
    }

    pub fn peripheral_count(&self) -> usize {
        self.peripherals.len()
    }

    pub fn peripherals(&self) -> &[usize] {
        &self.peripherals
    }

    pub fn block_of(&self, node: usize) -> usize {
        self.node_block[node] as usize
    }

    pub fn class_of(&self, node: usize) -> NodeClass {
        self.node_class[node]
    }

    /// Size of the class `(block, class)`.
    pub fn class_size(&self, block: usize, class: NodeClass) -> usize {
        self.sizes[block].of_class(class)
    }

    /// Global ids of the nodes in `(block, class)`.
    pub fn class_nodes(&self, block: usize, class: NodeClass) -> std::ops::Range<usize> {
        let start = self.offsets[block];
        let c = self.sizes[block].central;
        match class {
            NodeClass::Central => start..start + c,
            NodeClass::Peripheral => start + c..self.offsets[block + 1],
        }
    }

    /// First node of `(block, class)`.
    pub fn first_node(&self, block: usize, class: NodeClass) -> usize {
        self.class_nodes(block, class).start
    }

    /// Dense index of a peripheral node among all peripherals.
    pub fn peripheral_slot(&self, node: usize) -> Option<usize> {
        match self.peripheral_index[node] {
            u32::MAX => None,
            p => Some(p as usize),
        }
    }

    /// Peripheral neighbours of a peripheral node; empty for central nodes.
    pub fn peripheral_neighbors(&self, node: usize) -> &[usize] {
        match self.peripheral_slot(node) {
            Some(p) => &self.neighbors[p],
            None => &[],
        }
    }

    /// `M_i^n` for every block `i`; `None` for central nodes.
    pub fn cross_counts(&self, node: usize) -> Option<&[usize]> {
        let r = self.sizes.len();
        self.peripheral_slot(node)
            .map(|p| &self.cross_counts[p * r..(p + 1) * r])
    }

    pub fn degree(&self, node: usize) -> usize {
        let j = self.block_of(node);
        let own = self.sizes[j].total() - 1;
        match self.cross_counts(node) {
            None => own,
            Some(m) => own + m.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &c)| c).sum::<usize>(),
        }
    }

    /// True if every pair of peripheral nodes is adjacent.
    pub fn is_complete_peripheral(&self) -> bool {
        let p = self.peripherals.len();
        self.neighbors.iter().all(|l| l.len() + 1 == p)
    }

    /// All undirected peripheral edges, smaller id first, sorted lexicographically.
    pub fn peripheral_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (p, &a) in self.peripherals.iter().enumerate() {
            for &b in &self.neighbors[p] {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Whether two distinct nodes are adjacent.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        if a == b {
            return false;
        }
        if self.block_of(a) == self.block_of(b) {
            return true;
        }
        self.peripheral_neighbors(a).binary_search(&b).is_ok()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GraphJson::from(self)).expect("graph serialisation cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: GraphJson =
            serde_json::from_str(text).map_err(|e| invalid_config(format!("graph JSON: {e}")))?;
        raw.into_graph()
    }
}

/// On-disk graph layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphJson {
    pub blocks: Vec<BlockSize>,
    pub peripheral_edges: Vec<[usize; 2]>,
}

impl From<&BlockGraph> for GraphJson {
    fn from(g: &BlockGraph) -> Self {
        Self {
            blocks: g.sizes.clone(),
            peripheral_edges: g.peripheral_edges().into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }
}

impl GraphJson {
    pub fn into_graph(self) -> Result<BlockGraph> {
        let edges: Vec<(usize, usize)> = self.peripheral_edges.iter().map(|e| (e[0], e[1])).collect();
        BlockGraph::from_edges(&self.blocks, &edges)
    }
}

/// `(N_j^c/(deg(n)+1), M_1^n/(deg(n)+1), ..., N_j^p/(deg(n)+1), ..., M_r^n/(deg(n)+1))`.
///
/// The last entry is `1 - (sum of the others)` so that the weights sum to one exactly.
pub fn neighborhood_proportions(graph: &BlockGraph, node: usize) -> Result<NeighborhoodProportions> {
    let counts = graph.cross_counts(node).ok_or(Error::WrongClass {
        node,
        expected: NodeClass::Peripheral.name(),
        actual: NodeClass::Central.name(),
    })?;
    let j = graph.block_of(node);
    let r = graph.block_count();
    let denom = (graph.degree(node) + 1) as f64;
    let central = graph.sizes[j].central as f64 / denom;
    let mut peripheral: Vec<f64> = (0..r)
        .map(|i| {
            let m = if i == j { graph.sizes[j].peripheral } else { counts[i] };
            m as f64 / denom
        })
        .collect();
    let head: f64 = std::iter::once(central)
        .chain(peripheral[..r - 1].iter().copied())
        .fold(0.0, |acc, x| acc + x);
    peripheral[r - 1] = 1.0 - head;
    Ok(NeighborhoodProportions { central, peripheral })
}

/// Limiting proportions the network is assumed to approach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProportionTargets {
    /// Limit of `N_j^c / N_j`.
    pub p_c: Vec<f64>,
    /// Limit of `N_j^p / N_j`.
    pub p_p: Vec<f64>,
    /// Limit of `N_j^c / (deg(n)+1)` for peripheral `n` in block `j`.
    pub alpha_c: Vec<f64>,
    /// `q[j][i]`: limit of `M_i^n / (deg(n)+1)` (and `N_j^p/(deg(n)+1)` on the diagonal).
    pub q: Vec<Vec<f64>>,
    /// Limit of `N_j / N`.
    pub alpha: Vec<f64>,
}

impl ProportionTargets {
    pub fn block_count(&self) -> usize {
        self.p_c.len()
    }

    /// Check the structural constraints; errors name the offending block.
    pub fn validate(&self) -> Result<()> {
        let r = self.p_c.len();
        if r == 0 {
            return Err(invalid_config("targets: no blocks"));
        }
        if self.p_p.len() != r || self.alpha_c.len() != r || self.alpha.len() != r || self.q.len() != r {
            return Err(invalid_config(format!("targets: every table must have {r} rows")));
        }
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        for j in 0..r {
            if self.q[j].len() != r {
                return Err(invalid_config(format!("targets: block {j}: q row must have {r} entries")));
            }
            let (pc, pp) = (self.p_c[j], self.p_p[j]);
            if !open_unit(pc) || !open_unit(pp) {
                return Err(invalid_config(format!(
                    "targets: block {j}: p_c = {pc}, p_p = {pp} must lie in (0,1)"
                )));
            }
            if (pc + pp - 1.0).abs() > PROPORTION_TOL {
                return Err(invalid_config(format!(
                    "targets: block {j}: p_c + p_p = {} (must equal 1)",
                    pc + pp
                )));
            }
            if !open_unit(self.alpha_c[j]) || self.q[j].iter().any(|&x| !open_unit(x)) {
                return Err(invalid_config(format!(
                    "targets: block {j}: alpha_c and q entries must lie in (0,1)"
                )));
            }
            let s = self.alpha_c[j] + self.q[j].iter().sum::<f64>();
            if (s - 1.0).abs() > PROPORTION_TOL {
                return Err(invalid_config(format!(
                    "targets: block {j}: alpha_c + sum(q) = {s} (must equal 1)"
                )));
            }
            // A single block necessarily carries all of the mass.
            let a = self.alpha[j];
            if !(a > 0.0 && a <= 1.0) || (r > 1 && a >= 1.0) {
                return Err(invalid_config(format!("targets: block {j}: alpha = {a} out of range")));
            }
        }
        let total: f64 = self.alpha.iter().sum();
        if (total - 1.0).abs() > PROPORTION_TOL {
            return Err(invalid_config(format!("targets: sum(alpha) = {total} (must equal 1)")));
        }
        Ok(())
    }

    /// Finite-N ratios of a graph. Peripheral ratios are read off the first
    /// peripheral node of each block, which is exact for complete and regular designs.
    pub fn from_graph(graph: &BlockGraph) -> Self {
        let r = graph.block_count();
        let n = graph.node_count() as f64;
        let mut t = ProportionTargets {
            p_c: Vec::with_capacity(r),
            p_p: Vec::with_capacity(r),
            alpha_c: Vec::with_capacity(r),
            q: Vec::with_capacity(r),
            alpha: Vec::with_capacity(r),
        };
        for j in 0..r {
            let s = graph.block_size(j);
            let nj = s.total() as f64;
            t.p_c.push(s.central as f64 / nj);
            t.p_p.push(s.peripheral as f64 / nj);
            t.alpha.push(nj / n);
            let node = graph.first_node(j, NodeClass::Peripheral);
            let counts = graph.cross_counts(node).expect("peripheral node");
            let denom = (graph.degree(node) + 1) as f64;
            t.alpha_c.push(s.central as f64 / denom);
            t.q.push(
                (0..r)
                    .map(|i| if i == j { s.peripheral } else { counts[i] } as f64 / denom)
                    .collect(),
            );
        }
        t
    }

    /// Limits for a complete peripheral subgraph with block weights `alpha`
    /// and central fractions `p_c`.
    pub fn complete_limit(alpha: &[f64], p_c: &[f64]) -> Self {
        let r = alpha.len();
        let ones = vec![vec![1.0; r]; r];
        Self::regular_limit(alpha, p_c, &ones)
    }

    /// Limits for a regular design where a peripheral of block `j` sees a
    /// fraction `fractions[j][i]` of block `i`'s peripherals.
    pub fn regular_limit(alpha: &[f64], p_c: &[f64], fractions: &[Vec<f64>]) -> Self {
        let r = alpha.len();
        let p_p: Vec<f64> = p_c.iter().map(|x| 1.0 - x).collect();
        let mut alpha_c = Vec::with_capacity(r);
        let mut q = Vec::with_capacity(r);
        for j in 0..r {
            let weight = |i: usize| {
                if i == j {
                    p_p[j] * alpha[j]
                } else {
                    fractions[j][i] * p_p[i] * alpha[i]
                }
            };
            let denom = p_c[j] * alpha[j] + (0..r).map(weight).sum::<f64>();
            alpha_c.push(p_c[j] * alpha[j] / denom);
            q.push((0..r).map(|i| weight(i) / denom).collect());
        }
        Self {
            p_c: p_c.to_vec(),
            p_p,
            alpha_c,
            q,
            alpha: alpha.to_vec(),
        }
    }
}

/// Largest deviations of a graph's finite-N ratios from the targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityReport {
    /// `max |N_j^p/(deg(n)+1) - q_jj|`
    pub own_peripheral: f64,
    /// `max |N_j^c/(deg(n)+1) - alpha_j^c|`
    pub central: f64,
    /// `max |M_i^n/(deg(n)+1) - q_ji|`, `i != j`
    pub cross: f64,
    /// `max |N_j^c/N_j - p_j^c|`
    pub block_split: f64,
}

impl RegularityReport {
    pub fn max(&self) -> f64 {
        self.own_peripheral.max(self.central).max(self.cross).max(self.block_split)
    }
}

pub fn check_regularity(graph: &BlockGraph, targets: &ProportionTargets) -> Result<RegularityReport> {
    let r = graph.block_count();
    if targets.block_count() != r || targets.q.iter().any(|row| row.len() != r) {
        return Err(invalid_arg(format!(
            "targets describe {} blocks, graph has {r}",
            targets.block_count()
        )));
    }
    let mut rep = RegularityReport {
        own_peripheral: 0.0,
        central: 0.0,
        cross: 0.0,
        block_split: 0.0,
    };
    for j in 0..r {
        let s = graph.block_size(j);
        rep.block_split = rep
            .block_split
            .max((s.central as f64 / s.total() as f64 - targets.p_c[j]).abs());
    }
    for &node in graph.peripherals() {
        let j = graph.block_of(node);
        let counts = graph.cross_counts(node).expect("peripheral");
        let denom = (graph.degree(node) + 1) as f64;
        let s = graph.block_size(j);
        rep.own_peripheral = rep
            .own_peripheral
            .max((s.peripheral as f64 / denom - targets.q[j][j]).abs());
        rep.central = rep.central.max((s.central as f64 / denom - targets.alpha_c[j]).abs());
        for i in (0..r).filter(|&i| i != j) {
            rep.cross = rep.cross.max((counts[i] as f64 / denom - targets.q[j][i]).abs());
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sizes(v: &[(usize, usize)]) -> Vec<BlockSize> {
        v.iter().copied().map(BlockSize::from).collect()
    }

    fn brute_degree(g: &BlockGraph, node: usize) -> usize {
        (0..g.node_count()).filter(|&m| g.adjacent(node, m)).count()
    }

    #[test]
    fn four_block_example_has_seven_peripherals() {
        let g = BlockGraph::complete_peripheral(&sizes(&[(2, 2), (3, 1), (2, 2), (4, 2)])).unwrap();
        assert_eq!(g.node_count(), 18);
        assert_eq!(g.peripheral_count(), 7);
        // first peripheral of block 0: deg + 1 = 9, central share 2/9
        let node = g.first_node(0, NodeClass::Peripheral);
        assert_eq!(g.degree(node) + 1, 9);
        let props = neighborhood_proportions(&g, node).unwrap();
        assert_eq!(props.central, 2.0 / 9.0);
    }

    #[test]
    fn smallest_graph() {
        let g = BlockGraph::complete_peripheral(&sizes(&[(1, 1)])).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.degree(1), 1);
        let props = neighborhood_proportions(&g, 1).unwrap();
        assert_eq!(props.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn degree_counts_clique_plus_foreign_peripherals() {
        let g = BlockGraph::complete_peripheral(&sizes(&[(2, 2), (3, 1)])).unwrap();
        let node = g.first_node(0, NodeClass::Peripheral);
        assert_eq!(g.degree(node), 4);
        assert_eq!(brute_degree(&g, node), 4);
    }

    #[test]
    fn foreign_share_in_symmetric_complete_graph() {
        let g = BlockGraph::complete_peripheral(&sizes(&[(2, 2), (2, 2)])).unwrap();
        let props = neighborhood_proportions(&g, g.first_node(0, NodeClass::Peripheral)).unwrap();
        assert!((props.peripheral[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_class_is_rejected() {
        assert!(matches!(
            BlockGraph::complete_peripheral(&sizes(&[(2, 0)])),
            Err(Error::InvalidConfiguration(_))
        ));
        assert!(BlockGraph::complete_peripheral(&sizes(&[(0, 2), (1, 1)])).is_err());
    }

    #[test]
    fn central_node_has_no_peripheral_proportions() {
        let g = BlockGraph::complete_peripheral(&sizes(&[(1, 1)])).unwrap();
        assert!(matches!(neighborhood_proportions(&g, 0), Err(Error::WrongClass { .. })));
    }

    #[test]
    fn regular_with_full_fractions_equals_complete() {
        let s = sizes(&[(2, 3), (1, 3), (4, 3)]);
        let full = vec![vec![1.0; 3]; 3];
        let a = BlockGraph::regular_peripheral(&s, &full).unwrap();
        let b = BlockGraph::complete_peripheral(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn regular_half_fraction_links_two_of_four() {
        let s = sizes(&[(2, 4), (2, 4)]);
        let f = vec![vec![0.5; 2]; 2];
        let g = BlockGraph::regular_peripheral(&s, &f).unwrap();
        for &node in g.peripherals() {
            let j = g.block_of(node);
            assert_eq!(g.cross_counts(node).unwrap()[1 - j], 2);
        }
        assert!(!g.is_complete_peripheral());
    }

    #[test]
    fn regular_zero_fraction_is_rejected() {
        let s = sizes(&[(2, 4), (2, 4)]);
        let f = vec![vec![0.0; 2]; 2];
        assert!(BlockGraph::regular_peripheral(&s, &f).is_err());
    }

    #[test]
    fn regular_unbalanced_request_is_rejected() {
        let s = sizes(&[(2, 4), (2, 2)]);
        // block 0 wants 1 of 2, block 1 wants 4 of 4 -> 4*1 != 2*4
        let f = vec![vec![1.0, 0.5], vec![1.0, 1.0]];
        assert!(BlockGraph::regular_peripheral(&s, &f).is_err());
    }

    #[test]
    fn edges_touching_central_nodes_are_rejected() {
        let s = sizes(&[(1, 1), (1, 1)]);
        assert!(BlockGraph::from_edges(&s, &[(0, 3)]).is_err());
        assert!(BlockGraph::from_edges(&s, &[(1, 1)]).is_err());
        assert!(BlockGraph::from_edges(&s, &[(1, 3), (3, 1)]).is_err());
    }

    #[test]
    fn missing_intra_block_peripheral_link_breaks_clique() {
        let s = sizes(&[(1, 3)]);
        assert!(BlockGraph::from_edges(&s, &[(1, 2), (2, 3)]).is_err());
        assert!(BlockGraph::from_edges(&s, &[(1, 2), (2, 3), (1, 3)]).is_ok());
    }

    #[test]
    fn regularity_against_own_ratios_is_zero() {
        let g = BlockGraph::complete_peripheral(&sizes(&[(3, 2), (5, 4)])).unwrap();
        let rep = check_regularity(&g, &ProportionTargets::from_graph(&g)).unwrap();
        assert_eq!(rep.max(), 0.0);
        let reg = BlockGraph::regular_peripheral(&sizes(&[(3, 2), (5, 4)]), &vec![vec![1.0; 2]; 2]).unwrap();
        assert_eq!(check_regularity(&reg, &ProportionTargets::from_graph(&g)).unwrap().max(), 0.0);
    }

    #[test]
    fn regularity_against_doubled_graph() {
        // Doubling every class size keeps N_j^c/N_j but not the neighbourhood shares:
        // (1,1),(1,1) has deg+1 = 3, while (2,2),(2,2) has deg+1 = 6. Both give 1/3 per group.
        let small = BlockGraph::complete_peripheral(&sizes(&[(1, 1), (1, 1)])).unwrap();
        let big = BlockGraph::complete_peripheral(&sizes(&[(2, 2), (2, 2)])).unwrap();
        assert!(check_regularity(&small, &ProportionTargets::from_graph(&big)).unwrap().max() < 1e-15);
        // (3,1),(1,1): block-0 peripheral sees 3 + 1 + 1 = 5; doubled sees 6 + 2 + 2 = 10.
        let small = BlockGraph::complete_peripheral(&sizes(&[(3, 1), (1, 1)])).unwrap();
        let big = BlockGraph::complete_peripheral(&sizes(&[(6, 2), (2, 2)])).unwrap();
        let rep = check_regularity(&small, &ProportionTargets::from_graph(&big)).unwrap();
        // own peripheral share: small 1/5 vs big 2/10; block-1 peripheral: 1/3 vs 2/6.
        assert!(rep.max() < 1e-15);
    }

    #[test]
    fn regularity_residual_with_unequal_ratios() {
        // small (1,1),(1,1): block-0 peripheral sees deg+1 = 3: c 1/3, own 1/3, foreign 1/3
        // targets from (2,1),(2,1): deg+1 = 4: c 2/4, own 1/4, foreign 1/4; p_c 2/3 vs 1/2
        let small = BlockGraph::complete_peripheral(&sizes(&[(1, 1), (1, 1)])).unwrap();
        let other = BlockGraph::complete_peripheral(&sizes(&[(2, 1), (2, 1)])).unwrap();
        let rep = check_regularity(&small, &ProportionTargets::from_graph(&other)).unwrap();
        assert!((rep.central - (0.5 - 1.0 / 3.0)).abs() < 1e-15);
        assert!((rep.own_peripheral - (1.0 / 3.0 - 0.25)).abs() < 1e-15);
        assert!((rep.cross - (1.0 / 3.0 - 0.25)).abs() < 1e-15);
        assert!((rep.block_split - (2.0 / 3.0 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn complete_limit_targets_validate_and_match_finite_ratios() {
        let t = ProportionTargets::complete_limit(&[0.5, 0.5], &[0.5, 0.5]);
        t.validate().unwrap();
        let g = BlockGraph::complete_peripheral(&sizes(&[(10, 10), (10, 10)])).unwrap();
        assert!(check_regularity(&g, &t).unwrap().max() < 1e-15);
    }

    #[test]
    fn validate_names_block() {
        let mut t = ProportionTargets::complete_limit(&[0.5, 0.5], &[0.5, 0.5]);
        t.p_p[1] = 0.6;
        let msg = t.validate().unwrap_err().to_string();
        assert!(msg.contains("block 1"), "{msg}");
    }

    #[test]
    fn json_layout() {
        let g = BlockGraph::complete_peripheral(&sizes(&[(1, 1), (1, 1)])).unwrap();
        assert_eq!(
            g.to_json(),
            r#"{"blocks":[{"central":1,"peripheral":1},{"central":1,"peripheral":1}],"peripheral_edges":[[1,3]]}"#
        );
    }

    fn arb_graph() -> impl Strategy<Value = BlockGraph> {
        prop::collection::vec((1usize..4, 1usize..5), 1..4).prop_flat_map(|blocks| {
            let s: Vec<BlockSize> = blocks.iter().copied().map(BlockSize::from).collect();
            let g = BlockGraph::complete_peripheral(&s).unwrap();
            let cross: Vec<(usize, usize)> = g
                .peripheral_edges()
                .into_iter()
                .filter(|&(a, b)| g.block_of(a) != g.block_of(b))
                .collect();
            let intra: Vec<(usize, usize)> = g
                .peripheral_edges()
                .into_iter()
                .filter(|&(a, b)| g.block_of(a) == g.block_of(b))
                .collect();
            let n = cross.len();
            prop::collection::vec(any::<bool>(), n).prop_map(move |keep| {
                let mut edges = intra.clone();
                edges.extend(cross.iter().zip(&keep).filter(|(_, &k)| k).map(|(e, _)| *e));
                BlockGraph::from_edges(&s, &edges).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn json_round_trip(g in arb_graph()) {
            let text = g.to_json();
            let back = BlockGraph::from_json(&text).unwrap();
            prop_assert_eq!(&back, &g);
            prop_assert_eq!(back.to_json(), text);
        }

        #[test]
        fn degree_identity_and_clique(g in arb_graph()) {
            for &node in g.peripherals() {
                let j = g.block_of(node);
                let m = g.cross_counts(node).unwrap();
                prop_assert_eq!(m[j] + 1, g.block_size(j).peripheral);
                let foreign: usize = m.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, c)| c).sum();
                prop_assert_eq!(g.degree(node), g.block_size(j).total() - 1 + foreign);
                prop_assert_eq!(g.degree(node), brute_degree(&g, node));
            }
        }

        #[test]
        fn proportions_sum_to_one_exactly(g in arb_graph()) {
            for &node in g.peripherals() {
                let v = neighborhood_proportions(&g, node).unwrap().to_vec();
                let s = v.iter().fold(0.0, |a, x| a + x);
                prop_assert_eq!(s, 1.0);
            }
        }

        #[test]
        fn complete_graph_degree_formula(blocks in prop::collection::vec((1usize..5, 1usize..5), 1..5)) {
            let s: Vec<BlockSize> = blocks.iter().copied().map(BlockSize::from).collect();
            let g = BlockGraph::complete_peripheral(&s).unwrap();
            let total_p: usize = s.iter().map(|b| b.peripheral).sum();
            for &node in g.peripherals() {
                let j = g.block_of(node);
                prop_assert_eq!(g.degree(node) + 1, s[j].central + total_p);
            }
            let rep = check_regularity(&g, &ProportionTargets::from_graph(&g)).unwrap();
            prop_assert_eq!(rep.max(), 0.0);
        }
    }
}
