//! Monte Carlo experiments: law of large numbers for the empirical process and
//! asymptotic independence of tagged particles.
//!
//! Replicas run in parallel on the current rayon pool. Each replica owns the
//! stream `replica_rng(seed, arm, replica)` and results are collected in replica
//! order, so every statistic is independent of the thread count.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid_arg, invalid_config, Result};
use crate::graph::{BlockGraph, BlockSize, NodeClass, ProportionTargets};
use crate::meanfield::{solve_mckean_vlasov, MeanFieldFlow};
use crate::metrics::{d_bl, total_variation};
use crate::particle::{empirical_process, sample_initial_state, simulate_with_rng};
use crate::rates::{Measure, RateModel};
use crate::rng::{replica_rng, substream};

const REALIZABILITY_TOL: f64 = 1e-9;
const BOOTSTRAP_RESAMPLES: usize = 200;
/// Stream id reserved for bootstrap resampling, far from replica streams.
const BOOTSTRAP_STREAM: u64 = u64::MAX;

/// A sequence of graphs with fixed proportions, indexed by total size `N`.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphFamily {
    CompletePeripheral {
        block_fractions: Vec<f64>,
        central_fractions: Vec<f64>,
    },
    RegularPeripheral {
        block_fractions: Vec<f64>,
        central_fractions: Vec<f64>,
        /// `fractions[j][i]`: share of block `i`'s peripherals linked to each peripheral of block `j`.
        fractions: Vec<Vec<f64>>,
    },
}

fn exact_count(x: f64, what: impl FnOnce() -> String) -> Result<usize> {
    let rounded = x.round();
    if (x - rounded).abs() > REALIZABILITY_TOL * x.abs().max(1.0) || rounded < 1.0 {
        return Err(invalid_config(format!("{} = {x} is not a positive integer", what())));
    }
    Ok(rounded as usize)
}

impl GraphFamily {
    fn fractions(&self) -> (&[f64], &[f64]) {
        match self {
            GraphFamily::CompletePeripheral {
                block_fractions,
                central_fractions,
            }
            | GraphFamily::RegularPeripheral {
                block_fractions,
                central_fractions,
                ..
            } => (block_fractions, central_fractions),
        }
    }

    pub fn block_count(&self) -> usize {
        self.fractions().0.len()
    }

    /// Block sizes for total size `n`; every count must come out integral.
    pub fn sizes(&self, n: usize) -> Result<Vec<BlockSize>> {
        let (alpha, p_c) = self.fractions();
        if alpha.len() != p_c.len() || alpha.is_empty() {
            return Err(invalid_config("family needs matching block and central fractions"));
        }
        let mut sizes = Vec::with_capacity(alpha.len());
        for (j, (&a, &pc)) in alpha.iter().zip(p_c).enumerate() {
            let nj = exact_count(a * n as f64, || format!("N = {n}: block {j} size"))?;
            let nc = exact_count(pc * nj as f64, || format!("N = {n}: block {j} central count"))?;
            if nc >= nj {
                return Err(invalid_config(format!("N = {n}: block {j} has no peripheral nodes")));
            }
            sizes.push(BlockSize::new(nc, nj - nc));
        }
        let total: usize = sizes.iter().map(BlockSize::total).sum();
        if total != n {
            return Err(invalid_config(format!("N = {n}: block sizes add up to {total}")));
        }
        Ok(sizes)
    }

    pub fn build(&self, n: usize) -> Result<BlockGraph> {
        let sizes = self.sizes(n)?;
        match self {
            GraphFamily::CompletePeripheral { .. } => BlockGraph::complete_peripheral(&sizes),
            GraphFamily::RegularPeripheral { fractions, .. } => BlockGraph::regular_peripheral(&sizes, fractions),
        }
    }

    /// Proportions the family approaches as `N` grows.
    pub fn limit_targets(&self) -> ProportionTargets {
        let (alpha, p_c) = self.fractions();
        match self {
            GraphFamily::CompletePeripheral { .. } => ProportionTargets::complete_limit(alpha, p_c),
            GraphFamily::RegularPeripheral { fractions, .. } => ProportionTargets::regular_limit(alpha, p_c, fractions),
        }
    }
}

/// Sample mean and standard error (`sd / sqrt(n)`, unbiased variance).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub replicas: usize,
    /// Mean over replicas of the sup over the grid of the largest per-component distance.
    pub mean_dist: f64,
    pub stderr: f64,
    /// Mean over replicas of the sup-grid distance of each component.
    pub per_component: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
}

/// Settings shared by the scaling experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct LlnSettings {
    pub horizon: f64,
    /// Number of grid intervals on `[0, horizon]`.
    pub grid: usize,
    /// Step of the mean-field solver.
    pub dt: f64,
    pub n_list: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
}

/// Uniform observation grid with `intervals + 1` points on `[0, horizon]`.
pub fn observation_grid(horizon: f64, intervals: usize) -> Vec<f64> {
    let intervals = intervals.max(1);
    (0..=intervals)
        .map(|i| if i == intervals { horizon } else { horizon * i as f64 / intervals as f64 })
        .collect()
}

/// For every `N`, the distance between simulated empirical processes and the mean-field flow.
pub fn lln_experiment(
    family: &GraphFamily,
    model: &RateModel,
    targets: &ProportionTargets,
    init: &[Measure],
    settings: &LlnSettings,
) -> Result<ConvergenceReport> {
    let flow = solve_mckean_vlasov(model, targets, init, settings.horizon, settings.dt)?;
    lln_against_flow(family, model, init, &flow, settings)
}

/// As [`lln_experiment`] with a precomputed flow.
pub fn lln_against_flow(
    family: &GraphFamily,
    model: &RateModel,
    init: &[Measure],
    flow: &MeanFieldFlow,
    settings: &LlnSettings,
) -> Result<ConvergenceReport> {
    if settings.n_list.is_empty() || settings.n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid_arg("N list must be non-empty and strictly increasing"));
    }
    if settings.replicas == 0 {
        return Err(invalid_arg("at least one replica is required"));
    }
    let grid = observation_grid(settings.horizon, settings.grid);
    let comps = flow.components();
    let reference: Vec<Vec<Measure>> = grid
        .iter()
        .map(|&t| (0..comps).map(|c| flow.measure_at(t, c)).collect())
        .collect();
    let mut rows = Vec::with_capacity(settings.n_list.len());
    for (arm, &n) in settings.n_list.iter().enumerate() {
        let graph = family.build(n)?;
        let per_replica: Vec<Vec<f64>> = (0..settings.replicas)
            .into_par_iter()
            .map(|rep| -> Result<Vec<f64>> {
                let mut rng = replica_rng(settings.seed, arm as u64, rep as u64);
                let state = sample_initial_state(&graph, init, &mut rng)?;
                let traj = simulate_with_rng(&graph, model, &state, settings.horizon, &mut rng)?;
                let series = empirical_process(&traj, &graph, &grid)?;
                let mut sup = vec![0.0f64; comps];
                for (emp, limit) in series.iter().zip(&reference) {
                    for c in 0..comps {
                        sup[c] = sup[c].max(d_bl(&emp.components[c], &limit[c])?);
                    }
                }
                Ok(sup)
            })
            .collect::<Result<_>>()?;
        let worst: Vec<f64> = per_replica.iter().map(|s| s.iter().copied().fold(0.0, f64::max)).collect();
        let (mean_dist, stderr) = mean_and_stderr(&worst);
        let per_component = (0..comps)
            .map(|c| per_replica.iter().map(|s| s[c]).sum::<f64>() / settings.replicas as f64)
            .collect();
        rows.push(ConvergenceRow {
            n,
            replicas: settings.replicas,
            mean_dist,
            stderr,
            per_component,
        });
    }
    Ok(ConvergenceReport { rows })
}

/// First node of each requested (block, class).
pub fn default_tagged(graph: &BlockGraph, classes: &[(usize, NodeClass)]) -> Result<Vec<usize>> {
    classes
        .iter()
        .map(|&(j, c)| {
            if j >= graph.block_count() {
                return Err(invalid_arg(format!("block {j} does not exist")));
            }
            Ok(graph.first_node(j, c))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultichaosResult {
    /// Joint law of the tagged colors at the horizon; index `sum_i x_i K^i`.
    pub joint: Vec<f64>,
    /// Product of the estimated marginals, same indexing.
    pub product: Vec<f64>,
    pub tv: f64,
    /// Bootstrap standard error of `tv`.
    pub stderr: f64,
    pub replicas: usize,
}

/// Colors of the tagged nodes at the horizon in each replica.
pub fn tagged_final_colors(
    graph: &BlockGraph,
    model: &RateModel,
    init: &[Measure],
    tagged: &[usize],
    horizon: f64,
    replicas: usize,
    seed: u64,
    arm: u64,
) -> Result<Vec<Vec<usize>>> {
    if let Some(&n) = tagged.iter().find(|&&n| n >= graph.node_count()) {
        return Err(invalid_arg(format!("tagged node {n} does not exist")));
    }
    (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replica_rng(seed, arm, rep as u64);
            let state = sample_initial_state(graph, init, &mut rng)?;
            let traj = simulate_with_rng(graph, model, &state, horizon, &mut rng)?;
            let end = traj.final_state(graph);
            Ok(tagged.iter().map(|&n| end.color(n)).collect())
        })
        .collect()
}

fn joint_and_product(samples: &[Vec<usize>], idx: impl Iterator<Item = usize> + Clone, k: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let cells = k.pow(m as u32);
    let mut joint = vec![0.0; cells];
    let mut marg = vec![vec![0.0; k]; m];
    let mut count = 0usize;
    for s in idx {
        let x = &samples[s];
        let mut cell = 0;
        for i in (0..m).rev() {
            cell = cell * k + x[i];
            marg[i][x[i]] += 1.0;
        }
        joint[cell] += 1.0;
        count += 1;
    }
    let n = count as f64;
    joint.iter_mut().for_each(|v| *v /= n);
    marg.iter_mut().flatten().for_each(|v| *v /= n);
    let product = (0..cells)
        .map(|mut cell| {
            let mut p = 1.0;
            for mi in &marg {
                p *= mi[cell % k];
                cell /= k;
            }
            p
        })
        .collect();
    (joint, product)
}

/// Joint law of the tagged nodes at `horizon` against the product of its marginals.
pub fn multichaos_test(
    graph: &BlockGraph,
    model: &RateModel,
    init: &[Measure],
    tagged: &[usize],
    horizon: f64,
    replicas: usize,
    seed: u64,
    arm: u64,
) -> Result<MultichaosResult> {
    if tagged.is_empty() || tagged.len() > 3 {
        return Err(invalid_arg(format!("between 1 and 3 tagged nodes, got {}", tagged.len())));
    }
    if replicas < 2 {
        return Err(invalid_arg("at least two replicas are required"));
    }
    let k = model.colors();
    let m = tagged.len();
    let samples = tagged_final_colors(graph, model, init, tagged, horizon, replicas, seed, arm)?;
    let (joint, product) = joint_and_product(&samples, 0..replicas, k, m);
    let tv = total_variation(&joint, &product)?;
    let mut rng = substream(seed, BOOTSTRAP_STREAM - arm);
    let mut boot = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut pick = vec![0usize; replicas];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for p in pick.iter_mut() {
            *p = rng.random_range(0..replicas);
        }
        let (j, p) = joint_and_product(&samples, pick.iter().copied(), k, m);
        boot.push(total_variation(&j, &p)?);
    }
    let (_, se_of_mean) = mean_and_stderr(&boot);
    let stderr = se_of_mean * (BOOTSTRAP_RESAMPLES as f64).sqrt();
    Ok(MultichaosResult {
        joint,
        product,
        tv,
        stderr,
        replicas,
    })
}
