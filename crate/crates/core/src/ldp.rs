//! Large-deviation costs of mean-field paths and Girsanov log-densities of
//! single-particle paths.
//!
//! `tau(u) = e^u - u - 1` is the log-Laplace transform of a centered unit
//! Poisson variable and `tau_star` its convex conjugate. The cost of a path of
//! class laws is computed in two ways: from a rate family that drives it
//! (`legendre_cost`) and from the residual `mu' - A^* mu` through the local norm
//! `variational_norm`. The two agree when the family is a potential tilt
//! `l = lambda e^{Phi(z') - Phi(z)}` of the mean-field rates; otherwise the
//! variational form is the smaller one.

use rand::Rng;

use crate::error::{invalid_arg, Error, Result};
use crate::graph::{component_of, BlockSize, ProportionTargets};
use crate::meanfield::{component_rates, generators, ColorPath, FlowRates, MeanFieldFlow};
use crate::rates::{ColorGraph, RateModel};
use crate::rng::SimRng;

/// Rates below this value count as zero for the Legendre form.
pub const LAMBDA_FLOOR: f64 = 1e-12;
const MASS_TOL: f64 = 1e-10;
/// Residuals of a mass-conserving flow are re-centred when their sum is this small.
const RESIDUAL_MASS_TOL: f64 = 1e-9;
const NEWTON_GRAD_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 200;
/// Potentials this large only arise when the supremum is infinite.
const POTENTIAL_BLOWUP: f64 = 500.0;

pub fn tau(u: f64) -> f64 {
    u.exp_m1() - u
}

pub fn tau_star(u: f64) -> f64 {
    if u > -1.0 {
        if u == f64::INFINITY {
            return f64::INFINITY;
        }
        (u + 1.0) * u.ln_1p() - u
    } else if u == -1.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// `lambda * tau_star(l / lambda - 1)`, extended to `lambda = 0` by its limit.
fn edge_cost(l: f64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return if l <= 0.0 { 0.0 } else { f64::INFINITY };
    }
    if l == lambda {
        return 0.0;
    }
    if l == 0.0 {
        return lambda;
    }
    lambda * tau_star(l / lambda - 1.0)
}

/// Nonnegative per-edge rates for every component on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFamily {
    times: Vec<f64>,
    comps: usize,
    m: usize,
    /// `data[(i * comps + c) * m + e]`
    data: Vec<f64>,
}

impl RateFamily {
    pub fn new(times: Vec<f64>, comps: usize, edges: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != times.len() * comps * edges {
            return Err(invalid_arg(format!(
                "rate family has {} entries, expected {}",
                data.len(),
                times.len() * comps * edges
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid_arg(format!("rate family entry {v} is not a finite nonnegative number")));
        }
        Ok(Self { times, comps, m: edges, data })
    }

    /// Build entry by entry from `f(grid index, component, edge)`.
    pub fn from_fn(times: Vec<f64>, comps: usize, edges: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(times.len() * comps * edges);
        for i in 0..times.len() {
            for c in 0..comps {
                for e in 0..edges {
                    data.push(f(i, c, e));
                }
            }
        }
        Self::new(times, comps, edges, data)
    }

    /// The rates the flow itself induces.
    pub fn mean_field(model: &RateModel, targets: &ProportionTargets, flow: &MeanFieldFlow) -> Self {
        let rates = FlowRates::new(model, targets, flow);
        let comps = flow.components();
        let m = rates.edge_count();
        let mut data = Vec::with_capacity(flow.len() * comps * m);
        for i in 0..flow.len() {
            for c in 0..comps {
                data.extend_from_slice(rates.at_grid(i, c));
            }
        }
        Self {
            times: flow.times().to_vec(),
            comps,
            m,
            data,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn components(&self) -> usize {
        self.comps
    }

    pub fn edge_count(&self) -> usize {
        self.m
    }

    pub fn at(&self, i: usize, comp: usize) -> &[f64] {
        let at = (i * self.comps + comp) * self.m;
        &self.data[at..at + self.m]
    }
}

/// A path cost with its breakdown by component and grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationCost {
    pub times: Vec<f64>,
    /// `integrands[comp][i]`; component `2j` is central, `2j + 1` peripheral.
    pub integrands: Vec<Vec<f64>>,
    pub integrals: Vec<f64>,
    /// `alpha_j p_j^c` and `alpha_j p_j^p`.
    pub weights: Vec<f64>,
    pub total: f64,
}

fn class_weights(targets: &ProportionTargets) -> Vec<f64> {
    (0..2 * targets.block_count())
        .map(|c| {
            let (j, class) = component_of(c);
            targets.alpha[j] * [targets.p_c[j], targets.p_p[j]][class.index()]
        })
        .collect()
}

fn trapezoid(times: &[f64], f: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(f.windows(2))
        .map(|(t, v)| {
            if v[0] == 0.0 && v[1] == 0.0 {
                0.0
            } else {
                0.5 * (t[1] - t[0]) * (v[0] + v[1])
            }
        })
        .sum()
}

fn assemble(times: &[f64], integrands: Vec<Vec<f64>>, weights: Vec<f64>) -> DeviationCost {
    let integrals: Vec<f64> = integrands.iter().map(|f| trapezoid(times, f)).collect();
    let total = weights
        .iter()
        .zip(&integrals)
        .map(|(w, s)| if *w == 0.0 { 0.0 } else { w * s })
        .sum();
    DeviationCost {
        times: times.to_vec(),
        integrands,
        integrals,
        weights,
        total,
    }
}

fn same_grid(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
}

/// Cost of the flow when it is driven by the rate family `family`.
pub fn legendre_cost(
    flow: &MeanFieldFlow,
    targets: &ProportionTargets,
    model: &RateModel,
    family: &RateFamily,
) -> Result<DeviationCost> {
    targets.validate()?;
    model.check_blocks(targets.block_count())?;
    let comps = flow.components();
    if flow.block_count() != targets.block_count() || family.components() != comps {
        return Err(invalid_arg("flow, targets and rate family disagree on the number of blocks"));
    }
    if !same_grid(flow.times(), family.times()) {
        return Err(invalid_arg("rate family and flow are on different grids"));
    }
    let g = model.color_graph();
    if family.edge_count() != g.edge_count() {
        return Err(invalid_arg("rate family and model have different edge sets"));
    }
    let mut lambda = vec![0.0; g.edge_count()];
    let mut integrands = vec![vec![0.0; flow.len()]; comps];
    for i in 0..flow.len() {
        let y = flow.state(i);
        for (c, integrand) in integrands.iter_mut().enumerate() {
            component_rates(model, targets, y, c, &mut lambda);
            let mu = flow.raw(i, c);
            let l = family.at(i, c);
            let mut sum = 0.0;
            for (e, &(z, _)) in g.edges().iter().enumerate() {
                let mass = mu[z].max(0.0);
                if mass == 0.0 {
                    continue;
                }
                if lambda[e] < LAMBDA_FLOOR {
                    let (j, class) = component_of(c);
                    return Err(Error::AssumptionViolation(format!(
                        "rate {:e} on edge {:?} of block {j} ({}) at t = {} is below the floor {LAMBDA_FLOOR:e}",
                        lambda[e],
                        g.edge(e),
                        class.name(),
                        flow.times()[i]
                    )));
                }
                sum += mass * edge_cost(l[e], lambda[e]);
            }
            integrand[i] = sum;
        }
    }
    Ok(assemble(flow.times(), integrands, class_weights(targets)))
}

/// `sup_Phi { sum theta Phi - sum_e tau(Phi(z') - Phi(z)) mu(z) lambda_e }`.
///
/// Solved by damped Newton with one potential pinned to zero in every connected
/// piece of the graph of charged edges. `+inf` when some piece carries net mass
/// or the maximiser runs off to infinity.
pub fn variational_norm(theta: &[f64], mu: &[f64], lambda: &[f64], graph: &ColorGraph) -> Result<f64> {
    let k = graph.colors();
    if theta.len() != k || mu.len() != k || lambda.len() != graph.edge_count() {
        return Err(invalid_arg("variational norm: dimensions do not match the color graph"));
    }
    if theta.iter().chain(mu).chain(lambda).any(|v| !v.is_finite()) {
        return Err(invalid_arg("variational norm: non-finite input"));
    }
    if theta.iter().sum::<f64>().abs() > MASS_TOL {
        return Ok(f64::INFINITY);
    }
    let edges: Vec<(usize, usize, f64)> = graph
        .edges()
        .iter()
        .zip(lambda)
        .map(|(&(z, w), &l)| (z, w, mu[z].max(0.0) * l.max(0.0)))
        .filter(|e| e.2 > 0.0)
        .collect();

    // Connected pieces of the charged edges; the smallest color of each piece is pinned.
    let mut root: Vec<usize> = (0..k).collect();
    fn find(root: &mut [usize], mut x: usize) -> usize {
        while root[x] != x {
            root[x] = root[root[x]];
            x = root[x];
        }
        x
    }
    for &(z, w, _) in &edges {
        let (a, b) = (find(&mut root, z), find(&mut root, w));
        root[a.max(b)] = a.min(b);
    }
    let piece: Vec<usize> = (0..k).map(|z| find(&mut root, z)).collect();
    let mut net = vec![0.0; k];
    for z in 0..k {
        net[piece[z]] += theta[z];
    }
    if net.iter().any(|v| v.abs() > MASS_TOL) {
        return Ok(f64::INFINITY);
    }
    let free: Vec<usize> = (0..k).filter(|&z| piece[z] != z).collect();
    if free.is_empty() {
        return Ok(0.0);
    }
    let mut slot = vec![usize::MAX; k];
    for (s, &z) in free.iter().enumerate() {
        slot[z] = s;
    }
    let objective = |phi: &[f64]| -> f64 {
        let gain: f64 = theta.iter().zip(phi).map(|(a, b)| a * b).sum();
        gain - edges.iter().map(|&(z, w, c)| c * tau(phi[w] - phi[z])).sum::<f64>()
    };
    let n = free.len();
    let mut phi = vec![0.0f64; k];
    let mut value = 0.0f64;
    let mut grad = vec![0.0; k];
    let mut hess = vec![0.0; n * n];
    let mut trial = vec![0.0; k];
    for _ in 0..NEWTON_MAX_ITER {
        grad.copy_from_slice(theta);
        hess.fill(0.0);
        for &(z, w, c) in &edges {
            let u = phi[w] - phi[z];
            let slope = c * u.exp_m1();
            grad[w] -= slope;
            grad[z] += slope;
            let curv = c * u.exp();
            let (sz, sw) = (slot[z], slot[w]);
            if sz != usize::MAX {
                hess[sz * n + sz] += curv;
            }
            if sw != usize::MAX {
                hess[sw * n + sw] += curv;
            }
            if sz != usize::MAX && sw != usize::MAX {
                hess[sz * n + sw] -= curv;
                hess[sw * n + sz] -= curv;
            }
        }
        let g: Vec<f64> = free.iter().map(|&z| grad[z]).collect();
        if g.iter().all(|v| v.abs() < NEWTON_GRAD_TOL) {
            return Ok(value.max(0.0));
        }
        let d = cholesky_solve(&mut hess, n, &g)
            .ok_or_else(|| Error::Numerical("variational norm: singular Hessian".into()))?;
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if slope < 1e-24 {
            // The remaining gain is below roundoff of the objective.
            return Ok(value.max(0.0));
        }
        // Inside the quadratic regime the objective cannot resolve the gain, so take full steps.
        let mut t = 1.0;
        loop {
            trial.copy_from_slice(&phi);
            for (s, &z) in free.iter().enumerate() {
                trial[z] += t * d[s];
            }
            let v = objective(&trial);
            if slope < 1e-12 || v >= value + 1e-4 * t * slope || t < 1e-10 {
                value = v;
                break;
            }
            t *= 0.5;
        }
        std::mem::swap(&mut phi, &mut trial);
        if phi.iter().any(|p| p.abs() > POTENTIAL_BLOWUP) || value.is_infinite() {
            return Ok(f64::INFINITY);
        }
        if !value.is_finite() {
            return Err(Error::Numerical("variational norm: objective is not finite".into()));
        }
    }
    Err(Error::Numerical(format!(
        "variational norm: Newton did not converge in {NEWTON_MAX_ITER} iterations (gradient {:e})",
        free.iter().map(|&z| grad[z].abs()).fold(0.0, f64::max)
    )))
}

/// Solve `a x = b` for symmetric positive definite `a` (overwritten by its factor).
fn cholesky_solve(a: &mut [f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= a[j * n + p] * a[j * n + p];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= a[i * n + p] * a[j * n + p];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut x = b.to_vec();
    for i in 0..n {
        for p in 0..i {
            x[i] -= a[i * n + p] * x[p];
        }
        x[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for p in i + 1..n {
            x[i] -= a[p * n + i] * x[p];
        }
        x[i] /= a[i * n + i];
    }
    Some(x)
}

/// Three-point derivative of the flow at grid index `i`, one-sided at the ends.
fn time_derivative(flow: &MeanFieldFlow, i: usize, comp: usize) -> Vec<f64> {
    let t = flow.times();
    let n = t.len();
    let k = flow.colors();
    if n < 2 {
        return vec![0.0; k];
    }
    if n == 2 {
        let h = t[1] - t[0];
        let (a, b) = (flow.raw(0, comp), flow.raw(1, comp));
        return (0..k).map(|z| (b[z] - a[z]) / h).collect();
    }
    let c = i.clamp(1, n - 2);
    let (x0, x1, x2) = (t[c - 1], t[c], t[c + 1]);
    let x = t[i];
    // Derivatives of the Lagrange basis through (x0, x1, x2) evaluated at x.
    let w0 = (2.0 * x - x1 - x2) / ((x0 - x1) * (x0 - x2));
    let w1 = (2.0 * x - x0 - x2) / ((x1 - x0) * (x1 - x2));
    let w2 = (2.0 * x - x0 - x1) / ((x2 - x0) * (x2 - x1));
    let (a, b, d) = (flow.raw(c - 1, comp), flow.raw(c, comp), flow.raw(c + 1, comp));
    (0..k).map(|z| w0 * a[z] + w1 * b[z] + w2 * d[z]).collect()
}

/// `mu'(t) - A^*_{mu(t)} mu(t)` for every component at grid index `i`.
pub fn flow_residual(flow: &MeanFieldFlow, targets: &ProportionTargets, model: &RateModel, i: usize) -> Vec<Vec<f64>> {
    let gens = generators(model, targets, flow.state(i));
    gens.iter()
        .enumerate()
        .map(|(c, a)| {
            let drift = a.adjoint_apply(flow.raw(i, c));
            time_derivative(flow, i, c).iter().zip(&drift).map(|(d, f)| d - f).collect()
        })
        .collect()
}

/// Cost of the flow through the local norm of its residual.
pub fn variational_cost(flow: &MeanFieldFlow, targets: &ProportionTargets, model: &RateModel) -> Result<DeviationCost> {
    targets.validate()?;
    model.check_blocks(targets.block_count())?;
    if flow.block_count() != targets.block_count() {
        return Err(invalid_arg("flow and targets disagree on the number of blocks"));
    }
    let g = model.color_graph();
    let comps = flow.components();
    let mut lambda = vec![0.0; g.edge_count()];
    let mut integrands = vec![vec![0.0; flow.len()]; comps];
    for i in 0..flow.len() {
        let residual = flow_residual(flow, targets, model, i);
        for (c, mut theta) in residual.into_iter().enumerate() {
            let mass: f64 = theta.iter().sum();
            if mass.abs() <= RESIDUAL_MASS_TOL {
                let shift = mass / theta.len() as f64;
                theta.iter_mut().for_each(|v| *v -= shift);
            }
            component_rates(model, targets, flow.state(i), c, &mut lambda);
            integrands[c][i] = variational_norm(&theta, flow.raw(i, c), &lambda, g)?;
        }
    }
    Ok(assemble(flow.times(), integrands, class_weights(targets)))
}

/// `int_a^b sum_{e in edges} rate_e(t) dt` for rates linear between grid points.
fn integrate_rates(rates: &FlowRates, comp: usize, edges: &[usize], a: f64, b: f64) -> f64 {
    if b <= a || edges.is_empty() {
        return 0.0;
    }
    let sum = |t: f64| edges.iter().map(|&e| rates.rate(comp, e, t)).sum::<f64>();
    let grid = rates.times();
    let lo = grid.partition_point(|&s| s <= a);
    let hi = grid.partition_point(|&s| s < b);
    let mut total = 0.0;
    let mut left = a;
    let mut f_left = sum(a);
    for &s in &grid[lo..hi] {
        let f = sum(s);
        total += 0.5 * (s - left) * (f_left + f);
        left = s;
        f_left = f;
    }
    total + 0.5 * (b - left) * (f_left + sum(b))
}

/// Log-density of the law of component `comp` under the flow's rates with respect to
/// the reference process that jumps along every edge at unit rate.
///
/// Returns `-inf` when the path uses an edge whose rate vanishes at the jump time.
pub fn girsanov_log_density(path: &ColorPath, rates: &FlowRates, model: &RateModel, comp: usize) -> Result<f64> {
    let g = model.color_graph();
    let grid_end = *rates.times().last().ok_or_else(|| invalid_arg("empty rate grid"))?;
    if path.horizon > grid_end * (1.0 + 1e-12) + 1e-12 {
        return Err(invalid_arg(format!(
            "path horizon {} exceeds the rate grid ending at {grid_end}",
            path.horizon
        )));
    }
    let mut h = 0.0;
    let mut z = path.initial;
    let mut t = 0.0;
    for &(s, w) in &path.jumps {
        let out = g.out_edges(z);
        h -= integrate_rates(rates, comp, out, t, s) - out.len() as f64 * (s - t);
        let e = g.edge_index(z, w).ok_or(Error::UnknownEdge { from: z, to: w })?;
        let lam = rates.rate(comp, e, s);
        if lam <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        h += lam.ln();
        z = w;
        t = s;
    }
    let out = g.out_edges(z);
    h -= integrate_rates(rates, comp, out, t, path.horizon) - out.len() as f64 * (path.horizon - t);
    Ok(h)
}

/// Path of the reference process: every edge fires at unit rate.
pub fn sample_reference_path(graph: &ColorGraph, initial: usize, horizon: f64, rng: &mut SimRng) -> ColorPath {
    let mut z = initial;
    let mut t = 0.0f64;
    let mut jumps = Vec::new();
    loop {
        let out = graph.out_edges(z);
        if out.is_empty() {
            break;
        }
        let u: f64 = rng.random();
        t -= (1.0 - u).ln() / out.len() as f64;
        if t > horizon {
            break;
        }
        if jumps.last().is_some_and(|&(s, _)| t <= s) {
            t = t.next_up();
        }
        z = graph.edge(out[rng.random_range(0..out.len())]).1;
        jumps.push((t, z));
    }
    ColorPath {
        initial,
        jumps,
        horizon,
    }
}

/// Class-size weighted average of the log-densities of sampled paths.
///
/// `samples[comp]` holds the paths of component `comp`, which carries weight
/// `N_j^c / N` or `N_j^p / N`.
pub fn h_functional(samples: &[Vec<ColorPath>], rates: &FlowRates, model: &RateModel, sizes: &[BlockSize]) -> Result<f64> {
    if samples.len() != 2 * sizes.len() {
        return Err(invalid_arg(format!(
            "{} path sets for {} components",
            samples.len(),
            2 * sizes.len()
        )));
    }
    let n: usize = sizes.iter().map(BlockSize::total).sum();
    let mut h = 0.0;
    for (c, paths) in samples.iter().enumerate() {
        if paths.is_empty() {
            return Err(invalid_arg(format!("no paths for component {c}")));
        }
        let (j, class) = component_of(c);
        let weight = sizes[j].of_class(class) as f64 / n as f64;
        let mut sum = 0.0;
        for p in paths {
            sum += girsanov_log_density(p, rates, model, c)?;
        }
        h += weight * sum / paths.len() as f64;
    }
    Ok(h)
}
