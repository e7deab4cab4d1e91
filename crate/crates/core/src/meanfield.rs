//! The mean-field limit: the coupled forward equations for the `2r` class laws,
//! the Picard scheme that builds the same flow from frozen-rate linear solves,
//! and exact sampling of a single limit particle.

use rand::Rng;

use crate::error::{invalid_arg, Error, Result};
use crate::graph::{component_of, NodeClass, ProportionTargets};
use crate::rates::{Measure, RateModel, RateSpec};
use crate::rng::SimRng;

/// `K x K` rate matrix: off-diagonal `A[z][z'] = lambda_{z,z'}`, rows sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    k: usize,
    a: Vec<f64>,
}

impl GeneratorMatrix {
    /// Build from per-edge rates of a color graph.
    pub fn from_rates(spec: &RateSpec, rates: &[f64]) -> Self {
        let k = spec.colors();
        let mut a = vec![0.0; k * k];
        for (e, &(z, w)) in spec.color_graph().edges().iter().enumerate() {
            a[z * k + w] = rates[e];
            a[z * k + z] -= rates[e];
        }
        Self { k, a }
    }

    pub fn colors(&self) -> usize {
        self.k
    }

    pub fn get(&self, z: usize, w: usize) -> f64 {
        self.a[z * self.k + w]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.a.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    /// `(A* mu)(w) = sum_z mu(z) A[z][w]`.
    pub fn adjoint_apply(&self, mu: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut out = vec![0.0; k];
        for z in 0..k {
            for w in 0..k {
                out[w] += mu[z] * self.a[z * k + w];
            }
        }
        out
    }

    /// `(A phi)(z) = sum_w A[z][w] phi(w)`.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        self.a.chunks(self.k).map(|row| row.iter().zip(phi).map(|(a, p)| a * p).sum()).collect()
    }
}

fn check_probability(name: &str, m: &[f64], k: usize) -> Result<()> {
    if m.len() != k {
        return Err(invalid_arg(format!("{name} has {} colors, expected {k}", m.len())));
    }
    Measure::probability(m.to_vec()).map(|_| ()).map_err(|e| invalid_arg(format!("{name}: {e}")))
}

/// Generator of a central node of a block whose classes have laws `mu_c`, `mu_p`.
pub fn generator_c(spec: &RateSpec, mu_c: &Measure, mu_p: &Measure, p_c: f64, p_p: f64) -> Result<GeneratorMatrix> {
    let k = spec.colors();
    check_probability("mu_c", mu_c, k)?;
    check_probability("mu_p", mu_p, k)?;
    let mut rates = Vec::with_capacity(spec.color_graph().edge_count());
    for &edge in spec.color_graph().edges() {
        rates.push(crate::rates::lambda_c(spec, mu_c, mu_p, p_c, p_p, edge)?);
    }
    Ok(GeneratorMatrix::from_rates(spec, &rates))
}

/// Generator of a peripheral node of block `j`; `mus[i]` is the peripheral law of block `i`
/// and `q_row[i]` its weight.
pub fn generator_p(spec: &RateSpec, mu_c: &Measure, mus: &[Measure], alpha_c: f64, q_row: &[f64]) -> Result<GeneratorMatrix> {
    let k = spec.colors();
    check_probability("mu_c", mu_c, k)?;
    for (i, m) in mus.iter().enumerate() {
        check_probability(&format!("mu_{i}^p"), m, k)?;
    }
    let mut rates = Vec::with_capacity(spec.color_graph().edge_count());
    for &edge in spec.color_graph().edges() {
        rates.push(crate::rates::lambda_p(spec, mu_c, mus, alpha_c, q_row, edge)?);
    }
    Ok(GeneratorMatrix::from_rates(spec, &rates))
}

/// Laws of the `2r` classes on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldFlow {
    times: Vec<f64>,
    blocks: usize,
    k: usize,
    /// `data[(i * 2r + comp) * k + z]`
    data: Vec<f64>,
}

impl MeanFieldFlow {
    /// Assemble a flow from grid times and the concatenated per-step states.
    pub fn from_parts(times: Vec<f64>, blocks: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if times.is_empty() || data.len() != times.len() * 2 * blocks * k {
            return Err(invalid_arg("flow data does not match its grid"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid_arg("flow grid must be strictly increasing"));
        }
        Ok(Self { times, blocks, k, data })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }

    pub fn block_count(&self) -> usize {
        self.blocks
    }

    pub fn components(&self) -> usize {
        2 * self.blocks
    }

    pub fn colors(&self) -> usize {
        self.k
    }

    /// Raw stored values at grid index `i`, all components.
    pub fn state(&self, i: usize) -> &[f64] {
        let w = 2 * self.blocks * self.k;
        &self.data[i * w..(i + 1) * w]
    }

    /// Raw stored law of `comp` at grid index `i`.
    pub fn raw(&self, i: usize, comp: usize) -> &[f64] {
        let at = (i * 2 * self.blocks + comp) * self.k;
        &self.data[at..at + self.k]
    }

    /// Law of `comp` at grid index `i` with tiny negative entries clipped to zero.
    pub fn measure(&self, i: usize, comp: usize) -> Measure {
        Measure::from_vec_unchecked(self.raw(i, comp).iter().map(|&x| x.max(0.0)).collect())
    }

    pub fn measure_of(&self, i: usize, block: usize, class: NodeClass) -> Measure {
        self.measure(i, crate::graph::component_index(block, class))
    }

    /// All components at grid index `i`.
    pub fn measures(&self, i: usize) -> Vec<Measure> {
        (0..self.components()).map(|c| self.measure(i, c)).collect()
    }

    /// Linear interpolation in time, clipped as in [`Self::measure`].
    pub fn measure_at(&self, t: f64, comp: usize) -> Measure {
        let (i, w) = self.locate(t);
        if w == 0.0 {
            return self.measure(i, comp);
        }
        let (a, b) = (self.raw(i, comp), self.raw(i + 1, comp));
        Measure::from_vec_unchecked(a.iter().zip(b).map(|(x, y)| ((1.0 - w) * x + w * y).max(0.0)).collect())
    }

    /// Grid interval containing `t` and the weight of its right end.
    pub(crate) fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return (0, 0.0);
        }
        if t >= self.times[n - 1] {
            return (n - 1, 0.0);
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        (i, w)
    }

    /// Sup over the grid of the largest per-component L1 distance.
    pub fn sup_distance(&self, other: &MeanFieldFlow) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "flows on different grids");
        self.data
            .chunks(self.k)
            .zip(other.data.chunks(self.k))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest `|mass - 1|` and smallest entry over the whole flow.
    pub fn conservation(&self) -> (f64, f64) {
        let mass = self
            .data
            .chunks(self.k)
            .map(|c| (c.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        let low = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        (mass, low)
    }
}

/// Default step `0.01 / max(1, gamma_bar)`.
pub fn default_dt(model: &RateModel) -> f64 {
    0.01 / model.gamma_bar().max(1.0)
}

/// Per-edge rates of component `comp` when the class laws are `y` (flattened, `2r x K`).
pub fn component_rates(model: &RateModel, targets: &ProportionTargets, y: &[f64], comp: usize, out: &mut [f64]) {
    let k = model.colors();
    let r = targets.block_count();
    let (j, class) = component_of(comp);
    let spec = model.spec(j, class);
    let nu = &y[2 * j * k..(2 * j + 1) * k];
    match class {
        NodeClass::Central => {
            let mu = &y[(2 * j + 1) * k..(2 * j + 2) * k];
            for (e, o) in out.iter_mut().enumerate() {
                *o = spec.central_rate(e, nu, mu, targets.p_c[j], targets.p_p[j]);
            }
        }
        NodeClass::Peripheral => {
            let mus: Vec<&[f64]> = (0..r).map(|i| &y[(2 * i + 1) * k..(2 * i + 2) * k]).collect();
            for (e, o) in out.iter_mut().enumerate() {
                *o = spec.peripheral_rate(e, nu, &mus, targets.alpha_c[j], &targets.q[j]);
            }
        }
    }
}

/// Generator matrices of every component when the class laws are `y`.
pub fn generators(model: &RateModel, targets: &ProportionTargets, y: &[f64]) -> Vec<GeneratorMatrix> {
    let m = model.color_graph().edge_count();
    let mut rates = vec![0.0; m];
    (0..2 * targets.block_count())
        .map(|c| {
            component_rates(model, targets, y, c, &mut rates);
            let (j, class) = component_of(c);
            GeneratorMatrix::from_rates(model.spec(j, class), &rates)
        })
        .collect()
}

fn check_setup(model: &RateModel, targets: &ProportionTargets, init: &[Measure], horizon: f64, dt: f64) -> Result<()> {
    targets.validate()?;
    let r = targets.block_count();
    model.check_blocks(r)?;
    if init.len() != 2 * r {
        return Err(invalid_arg(format!("{} initial measures for {} components", init.len(), 2 * r)));
    }
    for (c, m) in init.iter().enumerate() {
        check_probability(&format!("initial component {c}"), m, model.colors())?;
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid_arg(format!("dt = {dt} must be positive")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(invalid_arg(format!("horizon {horizon} must be finite and >= 0")));
    }
    Ok(())
}

/// Uniform grid on `[0, horizon]` whose step does not exceed `dt`.
pub fn time_grid(horizon: f64, dt: f64) -> Vec<f64> {
    let steps = (horizon / dt).ceil().max(if horizon > 0.0 { 1.0 } else { 0.0 }) as usize;
    if steps == 0 {
        return vec![0.0];
    }
    let h = horizon / steps as f64;
    (0..=steps).map(|i| if i == steps { horizon } else { i as f64 * h }).collect()
}

/// Fixed-step RK4 for `d/dt mu_c = A_c(t)^* mu_c`, where `rates(t, half, y, comp, out)` fills the
/// per-edge rates of component `comp` at time `t`. `half` indexes the half-step grid
/// (`2i` at grid point `i`, `2i+1` at the midpoint after it). After every step each
/// component's mass defect is removed from its largest entry.
pub fn integrate_forward<F>(
    model: &RateModel,
    init: &[Measure],
    horizon: f64,
    dt: f64,
    mut rates: F,
) -> Result<MeanFieldFlow>
where
    F: FnMut(f64, usize, &[f64], usize, &mut [f64]),
{
    let k = model.colors();
    let comps = init.len();
    let blocks = comps / 2;
    let g = model.color_graph();
    let m = g.edge_count();
    let times = time_grid(horizon, dt);
    let steps = times.len() - 1;
    let h = if steps > 0 { horizon / steps as f64 } else { 0.0 };
    let width = comps * k;
    let mut data = Vec::with_capacity(times.len() * width);
    let mut y: Vec<f64> = init.iter().flat_map(|m| m.iter().copied()).collect();
    data.extend_from_slice(&y);
    let mut lam = vec![0.0; m];
    let mut drift = |t: f64, half: usize, y: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for c in 0..comps {
            rates(t, half, y, c, &mut lam);
            let base = c * k;
            for (e, &(z, w)) in g.edges().iter().enumerate() {
                let flux = y[base + z] * lam[e];
                out[base + z] -= flux;
                out[base + w] += flux;
            }
        }
    };
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; width], vec![0.0; width], vec![0.0; width], vec![0.0; width]);
    let mut tmp = vec![0.0; width];
    for i in 0..steps {
        let t = times[i];
        drift(t, 2 * i, &y, &mut k1);
        for x in 0..width {
            tmp[x] = y[x] + 0.5 * h * k1[x];
        }
        drift(t + 0.5 * h, 2 * i + 1, &tmp, &mut k2);
        for x in 0..width {
            tmp[x] = y[x] + 0.5 * h * k2[x];
        }
        drift(t + 0.5 * h, 2 * i + 1, &tmp, &mut k3);
        for x in 0..width {
            tmp[x] = y[x] + h * k3[x];
        }
        drift(times[i + 1], 2 * i + 2, &tmp, &mut k4);
        for x in 0..width {
            y[x] += h / 6.0 * (k1[x] + 2.0 * k2[x] + 2.0 * k3[x] + k4[x]);
        }
        for c in y.chunks_mut(k) {
            let defect = c.iter().sum::<f64>() - 1.0;
            let top = (0..k).fold(0, |b, z| if c[z] > c[b] { z } else { b });
            c[top] -= defect;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup { time: times[i + 1] });
        }
        data.extend_from_slice(&y);
    }
    MeanFieldFlow::from_parts(times, blocks, k, data)
}

/// Solve the mean-field equations from `init` with step at most `dt`.
pub fn solve_mckean_vlasov(
    model: &RateModel,
    targets: &ProportionTargets,
    init: &[Measure],
    horizon: f64,
    dt: f64,
) -> Result<MeanFieldFlow> {
    check_setup(model, targets, init, horizon, dt)?;
    integrate_forward(model, init, horizon, dt, |_, _, y, c, out| component_rates(model, targets, y, c, out))
}

/// Rates of every component along a flow, on its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRates {
    times: Vec<f64>,
    comps: usize,
    m: usize,
    /// `rates[(i * comps + c) * m + e]`
    rates: Vec<f64>,
}

impl FlowRates {
    pub fn new(model: &RateModel, targets: &ProportionTargets, flow: &MeanFieldFlow) -> Self {
        let comps = flow.components();
        let m = model.color_graph().edge_count();
        let mut rates = vec![0.0; flow.len() * comps * m];
        for i in 0..flow.len() {
            let y = flow.state(i);
            for c in 0..comps {
                let at = (i * comps + c) * m;
                component_rates(model, targets, y, c, &mut rates[at..at + m]);
            }
        }
        Self {
            times: flow.times().to_vec(),
            comps,
            m,
            rates,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn edge_count(&self) -> usize {
        self.m
    }

    /// Rates of `comp` at grid index `i`.
    pub fn at_grid(&self, i: usize, comp: usize) -> &[f64] {
        let at = (i * self.comps + comp) * self.m;
        &self.rates[at..at + self.m]
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return (0, 0.0);
        }
        if t >= self.times[n - 1] {
            return (n - 1, 0.0);
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        (i, (t - self.times[i]) / (self.times[i + 1] - self.times[i]))
    }

    /// Rate of `comp` on edge `e` at time `t`, linear between grid points.
    pub fn rate(&self, comp: usize, e: usize, t: f64) -> f64 {
        let (i, w) = self.locate(t);
        let a = self.at_grid(i, comp)[e];
        if w == 0.0 {
            a
        } else {
            (1.0 - w) * a + w * self.at_grid(i + 1, comp)[e]
        }
    }

    /// Largest grid value of the summed rates over `edges`; bounds the interpolated sum.
    pub fn max_over_grid(&self, comp: usize, edges: &[usize]) -> f64 {
        (0..self.times.len())
            .map(|i| edges.iter().map(|&e| self.at_grid(i, comp)[e]).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Outcome of the Picard scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardResult {
    pub flow: MeanFieldFlow,
    /// `residuals[k]` is the sup distance between iterates `k+1` and `k`.
    pub residuals: Vec<f64>,
}

/// Rates at a midpoint of `[t_i, t_{i+1}]` from grid values by cubic Lagrange
/// interpolation on four neighbouring grid points (linear if the grid is shorter).
fn midpoint_rates(rates: &FlowRates, i: usize, comp: usize, out: &mut [f64]) {
    let n = rates.times.len();
    let (idx, w): ([usize; 4], [f64; 4]) = if n < 4 {
        ([i, i + 1, i + 1, i + 1], [0.5, 0.5, 0.0, 0.0])
    } else if i == 0 {
        ([0, 1, 2, 3], [5.0 / 16.0, 15.0 / 16.0, -5.0 / 16.0, 1.0 / 16.0])
    } else if i + 2 >= n {
        ([n - 4, n - 3, n - 2, n - 1], [1.0 / 16.0, -5.0 / 16.0, 15.0 / 16.0, 5.0 / 16.0])
    } else {
        ([i - 1, i, i + 1, i + 2], [-1.0 / 16.0, 9.0 / 16.0, 9.0 / 16.0, -1.0 / 16.0])
    };
    out.fill(0.0);
    for (&g, &wt) in idx.iter().zip(&w) {
        if wt != 0.0 {
            for (o, &v) in out.iter_mut().zip(rates.at_grid(g, comp)) {
                *o += wt * v;
            }
        }
    }
    for o in out.iter_mut() {
        *o = o.max(0.0);
    }
}

/// One Picard map: the law of the linear dynamics whose rates are frozen along `frozen`.
pub fn picard_step(
    model: &RateModel,
    targets: &ProportionTargets,
    init: &[Measure],
    frozen: &MeanFieldFlow,
) -> Result<MeanFieldFlow> {
    let rates = FlowRates::new(model, targets, frozen);
    let horizon = frozen.horizon();
    let steps = frozen.len() - 1;
    let dt = if steps == 0 { 1.0 } else { horizon / steps as f64 };
    let m = rates.m;
    let flow = integrate_forward(model, init, horizon, dt, |_, half, _, c, out| {
        if half % 2 == 0 {
            out.copy_from_slice(&rates.at_grid(half / 2, c)[..m]);
        } else {
            midpoint_rates(&rates, half / 2, c, out);
        }
    })?;
    debug_assert_eq!(flow.len(), frozen.len());
    Ok(flow)
}

/// Picard iteration from the constant flow at `init` (or from `guess`) until successive
/// iterates differ by less than `tol` in sup-grid, max-component L1 distance.
pub fn picard_iterate(
    model: &RateModel,
    targets: &ProportionTargets,
    init: &[Measure],
    horizon: f64,
    dt: f64,
    tol: f64,
    max_iter: usize,
    guess: Option<&MeanFieldFlow>,
) -> Result<PicardResult> {
    check_setup(model, targets, init, horizon, dt)?;
    if !(tol > 0.0) {
        return Err(invalid_arg(format!("tolerance {tol} must be positive")));
    }
    let times = time_grid(horizon, dt);
    let mut current = match guess {
        Some(g) => {
            if g.times() != times.as_slice() || g.components() != init.len() || g.colors() != model.colors() {
                return Err(invalid_arg("initial guess does not match the time grid"));
            }
            g.clone()
        }
        None => {
            let y: Vec<f64> = init.iter().flat_map(|m| m.iter().copied()).collect();
            let data = y.iter().copied().cycle().take(y.len() * times.len()).collect();
            MeanFieldFlow::from_parts(times, init.len() / 2, model.colors(), data)?
        }
    };
    let mut residuals = Vec::new();
    for _ in 0..max_iter {
        let next = picard_step(model, targets, init, &current)?;
        let res = next.sup_distance(&current);
        residuals.push(res);
        current = next;
        if res < tol {
            return Ok(PicardResult {
                flow: current,
                residuals,
            });
        }
    }
    Err(Error::NonConvergence { residuals })
}

/// Piecewise-constant color path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorPath {
    pub initial: usize,
    /// `(time, new color)`, strictly increasing times.
    pub jumps: Vec<(f64, usize)>,
    pub horizon: f64,
}

impl ColorPath {
    pub fn color_at(&self, t: f64) -> usize {
        let n = self.jumps.partition_point(|&(s, _)| s <= t);
        if n == 0 {
            self.initial
        } else {
            self.jumps[n - 1].1
        }
    }

    pub fn final_color(&self) -> usize {
        self.jumps.last().map_or(self.initial, |&(_, z)| z)
    }
}

/// Sample one path of component `comp` whose rates at time `t` are `rates(comp, e, t)`,
/// by thinning against the per-color grid maximum of the exit rate.
pub fn sample_inhomogeneous_path(
    rates: &FlowRates,
    model: &RateModel,
    comp: usize,
    initial: usize,
    rng: &mut SimRng,
) -> ColorPath {
    let g = model.color_graph();
    let horizon = *rates.times().last().expect("non-empty grid");
    let bounds: Vec<f64> = (0..g.colors()).map(|z| rates.max_over_grid(comp, g.out_edges(z))).collect();
    let mut z = initial;
    let mut t = 0.0f64;
    let mut jumps = Vec::new();
    let mut scratch = Vec::new();
    loop {
        let bound = bounds[z];
        if bound <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        t -= (1.0 - u).ln() / bound;
        if t > horizon {
            break;
        }
        scratch.clear();
        let mut acc = 0.0;
        for &e in g.out_edges(z) {
            acc += rates.rate(comp, e, t);
            scratch.push(acc);
        }
        let x = rng.random::<f64>() * bound;
        if let Some(pick) = scratch.iter().position(|&c| x < c) {
            if jumps.last().is_some_and(|&(s, _)| t <= s) {
                t = jumps.last().map(|&(s, _)| s).unwrap_or(0.0f64).next_up();
            }
            z = g.edge(g.out_edges(z)[pick]).1;
            jumps.push((t, z));
        }
    }
    ColorPath {
        initial,
        jumps,
        horizon,
    }
}

/// One limit particle per component, started from `init_colors[comp]`, driven by the flow's rates.
pub fn simulate_limit_particle(
    model: &RateModel,
    targets: &ProportionTargets,
    flow: &MeanFieldFlow,
    init_colors: &[usize],
    rng: &mut SimRng,
) -> Result<Vec<ColorPath>> {
    if init_colors.len() != flow.components() {
        return Err(invalid_arg(format!(
            "{} initial colors for {} components",
            init_colors.len(),
            flow.components()
        )));
    }
    if let Some(&z) = init_colors.iter().find(|&&z| z >= model.colors()) {
        return Err(invalid_arg(format!("initial color {z} out of range")));
    }
    let rates = FlowRates::new(model, targets, flow);
    Ok(init_colors
        .iter()
        .enumerate()
        .map(|(c, &z)| sample_inhomogeneous_path(&rates, model, c, z, rng))
        .collect())
}
