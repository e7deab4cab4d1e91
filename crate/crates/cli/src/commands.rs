//! One function per subcommand. Each writes its artifacts into `out` and
//! returns the one-line summary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use blockmf::experiments::{lln_experiment, observation_grid, LlnSettings};
use blockmf::io::{fmt_f64, read_flow, write_convergence, write_cost, write_empirical, write_flow, write_trajectory};
use blockmf::particle::simulate_with_rng;
use blockmf::{
    check_regularity, component_of, default_tagged, empirical_process, master_equation_oracle, multichaos_test,
    picard_iterate, product_distribution, replica_rng, sample_initial_state, solve_mckean_vlasov, variational_cost,
    Measure,
};
use log::info;
use rayon::prelude::*;

use crate::scenario::Scenario;
use crate::svg::{loglog, Point};
use crate::CliError;

fn create(out: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = out.join(name);
    let f = File::create(&path).map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Io(e.to_string())
}

pub fn simulate(s: &Scenario, out: &Path) -> Result<String, CliError> {
    let graph = s.require_graph()?;
    let mut rng = replica_rng(s.seed, 0, 0);
    let state = sample_initial_state(graph, &s.init, &mut rng)?;
    let traj = simulate_with_rng(graph, &s.model, &state, s.horizon, &mut rng)?;
    info!("simulated {} events on {} nodes", traj.events.len(), graph.node_count());
    write_trajectory(create(out, "trajectory.csv")?, &traj).map_err(io_err)?;
    let grid = observation_grid(s.horizon, s.grid);
    let series = empirical_process(&traj, graph, &grid)?;
    write_empirical(create(out, "empirical.csv")?, &grid, &series).map_err(io_err)?;
    Ok(format!(
        "simulate: {} nodes, {} events on [0, {}]; wrote trajectory.csv, empirical.csv",
        graph.node_count(),
        traj.events.len(),
        s.horizon
    ))
}

pub fn meanfield(s: &Scenario, out: &Path) -> Result<String, CliError> {
    let flow = solve_mckean_vlasov(&s.model, &s.targets, &s.init, s.horizon, s.dt)?;
    write_flow(create(out, "flow.csv")?, &flow).map_err(io_err)?;
    let (mass, low) = flow.conservation();
    Ok(format!(
        "meanfield: {} steps, max |mass - 1| = {mass:.3e}, min entry = {low:.3e}; wrote flow.csv",
        flow.len() - 1
    ))
}

pub fn picard(s: &Scenario, out: &Path) -> Result<String, CliError> {
    let res = picard_iterate(&s.model, &s.targets, &s.init, s.horizon, s.dt, s.picard_tol, s.picard_max_iter, None)?;
    write_flow(create(out, "flow_picard.csv")?, &res.flow).map_err(io_err)?;
    let mut w = create(out, "picard_residuals.csv")?;
    writeln!(w, "iteration,residual").map_err(io_err)?;
    for (i, r) in res.residuals.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, fmt_f64(*r)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    let rk = solve_mckean_vlasov(&s.model, &s.targets, &s.init, s.horizon, s.dt)?;
    Ok(format!(
        "picard: converged in {} iterations, sup distance to the direct solve {:.3e}; wrote flow_picard.csv, picard_residuals.csv",
        res.residuals.len(),
        res.flow.sup_distance(&rk)
    ))
}

/// Least-squares slope of `log y` against `log x`.
fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(_, y)| **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn chaos(s: &Scenario, out: &Path) -> Result<String, CliError> {
    let family = s.require_family()?;
    let settings = LlnSettings {
        horizon: s.horizon,
        grid: s.grid,
        dt: s.dt,
        n_list: s.n_list.clone(),
        replicas: s.replicas,
        seed: s.seed,
    };
    let report = lln_experiment(family, &s.model, &s.targets, &s.init, &settings)?;
    write_convergence(create(out, "convergence.csv")?, &report).map_err(io_err)?;
    let mut w = create(out, "convergence_components.csv")?;
    writeln!(w, "N,block,class,mean_dist").map_err(io_err)?;
    for row in &report.rows {
        for (c, v) in row.per_component.iter().enumerate() {
            let (j, class) = component_of(c);
            writeln!(w, "{},{j},{},{}", row.n, class.tag(), fmt_f64(*v)).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    let points: Vec<Point> = report
        .rows
        .iter()
        .map(|r| Point {
            x: r.n as f64,
            y: r.mean_dist,
            err: r.stderr,
        })
        .collect();
    let svg = loglog("Empirical process vs mean-field flow", "N", "mean sup-grid d_BL", &points, -0.5);
    fs::write(out.join("convergence.svg"), svg).map_err(io_err)?;
    let xs: Vec<f64> = report.rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = report.rows.iter().map(|r| r.mean_dist).collect();
    let (first, last) = (&report.rows[0], &report.rows[report.rows.len() - 1]);
    Ok(format!(
        "chaos: e({})/e({}) = {:.3}, log-log slope {:.3}; wrote convergence.csv, convergence_components.csv, convergence.svg",
        first.n,
        last.n,
        first.mean_dist / last.mean_dist,
        loglog_slope(&xs, &ys)
    ))
}

pub fn multichaos(s: &Scenario, out: &Path) -> Result<String, CliError> {
    let family = s.require_family()?;
    if s.replicas < 2 {
        return Err(CliError::Validation("replicas: multichaos needs at least 2".into()));
    }
    let mut w = create(out, "multichaos.csv")?;
    writeln!(w, "N,replicas,tv,stderr").map_err(io_err)?;
    let mut points = Vec::new();
    for (arm, &n) in s.n_list.iter().enumerate() {
        let graph = family.build(n)?;
        let tagged = default_tagged(&graph, &s.tagged)?;
        let res = multichaos_test(&graph, &s.model, &s.init, &tagged, s.horizon, s.replicas, s.seed, arm as u64)?;
        info!("N = {n}: tv {} +- {}", res.tv, res.stderr);
        writeln!(w, "{n},{},{},{}", s.replicas, fmt_f64(res.tv), fmt_f64(res.stderr)).map_err(io_err)?;
        points.push(Point {
            x: n as f64,
            y: res.tv,
            err: res.stderr,
        });
    }
    w.flush().map_err(io_err)?;
    let svg = loglog("Tagged nodes: joint law vs product of marginals", "N", "total variation", &points, -0.5);
    fs::write(out.join("multichaos.svg"), svg).map_err(io_err)?;
    let parts: Vec<String> = points.iter().map(|p| format!("N={}: {:.4}+-{:.4}", p.x, p.y, p.err)).collect();
    Ok(format!("multichaos: tv {}; wrote multichaos.csv, multichaos.svg", parts.join(", ")))
}

pub fn ldp_cost(s: &Scenario, out: &Path) -> Result<String, CliError> {
    let flow = match &s.flow_csv {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err)?;
            let flow = read_flow(&text)?;
            if flow.block_count() != s.targets.block_count() || flow.colors() != s.model.colors() {
                return Err(CliError::Validation(format!(
                    "flow_csv: {} blocks and {} colors do not match the scenario",
                    flow.block_count(),
                    flow.colors()
                )));
            }
            flow
        }
        None => solve_mckean_vlasov(&s.model, &s.targets, &s.init, s.horizon, s.dt)?,
    };
    let cost = variational_cost(&flow, &s.targets, &s.model)?;
    write_cost(create(out, "cost.csv")?, &cost).map_err(io_err)?;
    Ok(format!("ldp-cost: S_total = {:.6e}; wrote cost.csv", cost.total))
}

pub fn oracle_check(s: &Scenario, out: &Path) -> Result<String, CliError> {
    let graph = s.require_graph()?;
    let per_node: Vec<Measure> = (0..graph.node_count())
        .map(|n| s.init[blockmf::component_index(graph.block_of(n), graph.class_of(n))].clone())
        .collect();
    let law = master_equation_oracle(graph, &s.model, &product_distribution(&per_node)?, s.horizon)?;
    let finals: Vec<Vec<usize>> = (0..s.replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replica_rng(s.seed, 0, rep as u64);
            let state = sample_initial_state(graph, &s.init, &mut rng)?;
            let traj = simulate_with_rng(graph, &s.model, &state, s.horizon, &mut rng)?;
            let end = traj.final_state(graph);
            Ok((0..graph.node_count()).map(|n| end.color(n)).collect())
        })
        .collect::<blockmf::Result<_>>()?;
    let reps = s.replicas as f64;
    let mut w = create(out, "oracle.csv")?;
    writeln!(w, "node,color,oracle,monte_carlo,stderr").map_err(io_err)?;
    let (mut worst, mut worst_ratio) = (0.0f64, 0.0f64);
    for n in 0..graph.node_count() {
        for (z, &p) in law.marginal(n).iter().enumerate() {
            let mc = finals.iter().filter(|x| x[n] == z).count() as f64 / reps;
            let se = (p * (1.0 - p) / reps).sqrt();
            worst = worst.max((mc - p).abs());
            if se > 0.0 {
                worst_ratio = worst_ratio.max((mc - p).abs() / se);
            }
            writeln!(w, "{n},{z},{},{},{}", fmt_f64(p), fmt_f64(mc), fmt_f64(se)).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(format!(
        "oracle-check: max |MC - oracle| = {worst:.3e} ({worst_ratio:.2} standard errors) over {} replicas; wrote oracle.csv",
        s.replicas
    ))
}

pub fn validate(s: &Scenario) -> Result<String, CliError> {
    let mut notes = Vec::new();
    if let Some(g) = &s.graph {
        notes.push(format!("graph with {} nodes in {} blocks", g.node_count(), g.block_count()));
        if s.explicit_targets {
            let report = check_regularity(g, &s.targets)?;
            notes.push(format!("largest deviation from targets {:.3e}", report.max()));
        }
    }
    if let Some(f) = &s.family {
        notes.push(format!("family with {} blocks, N list {:?}", f.block_count(), s.n_list));
    }
    notes.push(format!("{} colors", s.model.colors()));
    Ok(format!("valid: {}", notes.join("; ")))
}
