//! CSV export and import. Floats carry 17 significant digits so every value
//! round-trips exactly; lines end in LF.

use std::io::{self, Write};

use crate::error::{invalid_config, Result};
use crate::experiments::ConvergenceReport;
use crate::graph::{component_of, BlockGraph, NodeClass};
use crate::ldp::DeviationCost;
use crate::meanfield::MeanFieldFlow;
use crate::particle::{EmpiricalVector, Trajectory};

/// Round-trip exact float formatting.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trajectory<W: Write>(mut w: W, traj: &Trajectory) -> io::Result<()> {
    writeln!(w, "t,node,from,to")?;
    for e in &traj.events {
        writeln!(w, "{},{},{},{}", fmt_f64(e.t), e.node, e.from, e.to)?;
    }
    w.flush()
}

fn write_measure_rows<W: Write>(w: &mut W, t: f64, comp: usize, masses: &[f64]) -> io::Result<()> {
    let (j, class) = component_of(comp);
    let ts = fmt_f64(t);
    for (z, m) in masses.iter().enumerate() {
        writeln!(w, "{ts},{j},{},{z},{}", class.tag(), fmt_f64(*m))?;
    }
    Ok(())
}

/// Empirical process on a grid, as `t,block,class,color,mass`.
pub fn write_empirical<W: Write>(mut w: W, times: &[f64], series: &[EmpiricalVector]) -> io::Result<()> {
    writeln!(w, "t,block,class,color,mass")?;
    for (&t, v) in times.iter().zip(series) {
        for (c, m) in v.components.iter().enumerate() {
            write_measure_rows(&mut w, t, c, m)?;
        }
    }
    w.flush()
}

/// Mean-field flow in the same layout as [`write_empirical`].
pub fn write_flow<W: Write>(mut w: W, flow: &MeanFieldFlow) -> io::Result<()> {
    writeln!(w, "t,block,class,color,mass")?;
    for (i, &t) in flow.times().iter().enumerate() {
        for c in 0..flow.components() {
            write_measure_rows(&mut w, t, c, flow.raw(i, c))?;
        }
    }
    w.flush()
}

pub fn write_convergence<W: Write>(mut w: W, report: &ConvergenceReport) -> io::Result<()> {
    writeln!(w, "N,replicas,mean_dist,stderr")?;
    for r in &report.rows {
        writeln!(w, "{},{},{},{}", r.n, r.replicas, fmt_f64(r.mean_dist), fmt_f64(r.stderr))?;
    }
    w.flush()
}

pub fn write_cost<W: Write>(mut w: W, cost: &DeviationCost) -> io::Result<()> {
    writeln!(w, "t,block,class,integrand")?;
    for (i, &t) in cost.times.iter().enumerate() {
        let ts = fmt_f64(t);
        for (c, f) in cost.integrands.iter().enumerate() {
            let (j, class) = component_of(c);
            writeln!(w, "{ts},{j},{},{}", class.tag(), fmt_f64(f[i]))?;
        }
    }
    writeln!(w, "S_total,{}", fmt_f64(cost.total))?;
    w.flush()
}

/// Final state of a trajectory as `node,block,class,color`.
pub fn write_final_state<W: Write>(mut w: W, graph: &BlockGraph, traj: &Trajectory) -> io::Result<()> {
    writeln!(w, "node,block,class,color")?;
    let end = traj.final_state(graph);
    for n in 0..graph.node_count() {
        writeln!(w, "{n},{},{},{}", graph.block_of(n), graph.class_of(n).tag(), end.color(n))?;
    }
    w.flush()
}

/// Parse a flow written by [`write_flow`]. Rows must be grouped by time with every
/// (block, class, color) present once per time.
pub fn read_flow(text: &str) -> Result<MeanFieldFlow> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "t,block,class,color,mass" => {}
        _ => return Err(invalid_config("flow CSV: expected header t,block,class,color,mass")),
    }
    let mut rows: Vec<(f64, usize, usize, usize, f64)> = Vec::new();
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| invalid_config(format!("flow CSV line {}: {what}", no + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let t: f64 = f[0].parse().map_err(|_| bad("bad time"))?;
        let j: usize = f[1].parse().map_err(|_| bad("bad block"))?;
        let class = match f[2] {
            "c" => NodeClass::Central,
            "p" => NodeClass::Peripheral,
            _ => return Err(bad("class must be c or p")),
        };
        let z: usize = f[3].parse().map_err(|_| bad("bad color"))?;
        let m: f64 = f[4].parse().map_err(|_| bad("bad mass"))?;
        rows.push((t, j, class.index(), z, m));
    }
    let blocks = rows.iter().map(|r| r.1 + 1).max().ok_or_else(|| invalid_config("flow CSV has no rows"))?;
    let k = rows.iter().map(|r| r.3 + 1).max().unwrap_or(0);
    let width = 2 * blocks * k;
    if rows.len() % width != 0 {
        return Err(invalid_config(format!(
            "flow CSV: {} rows is not a multiple of {width} entries per time",
            rows.len()
        )));
    }
    let mut times = Vec::with_capacity(rows.len() / width);
    let mut data = vec![f64::NAN; rows.len()];
    for (s, chunk) in rows.chunks(width).enumerate() {
        let t = chunk[0].0;
        for &(tt, j, c, z, m) in chunk {
            if tt != t {
                return Err(invalid_config(format!("flow CSV: rows for time {t} are not contiguous")));
            }
            data[s * width + (2 * j + c) * k + z] = m;
        }
        times.push(t);
    }
    if data.iter().any(|v| v.is_nan()) {
        return Err(invalid_config("flow CSV: missing or duplicated entries"));
    }
    MeanFieldFlow::from_parts(times, blocks, k, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ProportionTargets;
    use crate::meanfield::solve_mckean_vlasov;
    use crate::rates::{sis_spec, Measure};

    #[test]
    fn flow_round_trips_bit_exactly() {
        let model = sis_spec(2, &[2.0, 1.0], &[1.5, 1.5], 2.0, &[1.0, 1.0]).unwrap();
        let targets = ProportionTargets::complete_limit(&[0.5, 0.5], &[0.5, 0.5]);
        let init = vec![Measure::probability(vec![0.9, 0.1]).unwrap(); 4];
        let flow = solve_mckean_vlasov(&model, &targets, &init, 0.5, 0.05).unwrap();
        let mut buf = Vec::new();
        write_flow(&mut buf, &flow).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,block,class,color,mass\n0.0000000000000000e0,0,c,0,"));
        assert!(!text.contains('\r'));
        assert_eq!(read_flow(&text).unwrap(), flow);
    }

    #[test]
    fn malformed_flow_names_the_line() {
        let err = read_flow("t,block,class,color,mass\n0,0,x,0,1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
