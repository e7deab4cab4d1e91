//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use blockmf::experiments::LlnSettings;
use blockmf::ldp::sample_reference_path;
use blockmf::particle::simulate_with_rng;
use blockmf::*;
use rand::Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sis_model(r: usize) -> RateModel {
    sis_spec(r, &vec![2.0; r], &vec![1.5; r], 2.0, &vec![1.0; r]).unwrap()
}

fn sis_init(comps: usize) -> Vec<Measure> {
    vec![Measure::probability(vec![0.9, 0.1]).unwrap(); comps]
}

fn probability(rng: &mut SimRng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// 1 block of 2 central and 1 peripheral node: exact law at T=2 against 2e4 replicas.
fn oracle_equivalence() -> Outcome {
    const REPLICAS: usize = 20_000;
    let sizes = [BlockSize::new(2, 1)];
    let graph = BlockGraph::complete_peripheral(&sizes).unwrap();
    let model = sis_model(1);
    let init = sis_init(2);
    let per_node: Vec<Measure> = (0..3)
        .map(|n| init[component_index(graph.block_of(n), graph.class_of(n))].clone())
        .collect();
    let law = master_equation_oracle(&graph, &model, &product_distribution(&per_node).unwrap(), 2.0).unwrap();
    let ones: Vec<[usize; 3]> = (0..REPLICAS)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replica_rng(1, 0, rep as u64);
            let state = sample_initial_state(&graph, &init, &mut rng).unwrap();
            let end = simulate_with_rng(&graph, &model, &state, 2.0, &mut rng).unwrap().final_state(&graph);
            [end.color(0), end.color(1), end.color(2)]
        })
        .collect();
    let mut worst = 0.0f64;
    for n in 0..3 {
        let p = law.marginal(n)[1];
        let mc = ones.iter().filter(|x| x[n] == 1).count() as f64 / REPLICAS as f64;
        let se = (p * (1.0 - p) / REPLICAS as f64).sqrt();
        worst = worst.max((mc - p).abs() / se);
    }
    outcome(worst <= 3.0, format!("worst |MC - oracle| = {worst:.2} SE (limit 3)"))
}

/// A random instance: model, limit targets, initial law.
struct Instance {
    model: RateModel,
    targets: ProportionTargets,
    init: Vec<Measure>,
}

fn random_instances() -> Vec<Instance> {
    (0..50)
        .map(|i| {
            let mut rng = replica_rng(2, 0, i);
            let k = rng.random_range(2..=5);
            let r = rng.random_range(1..=3);
            let graph = if rng.random::<bool>() { ColorGraph::complete(k) } else { ColorGraph::birth_death(k) };
            let m = graph.edge_count();
            let mut draw = || {
                let gc = (0..m).map(|_| (0..k).map(|_| rng.random_range(0.0..4.0)).collect()).collect();
                let gp = (0..m).map(|_| (0..k).map(|_| rng.random_range(0.0..4.0)).collect()).collect();
                let b = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
                RateSpec::new(graph.clone(), gc, gp, Some(b)).unwrap()
            };
            let blocks: Vec<[RateSpec; 2]> = (0..r).map(|_| [draw(), draw()]).collect();
            let model = RateModel::new(blocks).unwrap();
            let alpha = probability(&mut rng, r);
            let p_c: Vec<f64> = (0..r).map(|_| rng.random_range(0.2..0.8)).collect();
            let targets = if rng.random::<bool>() {
                ProportionTargets::complete_limit(&alpha, &p_c)
            } else {
                let fr: Vec<Vec<f64>> = (0..r).map(|_| (0..r).map(|_| rng.random_range(0.1..1.0)).collect()).collect();
                ProportionTargets::regular_limit(&alpha, &p_c, &fr)
            };
            let init = (0..2 * r).map(|_| Measure::probability(probability(&mut rng, k)).unwrap()).collect();
            Instance { model, targets, init }
        })
        .collect()
}

fn conservation(instances: &[Instance]) -> Outcome {
    let mut worst_mass = 0.0f64;
    let mut lowest = f64::INFINITY;
    let mut bar = 0.0f64;
    for inst in instances {
        bar = bar.max(inst.model.gamma_bar());
        let flow = solve_mckean_vlasov(&inst.model, &inst.targets, &inst.init, 5.0, 0.002).unwrap();
        let (mass, low) = flow.conservation();
        worst_mass = worst_mass.max(mass);
        lowest = lowest.min(low);
    }
    outcome(
        worst_mass <= 1e-9 && lowest >= -1e-12 && bar <= 5.0,
        format!("max |mass - 1| = {worst_mass:.2e} (limit 1e-9), min entry = {lowest:.2e} (limit -1e-12), gamma_bar <= {bar:.2}"),
    )
}

fn picard_agreement(instances: &[Instance]) -> Outcome {
    let mut worst_dist = 0.0f64;
    let mut most_iter = 0;
    let mut failures = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        let rk = solve_mckean_vlasov(&inst.model, &inst.targets, &inst.init, 5.0, 0.002).unwrap();
        match picard_iterate(&inst.model, &inst.targets, &inst.init, 5.0, 0.002, 1e-8, 50, None) {
            Ok(res) => {
                let d = res.flow.sup_distance(&rk);
                worst_dist = worst_dist.max(d);
                most_iter = most_iter.max(res.residuals.len());
                let monotone = res.residuals.windows(2).skip(1).all(|w| w[1] < w[0]);
                if d > 1e-6 || !monotone {
                    failures.push(format!("#{i} distance {d:.2e} monotone {monotone}"));
                }
            }
            Err(e) => failures.push(format!("#{i}: {e}")),
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "all converged within {most_iter} iterations (limit 50), max distance to RK {worst_dist:.2e} (limit 1e-6){}",
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join(", ")) }
        ),
    )
}

fn two_block_family() -> GraphFamily {
    GraphFamily::CompletePeripheral {
        block_fractions: vec![0.5, 0.5],
        central_fractions: vec![0.5, 0.5],
    }
}

fn chaos_scaling() -> Outcome {
    let family = two_block_family();
    let settings = LlnSettings {
        horizon: 3.0,
        grid: 30,
        dt: 0.001,
        n_list: vec![40, 160, 640],
        replicas: 100,
        seed: 4,
    };
    let report = lln_experiment(&family, &sis_model(2), &family.limit_targets(), &sis_init(4), &settings).unwrap();
    let e: Vec<f64> = report.rows.iter().map(|r| r.mean_dist).collect();
    let decreasing = e.windows(2).all(|w| w[1] < w[0]);
    let ratio = e[0] / e[2];
    outcome(
        decreasing && ratio >= 2.0,
        format!("e = {:.4} / {:.4} / {:.4}, e(40)/e(640) = {ratio:.2} (limit 2)", e[0], e[1], e[2]),
    )
}

fn multichaos() -> Outcome {
    let family = two_block_family();
    let model = sis_model(2);
    let init = sis_init(4);
    let mut tv = Vec::new();
    for (arm, n) in [40usize, 160, 640].into_iter().enumerate() {
        let graph = family.build(n).unwrap();
        let tagged = default_tagged(&graph, &[(0, NodeClass::Central), (1, NodeClass::Peripheral)]).unwrap();
        let res = multichaos_test(&graph, &model, &init, &tagged, 3.0, 2000, 5, arm as u64).unwrap();
        tv.push((res.tv, res.stderr));
    }
    let (first, last) = (tv[0].0, tv[2].0);
    outcome(
        last < first && last < 0.1,
        format!(
            "TV = {:.4}+-{:.4} / {:.4}+-{:.4} / {:.4}+-{:.4}; TV(640) < TV(40) and TV(640) < 0.1",
            tv[0].0, tv[0].1, tv[1].0, tv[1].1, tv[2].0, tv[2].1
        ),
    )
}

fn zero_cost() -> Outcome {
    let model = sis_model(2);
    let targets = two_block_family().limit_targets();
    let flow = solve_mckean_vlasov(&model, &targets, &sis_init(4), 3.0, 0.001).unwrap();
    let v = variational_cost(&flow, &targets, &model).unwrap().total;
    let family = RateFamily::mean_field(&model, &targets, &flow);
    let l = legendre_cost(&flow, &targets, &model, &family).unwrap().total;
    outcome(v <= 1e-5 && l == 0.0, format!("variational {v:.2e} (limit 1e-5), legendre with l = lambda {l:e} (must be 0)"))
}

/// Pointwise instances with `l = lambda * exp(Phi(w) - Phi(z))`, where the supremum is attained.
fn duality() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let mut rng = replica_rng(7, 0, i);
        let k = rng.random_range(2..=5);
        let graph = if i % 2 == 0 { ColorGraph::complete(k) } else { ColorGraph::birth_death(k) };
        let mu = probability(&mut rng, k);
        let phi: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda: Vec<f64> = (0..graph.edge_count()).map(|_| rng.random_range(0.1..3.0)).collect();
        let mut theta = vec![0.0; k];
        let mut legendre = 0.0;
        for (e, &(z, w)) in graph.edges().iter().enumerate() {
            let l = lambda[e] * (phi[w] - phi[z]).exp();
            let net = mu[z] * (l - lambda[e]);
            theta[w] += net;
            theta[z] -= net;
            legendre += mu[z] * lambda[e] * tau_star(l / lambda[e] - 1.0);
        }
        let v = variational_norm(&theta, &mu, &lambda, &graph).unwrap();
        worst = worst.max((v - legendre).abs() / legendre);
    }
    outcome(worst <= 1e-4, format!("max relative discrepancy {worst:.2e} over 200 instances (limit 1e-4)"))
}

fn girsanov() -> Outcome {
    const PATHS: usize = 10_000;
    let model = sis_model(1);
    let targets = ProportionTargets::complete_limit(&[1.0], &[0.5]);
    let flow = solve_mckean_vlasov(&model, &targets, &sis_init(2), 1.0, 0.01).unwrap();
    let rates = FlowRates::new(&model, &targets, &flow);
    let w: Vec<f64> = (0..PATHS)
        .map(|p| {
            let mut rng = replica_rng(8, 0, p as u64);
            let path = sample_reference_path(model.color_graph(), p % 2, 1.0, &mut rng);
            girsanov_log_density(&path, &rates, &model, 0).unwrap().exp()
        })
        .collect();
    let mean = w.iter().sum::<f64>() / PATHS as f64;
    let se = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (PATHS - 1) as f64 / PATHS as f64).sqrt();
    let z = (mean - 1.0).abs() / se;
    outcome(z <= 3.0, format!("E[exp h] = {mean:.4} +- {se:.4}, {z:.2} SE from 1 (limit 3)"))
}

fn tau_suite() -> Outcome {
    let mut rng = replica_rng(9, 0, 0);
    let mut fy = f64::INFINITY;
    let mut eq = 0.0f64;
    for _ in 0..100_000 {
        let u = rng.random_range(-20.0..5.0);
        let v = rng.random_range(-1.0..50.0);
        fy = fy.min(tau(u) + tau_star(v) - u * v);
        let vu = u.exp_m1();
        eq = eq.max((tau(u) + tau_star(vu) - u * vu).abs());
    }
    let at_minus_one = tau_star(-1.0);
    outcome(
        fy >= -1e-12 && eq <= 1e-8 && at_minus_one == 1.0,
        format!("min Fenchel-Young gap {fy:.2e} (limit -1e-12), max equality gap {eq:.2e} (limit 1e-8), tau*(-1) = {at_minus_one}"),
    )
}

fn run_cli(dir: &Path, scenario: &Path, command: &str, threads: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let out = dir.join(format!("{command}-{threads}"));
    let o = Command::new(env!("CARGO_BIN_EXE_blockmf"))
        .args([command, "--threads", threads, "--scenario"])
        .arg(scenario)
        .arg("--out")
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let graph_scenario = dir.path().join("graph.json");
    fs::write(
        &graph_scenario,
        r#"{"schema": "blockmf/1", "seed": 10,
            "graph": {"kind": "complete", "blocks": [{"central": 20, "peripheral": 20}, {"central": 20, "peripheral": 20}]},
            "rates": {"model": "sis", "gamma": [2.0, 2.0], "nu": [1.5, 1.5], "eta": 2.0, "zeta": [1.0, 1.0]},
            "init": [0.9, 0.1], "horizon": 3.0, "grid": 30}"#,
    )
    .unwrap();
    let family_scenario = dir.path().join("family.json");
    fs::write(
        &family_scenario,
        r#"{"schema": "blockmf/1", "seed": 10,
            "family": {"kind": "complete", "block_fractions": [0.5, 0.5], "central_fractions": [0.5, 0.5]},
            "rates": {"model": "sis", "gamma": [2.0, 2.0], "nu": [1.5, 1.5], "eta": 2.0, "zeta": [1.0, 1.0]},
            "init": [0.9, 0.1], "horizon": 3.0, "dt": 0.001, "grid": 30, "replicas": 40, "n_list": [40, 160]}"#,
    )
    .unwrap();
    let mut compared = 0;
    for (command, scenario) in [("simulate", &graph_scenario), ("chaos", &family_scenario)] {
        let runs = ["1", "8"].map(|t| run_cli(dir.path(), scenario, command, t));
        match runs {
            [Ok(a), Ok(b)] if a == b && !a.is_empty() => compared += a.len(),
            [Ok(_), Ok(_)] => return outcome(false, format!("{command}: CSV outputs differ between 1 and 8 threads")),
            [Err(e), _] | [_, Err(e)] => return outcome(false, format!("{command} failed: {e}")),
        }
    }
    outcome(true, format!("{compared} CSV files byte-identical between --threads 1 and --threads 8"))
}

fn main() -> ExitCode {
    let instances = random_instances();
    let criteria: Vec<(&str, Duration, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("oracle equivalence", Duration::from_secs(60), Box::new(oracle_equivalence)),
        ("mean-field conservation", Duration::from_secs(60), Box::new(|| conservation(&instances))),
        ("Picard agreement", Duration::from_secs(300), Box::new(|| picard_agreement(&instances))),
        ("chaos scaling", Duration::from_secs(300), Box::new(chaos_scaling)),
        ("multi-chaos", Duration::from_secs(300), Box::new(multichaos)),
        ("zero cost", Duration::from_secs(10), Box::new(zero_cost)),
        ("Legendre-variational duality", Duration::from_secs(30), Box::new(duality)),
        ("Girsanov normalization", Duration::from_secs(30), Box::new(girsanov)),
        ("tau / tau* suite", Duration::from_secs(60), Box::new(tau_suite)),
        ("determinism", Duration::from_secs(300), Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = check();
        let elapsed = start.elapsed();
        let pass = res.pass && elapsed <= *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {} ({name}): {} {}; {:.2} s (budget {} s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            res.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
