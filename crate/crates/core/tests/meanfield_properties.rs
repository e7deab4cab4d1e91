use blockmf::meanfield::{component_rates, generator_c, generator_p, generators};
use blockmf::*;
use rand::Rng;

fn sis_setup() -> (RateModel, ProportionTargets, Vec<Measure>) {
    let model = sis_spec(2, &[2.0, 1.2], &[1.5, 0.8], 2.0, &[1.0, 0.6]).unwrap();
    let targets = ProportionTargets::complete_limit(&[0.4, 0.6], &[0.5, 0.3]);
    let init = vec![
        Measure::probability(vec![0.9, 0.1]).unwrap(),
        Measure::probability(vec![0.8, 0.2]).unwrap(),
        Measure::probability(vec![0.6, 0.4]).unwrap(),
        Measure::probability(vec![0.95, 0.05]).unwrap(),
    ];
    (model, targets, init)
}

fn final_gap(a: &MeanFieldFlow, b: &MeanFieldFlow) -> f64 {
    let (ia, ib) = (a.len() - 1, b.len() - 1);
    a.state(ia).iter().zip(b.state(ib)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn rk4_error_shrinks_sixteenfold_when_step_halves() {
    let (model, targets, init) = sis_setup();
    let dt = 0.1;
    let reference = solve_mckean_vlasov(&model, &targets, &init, 2.0, dt / 8.0).unwrap();
    let coarse = solve_mckean_vlasov(&model, &targets, &init, 2.0, dt).unwrap();
    let fine = solve_mckean_vlasov(&model, &targets, &init, 2.0, dt / 2.0).unwrap();
    let ratio = final_gap(&coarse, &reference) / final_gap(&fine, &reference);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn picard_contracts_and_lands_on_the_rk_flow() {
    let (model, targets, init) = sis_setup();
    let tol = 1e-9;
    let res = picard_iterate(&model, &targets, &init, 1.0, 0.005, tol, 50, None).unwrap();
    for w in res.residuals[1..].windows(2) {
        assert!(w[1] < w[0], "{:?}", res.residuals);
    }
    let rk = solve_mckean_vlasov(&model, &targets, &init, 1.0, 0.005).unwrap();
    assert!(res.flow.sup_distance(&rk) < 10.0 * tol);
}

#[test]
fn generators_match_pointwise_rate_functions() {
    let (model, targets, init) = sis_setup();
    let y: Vec<f64> = init.iter().flat_map(|m| m.iter().copied()).collect();
    let gens = generators(&model, &targets, &y);
    let g = model.color_graph();
    for j in 0..2 {
        let a = generator_c(model.spec(j, NodeClass::Central), &init[2 * j], &init[2 * j + 1], targets.p_c[j], targets.p_p[j])
            .unwrap();
        assert_eq!(a, gens[2 * j]);
        let mus = [init[1].clone(), init[3].clone()];
        let b = generator_p(model.spec(j, NodeClass::Peripheral), &init[2 * j], &mus, targets.alpha_c[j], &targets.q[j])
            .unwrap();
        assert_eq!(b, gens[2 * j + 1]);
        for (e, &edge) in g.edges().iter().enumerate() {
            let want = lambda_p(model.spec(j, NodeClass::Peripheral), &init[2 * j], &mus, targets.alpha_c[j], &targets.q[j], edge)
                .unwrap();
            let mut out = vec![0.0; g.edge_count()];
            component_rates(&model, &targets, &y, 2 * j + 1, &mut out);
            assert!((out[e] - want).abs() < 1e-15);
        }
    }
    // <A* mu, phi> = <mu, A phi>
    let phi = [0.3, -1.7];
    for (c, a) in gens.iter().enumerate() {
        let left: f64 = a.adjoint_apply(&init[c]).iter().zip(&phi).map(|(x, p)| x * p).sum();
        let right: f64 = init[c].iter().zip(a.apply(&phi)).map(|(m, x)| m * x).sum();
        assert!((left - right).abs() < 1e-14);
    }
}

#[test]
fn flow_depends_lipschitz_on_initial_condition() {
    let (model, targets, init) = sis_setup();
    let base = solve_mckean_vlasov(&model, &targets, &init, 3.0, 0.01).unwrap();
    let shifted = |eps: f64| {
        let mut p = init.clone();
        p[0] = Measure::probability(vec![0.9 - eps, 0.1 + eps]).unwrap();
        solve_mckean_vlasov(&model, &targets, &p, 3.0, 0.01).unwrap()
    };
    let d1 = base.sup_distance(&shifted(1e-2));
    let d2 = base.sup_distance(&shifted(1e-3));
    assert!(d1 > 0.0 && d1 < 1e-1);
    assert!((d1 / d2 - 10.0).abs() < 1.0, "{d1} {d2}");
}

#[test]
fn random_models_conserve_mass() {
    let mut rng = replica_rng(99, 0, 0);
    for _ in 0..10 {
        let k = rng.random_range(2..=5);
        let g = ColorGraph::complete(k);
        let m = g.edge_count();
        let draw = |rng: &mut SimRng| {
            let gc = (0..m).map(|_| (0..k).map(|_| rng.random_range(0.0..4.0)).collect()).collect();
            let gp = (0..m).map(|_| (0..k).map(|_| rng.random_range(0.0..4.0)).collect()).collect();
            let b = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            RateSpec::new(g.clone(), gc, gp, Some(b)).unwrap()
        };
        let model = RateModel::new(vec![[draw(&mut rng), draw(&mut rng)], [draw(&mut rng), draw(&mut rng)]]).unwrap();
        let targets = ProportionTargets::complete_limit(&[0.3, 0.7], &[0.4, 0.6]);
        let init: Vec<Measure> = (0..4)
            .map(|_| {
                let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                let s: f64 = w.iter().sum();
                Measure::probability(w.iter().map(|x| x / s).collect()).unwrap()
            })
            .collect();
        let flow = solve_mckean_vlasov(&model, &targets, &init, 5.0, 0.002).unwrap();
        let (mass, low) = flow.conservation();
        assert!(mass <= 1e-9 && low >= -1e-12, "{mass} {low}");
    }
}

#[test]
fn limit_particle_follows_the_flow() {
    let (model, targets, init) = sis_setup();
    let flow = solve_mckean_vlasov(&model, &targets, &init, 2.0, 0.01).unwrap();
    let n = 10_000;
    let mut ends = vec![[0usize; 2]; 4];
    let mut joint = 0usize;
    for rep in 0..n {
        let mut rng = replica_rng(5, 0, rep as u64);
        let start: Vec<usize> = init.iter().map(|m| if rng.random::<f64>() < m[1] { 1 } else { 0 }).collect();
        let paths = simulate_limit_particle(&model, &targets, &flow, &start, &mut rng).unwrap();
        for (c, p) in paths.iter().enumerate() {
            ends[c][p.final_color()] += 1;
        }
        if paths[0].final_color() == 1 && paths[3].final_color() == 1 {
            joint += 1;
        }
    }
    let last = flow.len() - 1;
    for (c, counts) in ends.iter().enumerate() {
        let mu = flow.measure(last, c);
        let l1: f64 = (0..2).map(|z| (counts[z] as f64 / n as f64 - mu[z]).abs()).sum();
        let se: f64 = (0..2).map(|z| (mu[z] * (1.0 - mu[z]) / n as f64).sqrt()).sum();
        assert!(l1 < 3.0 * se, "component {c}: {l1} vs {se}");
    }
    // Indicators of two different particles are uncorrelated.
    let (a, b) = (ends[0][1] as f64 / n as f64, ends[3][1] as f64 / n as f64);
    let cov = joint as f64 / n as f64 - a * b;
    let corr = cov / (a * (1.0 - a) * b * (1.0 - b)).sqrt();
    assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "correlation {corr}");
}
