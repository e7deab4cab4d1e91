use blockmf::ldp::{flow_residual, sample_reference_path};
use blockmf::meanfield::{component_rates, integrate_forward};
use blockmf::*;

fn setup() -> (RateModel, ProportionTargets, Vec<Measure>) {
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

/// Potential tilting component `c` at time `t`.
fn potential(c: usize, t: f64) -> [f64; 2] {
    [0.0, 0.4 * (c as f64 + 1.0) * (1.0 + t).sin() - 0.2]
}

#[test]
fn both_cost_forms_agree_on_tilted_dynamics() {
    let (model, targets, init) = setup();
    let g = model.color_graph().clone();
    let tilt = |c: usize, t: f64, out: &mut [f64]| {
        let phi = potential(c, t);
        for (e, &(z, w)) in g.edges().iter().enumerate() {
            out[e] *= (phi[w] - phi[z]).exp();
        }
    };
    let flow = integrate_forward(&model, &init, 2.0, 0.002, |t, _, y, c, out| {
        component_rates(&model, &targets, y, c, out);
        tilt(c, t, out);
    })
    .unwrap();
    let family = RateFamily::from_fn(flow.times().to_vec(), 4, g.edge_count(), |i, c, e| {
        let mut out = vec![0.0; g.edge_count()];
        component_rates(&model, &targets, flow.state(i), c, &mut out);
        tilt(c, flow.times()[i], &mut out);
        out[e]
    })
    .unwrap();
    let legendre = legendre_cost(&flow, &targets, &model, &family).unwrap();
    let variational = variational_cost(&flow, &targets, &model).unwrap();
    assert!(legendre.total > 1e-2);
    let rel = (legendre.total - variational.total).abs() / legendre.total;
    assert!(rel < 1e-4, "legendre {} variational {}", legendre.total, variational.total);
}

#[test]
fn residuals_of_conserving_flows_carry_no_mass() {
    let (model, targets, init) = setup();
    let flow = solve_mckean_vlasov(&model, &targets, &init, 1.0, 0.01).unwrap();
    for i in [0, 7, flow.len() - 1] {
        for theta in flow_residual(&flow, &targets, &model, i) {
            assert!(theta.iter().sum::<f64>().abs() < 1e-9);
        }
    }
}

fn girsanov_mean(model: &RateModel, targets: &ProportionTargets, init: &[Measure], comp: usize, paths: usize) -> (f64, f64) {
    let flow = solve_mckean_vlasov(model, targets, init, 1.0, 0.01).unwrap();
    let rates = FlowRates::new(model, targets, &flow);
    let k = model.colors();
    let w: Vec<f64> = (0..paths)
        .map(|p| {
            let mut rng = replica_rng(21, comp as u64, p as u64);
            let path = sample_reference_path(model.color_graph(), p % k, 1.0, &mut rng);
            girsanov_log_density(&path, &rates, model, comp).unwrap().exp()
        })
        .collect();
    let mean = w.iter().sum::<f64>() / paths as f64;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (paths - 1) as f64;
    (mean, (var / paths as f64).sqrt())
}

#[test]
fn girsanov_density_integrates_to_one() {
    let (model, targets, init) = setup();
    for comp in [0, 3] {
        let (mean, se) = girsanov_mean(&model, &targets, &init, comp, 10_000);
        assert!((mean - 1.0).abs() < 3.0 * se, "component {comp}: {mean} +- {se}");
    }
    // Three colors on a birth-death graph: the compensator counts two exits from the middle color.
    let spec = queue_spec(3, &[0.8, 0.6, 0.4], &[0.3, 0.7, 1.1], 0.5).unwrap();
    let model = RateModel::uniform(spec, 1);
    let targets = ProportionTargets::complete_limit(&[1.0], &[0.5]);
    let init = vec![Measure::uniform(3); 2];
    let (mean, se) = girsanov_mean(&model, &targets, &init, 1, 10_000);
    assert!((mean - 1.0).abs() < 3.0 * se, "{mean} +- {se}");
}
