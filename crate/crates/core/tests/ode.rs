use epialloc_core::model::{initial_state, rhs, sigmoid_onset};
use epialloc_core::solver::{daily_grid, simulate, SolverOptions};
use epialloc_core::{generate_noisy_observations, ModelKind, ModelSpec, PopulationConfig, VaccinePolicy};
use epialloc_testkit::dopri;
use proptest::prelude::*;

const TRUTH: [f64; 3] = [0.9, 0.08, 0.1];

/// SEIR right-hand side written out directly from the model equations.
fn seir_reference(theta: [f64; 3], n: f64) -> impl Fn(f64, &[f64], &mut [f64]) {
    move |_, x, d| {
        let [a, b, g] = theta;
        let inf = a / n * x[0] * x[2];
        d[0] = -inf;
        d[1] = inf - b * x[1];
        d[2] = b * x[1] - g * x[2];
        d[3] = g * x[2];
    }
}

fn seir_at_10(step: f64) -> Vec<f64> {
    let spec = ModelSpec::new(ModelKind::Seir);
    let pop = PopulationConfig::single(1000.0);
    let x0 = initial_state(&spec, &pop, 10.0, 0.0);
    let tr = simulate(&spec, &pop, &TRUTH, &x0, &[0.0, 10.0], &VaccinePolicy::zeros(1, [0, 0]), &SolverOptions { step })
        .unwrap();
    tr.states[1].clone()
}

fn reference_at_10() -> Vec<f64> {
    dopri::integrate(seir_reference(TRUTH, 1000.0), 0.0, &[990.0, 0.0, 10.0, 0.0], 10.0, 1e-13, 1e-12)
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

#[test]
fn default_step_matches_reference_solver() {
    let err = max_rel_err(&seir_at_10(0.05), &reference_at_10());
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn fourth_order_convergence() {
    let reference = reference_at_10();
    let e1 = max_rel_err(&seir_at_10(0.5), &reference);
    let e2 = max_rel_err(&seir_at_10(0.25), &reference);
    let ratio = e1 / e2;
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio} ({e1} -> {e2})");
}

fn three_pop(mobility_off: f64) -> PopulationConfig {
    PopulationConfig {
        sizes: vec![7.5e5, 5e5, 1e6],
        mobility: vec![
            vec![1.0, mobility_off, 0.0],
            vec![mobility_off, 1.0, mobility_off],
            vec![0.0, mobility_off, 1.0],
        ],
        onset_c1: vec![0.6; 3],
        onset_c2: vec![20.0, 30.0, 10.0],
        eta: 0.99,
    }
}

#[test]
fn decoupled_limit_matches_independent_runs() {
    let spec = ModelSpec::new(ModelKind::Seirm);
    let pop = three_pop(0.0);
    let x0 = initial_state(&spec, &pop, 100.0, 0.0);
    let policy = VaccinePolicy::from_genome(3, [16, 18], &[1e3, 2e3, 3e3, 0.0, 5e2, 0.0, 4e3, 4e3, 4e3]).unwrap();
    let grid = daily_grid(60);
    let coupled = simulate(&spec, &pop, &TRUTH, &x0, &grid, &policy, &SolverOptions::default()).unwrap();
    for k in 0..3 {
        let single = PopulationConfig {
            sizes: vec![pop.sizes[k]],
            mobility: vec![vec![1.0]],
            onset_c1: vec![pop.onset_c1[k]],
            onset_c2: vec![pop.onset_c2[k]],
            eta: pop.eta,
        };
        let own = VaccinePolicy { window: policy.window, doses: vec![policy.doses[k].clone()] };
        let xs = initial_state(&spec, &single, 100.0, 0.0);
        let tr = simulate(&spec, &single, &TRUTH, &xs, &grid, &own, &SolverOptions::default()).unwrap();
        for (i, st) in tr.states.iter().enumerate() {
            for s in 0..5 {
                assert_eq!(st[s], coupled.value(i, k, s));
            }
        }
    }
}

#[test]
fn noise_has_requested_spread() {
    let spec = ModelSpec::new(ModelKind::Seir);
    let pop = PopulationConfig::single(1000.0);
    let x0 = initial_state(&spec, &pop, 10.0, 0.0);
    let grid: Vec<f64> = (0..2500).map(|i| i as f64 * 0.01).collect();
    let tr = simulate(&spec, &pop, &TRUTH, &x0, &grid, &VaccinePolicy::zeros(1, [0, 0]), &SolverOptions::default()).unwrap();
    let obs = generate_noisy_observations(&tr, &[0.1; 4], 11).unwrap();
    let mut resid = Vec::new();
    for (s, row) in obs.values.iter().enumerate() {
        for (i, y) in row.iter().enumerate() {
            resid.push(y - tr.states[i][s]);
        }
    }
    assert_eq!(resid.len(), 10_000);
    let mean = resid.iter().sum::<f64>() / resid.len() as f64;
    let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64).sqrt();
    assert!((sd / 0.1 - 1.0).abs() < 0.03, "sd {sd}");
}

#[test]
fn integration_failure_reports_time() {
    let spec = ModelSpec::new(ModelKind::Seir);
    let pop = PopulationConfig::single(1000.0);
    // A negative start violates the slack immediately after the first step.
    let r = simulate(
        &spec,
        &pop,
        &TRUTH,
        &[1010.0, 0.0, -10.0, 0.0],
        &[0.0, 1.0],
        &VaccinePolicy::zeros(1, [0, 0]),
        &SolverOptions::default(),
    );
    match r {
        Err(epialloc_core::Error::Integration { time, .. }) => assert!(time > 0.0 && time <= 1.0),
        other => panic!("{other:?}"),
    }
}

fn kind_strategy() -> impl Strategy<Value = ModelKind> {
    prop_oneof![Just(ModelKind::Seir), Just(ModelKind::Seirm), Just(ModelKind::Sepihr), Just(ModelKind::Sepihrm)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn derivatives_sum_to_zero(
        kind in kind_strategy(),
        fracs in proptest::collection::vec(0.0f64..1.0, 21),
        unit in proptest::collection::vec(0.0f64..1.0, 5),
        doses in proptest::collection::vec(0.0f64..1e4, 3),
        t in 0.0f64..120.0,
    ) {
        let spec = ModelSpec::new(kind);
        let pop = three_pop(1e-4);
        let nc = spec.n_states();
        let mut x = vec![0.0; 3 * nc];
        for k in 0..3 {
            let w = &fracs[k * 7..k * 7 + nc];
            let total: f64 = w.iter().sum::<f64>().max(1e-9);
            for s in 0..nc {
                x[k * nc + s] = pop.sizes[k] * w[s] / total;
            }
        }
        let theta: Vec<f64> = spec.param_bounds.iter().zip(&unit).map(|(b, u)| b.lo + u * b.width()).collect();
        let policy = VaccinePolicy { window: [0, 120], doses: doses.iter().map(|d| vec![*d; 121]).collect() };
        let d = rhs(&spec, &pop, &theta, &x, t, &policy).unwrap();
        for k in 0..3 {
            let s: f64 = d[k * nc..(k + 1) * nc].iter().sum();
            let scale: f64 = d[k * nc..(k + 1) * nc].iter().map(|v| v.abs()).sum::<f64>().max(1.0);
            prop_assert!(s.abs() <= 1e-12 * scale, "{s} vs {scale}");
        }
    }

    #[test]
    fn immune_compartment_never_decreases(
        doses in proptest::collection::vec(0.0f64..1e4, 75),
        alpha in 0.2f64..2.0,
    ) {
        let spec = ModelSpec::new(ModelKind::Seirm);
        let pop = three_pop(1e-4);
        let x0 = initial_state(&spec, &pop, 100.0, 0.0);
        let policy = VaccinePolicy::from_genome(3, [16, 40], &doses).unwrap();
        let tr = simulate(&spec, &pop, &[alpha, 0.2, 0.1], &x0, &daily_grid(120), &policy, &SolverOptions { step: 0.25 }).unwrap();
        for k in 0..3 {
            let m = tr.series(k, 4);
            prop_assert!(m.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn onset_is_bounded_and_increasing(c1 in 0.01f64..1.0, c2 in -20.0f64..20.0, t in -10.0f64..10.0, dt in 0.001f64..5.0) {
        let a = sigmoid_onset(c1, c2, t);
        let b = sigmoid_onset(c1, c2, t + dt);
        prop_assert!(a > 0.0 && a < 1.0);
        prop_assert!(b >= a);
        prop_assert_eq!(sigmoid_onset(c1, c2, c2), 0.5);
    }
}
