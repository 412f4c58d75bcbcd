use std::collections::BTreeMap;

use epialloc_core::density::GradientMatching;
use epialloc_core::gp::{fit_state, log_marginal_likelihood, rbf_entries};
use epialloc_core::model::Interval;
use epialloc_core::solver::{daily_grid, simulate, SolverOptions};
use epialloc_core::{
    fit_gp_hyperparams, generate_noisy_observations, gp_conditional_derivative, initial_state, log_density,
    rbf_kernel_matrices, EpidemicSystem, GpHyperParams, ModelKind, ModelSpec, OdeSystem, PopulationConfig,
    StateHyper, TimeSeriesData, VaccinePolicy,
};
use epialloc_testkit::dense::{self, symmetric_eigenvalues};
use epialloc_testkit::posterior::{kernel_blocks, DecaySetup};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Central differences of the base kernel in each argument.
fn fd_blocks(ti: f64, tj: f64, sf: f64, ell: f64) -> [f64; 4] {
    let h = 1e-5;
    let h2 = 1e-4;
    let k = |a: f64, b: f64| sf * sf * (-(a - b) * (a - b) / (2.0 * ell * ell)).exp();
    let c = k(ti, tj);
    let dt = (k(ti + h, tj) - k(ti - h, tj)) / (2.0 * h);
    let dtp = (k(ti, tj + h) - k(ti, tj - h)) / (2.0 * h);
    let dd = (k(ti + h2, tj + h2) - k(ti + h2, tj - h2) - k(ti - h2, tj + h2) + k(ti - h2, tj - h2)) / (4.0 * h2 * h2);
    [c, dt, dtp, dd]
}

#[test]
fn kernel_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let times: Vec<f64> = (0..20).map(|i| i as f64 * 0.75).collect();
    for _ in 0..50 {
        let sf = rng.random_range(0.2..3.0);
        let ell = rng.random_range(0.5..5.0);
        let m = rbf_kernel_matrices(&times, sf, ell).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let fd = fd_blocks(times[i], times[j], sf, ell);
                assert!((m.c[(i, j)] - fd[0]).abs() < 1e-12);
                assert!((m.dc[(i, j)] - fd[1]).abs() < 1e-6, "dC/dt at ({i},{j})");
                assert!((m.cd[(i, j)] - fd[2]).abs() < 1e-6, "dC/dt' at ({i},{j})");
                let scale = (sf * sf / (ell * ell)).max(1.0);
                assert!((m.ddc[(i, j)] - fd[3]).abs() < 1e-6 * scale, "d2C at ({i},{j})");
                assert_eq!(m.cd[(i, j)], m.dc[(j, i)]);
            }
        }
    }
}

#[test]
fn second_derivative_vanishes_at_one_length_scale() {
    let [c, _, _, ddc] = rbf_entries(1.0, 1.0, 1.0);
    assert!((c - (-0.5f64).exp()).abs() < 1e-15);
    assert_eq!(ddc, 0.0);
}

#[test]
fn conditional_matches_dense_hand_computation() {
    let times = [0.0, 1.0, 2.0];
    let m = rbf_kernel_matrices(&times, 1.0, 1.0).unwrap();
    let x = [0.3, -0.2, 0.5];
    let (mean, a) = gp_conditional_derivative(&x, &m).unwrap();

    let (c, dc, cd, ddc) = kernel_blocks(&times, 1.0, 1.0);
    let (cinv, _) = dense::inverse_logdet(&c).unwrap();
    let d = dense::matmul(&dc, &cinv);
    let expected_mean = dense::matvec(&d, &x);
    let expected_a = dense::add(&ddc, &dense::matmul(&d, &cd), -1.0);
    for i in 0..3 {
        assert!((mean[i] - expected_mean[i]).abs() < 1e-8, "{mean:?} vs {expected_mean:?}");
        for j in 0..3 {
            assert!((a[(i, j)] - expected_a[i][j]).abs() < 1e-8);
        }
    }
}

#[test]
fn derivative_covariance_is_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let n = rng.random_range(3..15);
        let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let m = rbf_kernel_matrices(&times, rng.random_range(0.5..3.0), rng.random_range(0.5..4.0)).unwrap();
        let (_, a) = gp_conditional_derivative(&vec![0.0; n], &m).unwrap();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
        let ev = symmetric_eigenvalues(&rows);
        assert!(ev.iter().all(|v| *v >= -1e-9), "{ev:?}");
    }
}

#[test]
fn two_point_likelihood_by_hand() {
    let hp = StateHyper { sigma_f: 0.8, length_scale: 2.0, sigma_obs: 0.3 };
    let c01 = 0.64 * (-1.0f64 / 8.0).exp();
    let d = 0.64 + 0.09;
    let expected = -0.5 * (d * d - c01 * c01).ln() - (2.0 * std::f64::consts::PI).ln();
    assert!((log_marginal_likelihood(&[0.0, 1.0], &[0.0, 0.0], &hp) - expected).abs() < 1e-13);
}

fn draw_from_gp(sf: f64, ell: f64, sigma: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
    let (c, _, _, _) = kernel_blocks(&times, sf, ell);
    // Cholesky by hand for the sampling draw.
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = c[i][j] + if i == j { 1e-9 } else { 0.0 };
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = if i == j { s.sqrt() } else { s / l[j][j] };
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let y = (0..n)
        .map(|i| (0..=i).map(|k| l[i][k] * z[k]).sum::<f64>() + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (times, y)
}

#[test]
fn recovers_length_scale_within_factor_two() {
    let mut ok = 0;
    for seed in 0..5 {
        let (times, y) = draw_from_gp(1.0, 3.0, 0.1, 50, seed);
        let data = TimeSeriesData { state_names: vec!["A".into()], times, values: vec![y], noise_sigma: vec![0.1] };
        let hp = fit_gp_hyperparams(&data, 1e-2).unwrap();
        let ell = hp.states["A"].length_scale;
        if (1.5..=6.0).contains(&ell) {
            ok += 1;
        }
    }
    assert!(ok >= 4, "only {ok} of 5 draws recovered the length scale");
}

#[test]
fn fit_beats_start_and_random_probes() {
    let (times, y) = draw_from_gp(2.0, 2.0, 0.2, 30, 42);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let centered: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let (best, starts) = fit_state(&times, &y).unwrap();
    let best_ll = log_marginal_likelihood(&times, &centered, &best);
    for s in &starts {
        assert!(best_ll >= log_marginal_likelihood(&times, &centered, s));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let probe = StateHyper {
            sigma_f: rng.random_range(0.1..5.0),
            length_scale: rng.random_range(0.3..10.0),
            sigma_obs: rng.random_range(0.01..2.0),
        };
        assert!(best_ll >= log_marginal_likelihood(&times, &centered, &probe));
    }
}

struct Decay;

impl OdeSystem for Decay {
    fn state_names(&self) -> Vec<String> {
        vec!["x".into()]
    }
    fn param_bounds(&self) -> Vec<Interval> {
        vec![Interval::new(0.0, 1.0)]
    }
    fn eval(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        out[0] = -theta[0] * x[0];
    }
}

fn decay_setup() -> DecaySetup {
    DecaySetup {
        times: vec![0.0, 1.0, 2.0],
        y: vec![2.05, 1.18, 0.77],
        sigma_f: 1.0,
        length_scale: 2.0,
        sigma_obs: 0.1,
        lambda: 1e-2,
        bounds: (0.0, 1.0),
    }
}

fn decay_inputs(s: &DecaySetup) -> (TimeSeriesData, GpHyperParams) {
    let data = TimeSeriesData {
        state_names: vec!["x".into()],
        times: s.times.clone(),
        values: vec![s.y.clone()],
        noise_sigma: vec![s.sigma_obs],
    };
    let mut states = BTreeMap::new();
    states.insert(
        "x".to_string(),
        StateHyper { sigma_f: s.sigma_f, length_scale: s.length_scale, sigma_obs: s.sigma_obs },
    );
    (data, GpHyperParams { states, lambda: s.lambda })
}

#[test]
fn linear_decay_density_matches_hand_assembly() {
    let setup = decay_setup();
    let (data, hp) = decay_inputs(&setup);
    for (x, theta) in [([2.0, 1.2, 0.75], 0.5), ([2.1, 1.1, 0.8], 0.3), ([1.9, 1.25, 0.7], 0.9)] {
        let got = log_density(&[x.to_vec()], &[theta], &data, &hp, &Decay).unwrap();
        let want = setup.log_density(&x, theta);
        assert!((got - want).abs() < 1e-8 * want.abs().max(1.0), "{got} vs {want}");
    }
    assert_eq!(log_density(&[vec![2.0, 1.2, 0.75]], &[1.5], &data, &hp, &Decay).unwrap(), f64::NEG_INFINITY);
}

fn seir_dataset(sigma: f64) -> (EpidemicSystem, TimeSeriesData) {
    let spec = ModelSpec::new(ModelKind::Seir);
    let pop = PopulationConfig::single(1000.0);
    let x0 = initial_state(&spec, &pop, 10.0, 0.0);
    let tr = simulate(
        &spec,
        &pop,
        &[0.9, 0.08, 0.1],
        &x0,
        &daily_grid(15),
        &VaccinePolicy::zeros(1, [0, 0]),
        &SolverOptions::default(),
    )
    .unwrap();
    let data = generate_noisy_observations(&tr, &[sigma; 4], 7).unwrap().window(1.0, 15.0);
    (EpidemicSystem::new(spec, 1000.0).unwrap(), data)
}

#[test]
fn truth_beats_perturbed_parameters() {
    let (sys, clean) = seir_dataset(0.0);
    let (_, noisy) = seir_dataset(0.1);
    let hp = fit_gp_hyperparams(&noisy, 1e-2).unwrap();
    let x = clean.values.clone();
    let truth = log_density(&x, &[0.9, 0.08, 0.1], &noisy, &hp, &sys).unwrap();
    let perturbed = log_density(&x, &[1.35, 0.12, 0.15], &noisy, &hp, &sys).unwrap();
    assert!(truth > perturbed, "{truth} vs {perturbed}");
}

#[test]
fn large_lambda_flattens_theta_dependence() {
    let (sys, data) = seir_dataset(0.1);
    let mut hp = fit_gp_hyperparams(&data, 1e-2).unwrap();
    let x = data.values.clone();
    let grad_norm = |hp: &GpHyperParams, theta: [f64; 3]| {
        let gm = GradientMatching::new(&sys, &data, hp).unwrap();
        let h = 1e-6;
        (0..3)
            .map(|j| {
                let mut a = theta;
                let mut b = theta;
                a[j] += h;
                b[j] -= h;
                ((gm.log_density(&x, &a) - gm.log_density(&x, &b)) / (2.0 * h)).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    };
    for theta in [[0.9, 0.08, 0.1], [0.5, 0.3, 0.4], [1.5, 0.5, 0.2]] {
        let mut last = f64::INFINITY;
        let mut first = None;
        for lambda in [1e-2, 1e2, 1e6, 1e10] {
            hp.lambda = lambda;
            let g = grad_norm(&hp, theta);
            assert!(g < last, "gradient did not shrink at {theta:?}: {g} >= {last}");
            first.get_or_insert(g);
            last = g;
        }
        assert!(last < 1e-6 * first.unwrap(), "{last} vs {first:?}");
    }
}
