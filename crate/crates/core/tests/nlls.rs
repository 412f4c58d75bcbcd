use epialloc_core::nlls::sum_squared_residuals;
use epialloc_core::{
    daily_grid, initial_state, nlls_fit, simulate, ModelKind, ModelSpec, PopulationConfig, SolverOptions,
    TimeSeriesData, VaccinePolicy,
};

fn seir_case() -> (ModelSpec, PopulationConfig, Vec<f64>, TimeSeriesData) {
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
    let data = TimeSeriesData {
        state_names: spec.state_names.clone(),
        times: tr.times[1..].to_vec(),
        values: (0..4).map(|s| tr.states[1..].iter().map(|row| row[s]).collect()).collect(),
        noise_sigma: vec![0.0; 4],
    };
    (spec, pop, x0, data)
}

#[test]
fn noiseless_data_recovers_truth() {
    let (spec, pop, x0, data) = seir_case();
    let fit = nlls_fit(&data, &spec, &pop, &x0, &[0.5, 0.5, 0.5], &SolverOptions::default()).unwrap();
    for (got, want) in fit.theta.iter().zip([0.9, 0.08, 0.1]) {
        assert!((got - want).abs() < 1e-3, "{:?}", fit.theta);
    }
    assert!(fit.residual < 1e-6, "{}", fit.residual);
    assert_eq!(fit.start_residuals.len(), 6);
}

#[test]
fn truth_has_smaller_residual_than_perturbation() {
    let (spec, pop, x0, data) = seir_case();
    let opts = SolverOptions::default();
    let at = |t: &[f64]| sum_squared_residuals(&spec, &pop, &x0, &data, t, &opts);
    assert!(at(&[0.9, 0.08, 0.1]) < 1e-20);
    assert!(at(&[0.9, 0.08, 0.1]) < at(&[1.35, 0.08, 0.1]));
}

#[test]
fn wrong_guess_length_is_rejected() {
    let (spec, pop, x0, data) = seir_case();
    assert!(nlls_fit(&data, &spec, &pop, &x0, &[0.5, 0.5], &SolverOptions::default()).is_err());
}
