use std::collections::BTreeMap;

use epialloc_core::mcmc::mh_accept;
use epialloc_core::model::Interval;
use epialloc_core::{mh_sample, GpHyperParams, MhConfig, OdeSystem, StateHyper, TimeSeriesData};
use epialloc_testkit::posterior::DecaySetup;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

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
    fn param_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }
}

fn setup() -> DecaySetup {
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

fn inputs(s: &DecaySetup) -> (TimeSeriesData, GpHyperParams) {
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
fn burn_in_only_returns_empty_chain() {
    let (data, hp) = inputs(&setup());
    let chain = mh_sample(&data, &Decay, &hp, &MhConfig::new(200, 200, 1)).unwrap();
    assert!(chain.is_empty());
    assert_eq!(chain.iterations, 200);
    assert_eq!(chain.param_names, vec!["theta".to_string()]);
}

#[test]
fn retained_count_and_bounds() {
    let (data, hp) = inputs(&setup());
    let chain = mh_sample(&data, &Decay, &hp, &MhConfig::new(700, 200, 2)).unwrap();
    assert_eq!(chain.len(), 500);
    assert!(chain.samples.iter().all(|s| (0.0..=1.0).contains(&s[0])));
    assert!(chain.acceptance.theta > 0.0 && chain.acceptance.theta < 1.0);
}

#[test]
fn same_seed_same_chain() {
    let (data, hp) = inputs(&setup());
    let mut cfg = MhConfig::new(2000, 500, 17);
    cfg.store_states = true;
    let a = mh_sample(&data, &Decay, &hp, &cfg).unwrap();
    let b = mh_sample(&data, &Decay, &hp, &cfg).unwrap();
    assert_eq!(a, b);
    cfg.seed = 18;
    let c = mh_sample(&data, &Decay, &hp, &cfg).unwrap();
    assert_ne!(a.samples, c.samples);
}

/// Standard error of the mean by non-overlapping batch means.
fn batch_se(v: &[f64], batches: usize) -> f64 {
    let size = v.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| v[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

#[test]
fn different_seeds_agree_within_three_standard_errors() {
    let (data, hp) = inputs(&setup());
    let a = mh_sample(&data, &Decay, &hp, &MhConfig::new(40_000, 2_000, 1)).unwrap().column(0);
    let b = mh_sample(&data, &Decay, &hp, &MhConfig::new(40_000, 2_000, 2)).unwrap().column(0);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let se = (batch_se(&a, 40).powi(2) + batch_se(&b, 40).powi(2)).sqrt();
    assert!((mean(&a) - mean(&b)).abs() < 3.0 * se, "{} vs {} (se {se})", mean(&a), mean(&b));
}

#[test]
fn acceptance_rule_satisfies_detailed_balance_on_two_states() {
    let pi: [f64; 2] = [0.3, 0.7];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut state = 0usize;
    let n = 400_000;
    let mut visits = [0usize; 2];
    let mut flow = [0usize; 2];
    for _ in 0..n {
        let prop = 1 - state;
        if mh_accept((pi[prop] / pi[state]).ln(), &mut rng) {
            flow[state] += 1;
            state = prop;
        }
        visits[state] += 1;
    }
    let f0 = visits[0] as f64 / n as f64;
    assert!((f0 - 0.3).abs() < 0.005, "{f0}");
    // Flows 0→1 and 1→0 differ by at most one on a two-state chain.
    assert!(flow[0].abs_diff(flow[1]) <= 1);
}

#[test]
fn histogram_matches_grid_posterior() {
    let s = setup();
    let (data, hp) = inputs(&s);
    let mut cfg = MhConfig::new(505_000, 5_000, 7);
    cfg.thin = 5;
    let chain = mh_sample(&data, &Decay, &hp, &cfg).unwrap();
    assert_eq!(chain.len(), 100_000);
    let bins = 20;
    let exact = s.binned_posterior(bins, 50);
    let mut hist = vec![0.0; bins];
    for v in chain.column(0) {
        hist[((v * bins as f64) as usize).min(bins - 1)] += 1.0 / chain.len() as f64;
    }
    let tv = 0.5 * hist.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv < 0.05, "total variation {tv}");
}
