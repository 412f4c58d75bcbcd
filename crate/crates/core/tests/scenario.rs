use epialloc_core::scenario::{kmeans, scenario_set_from};
use epialloc_core::transport::optimal_transport;
use epialloc_core::{
    augment_onset, distribution_mode, reduce_scenarios, wasserstein_distance, DiscreteDistribution, KMeansConfig,
};
use epialloc_testkit::enumerate::{best_partition_cost, transport_by_vertices};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_dist(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteDistribution {
    let locations = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    DiscreteDistribution { locations, probabilities: raw.iter().map(|v| v / total).collect() }
}

fn cost_matrix(p: &DiscreteDistribution, q: &DiscreteDistribution, l: f64) -> Vec<Vec<f64>> {
    p.locations
        .iter()
        .map(|a| {
            q.locations
                .iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt().powf(l))
                .collect()
        })
        .collect()
}

#[test]
fn transport_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..40 {
        let n = rng.random_range(1..5);
        let m = rng.random_range(1..4);
        let d = rng.random_range(1..4);
        let p = random_dist(&mut rng, n, d);
        let q = random_dist(&mut rng, m, d);
        for l in [1.0, 2.0] {
            let sol = optimal_transport(&p, &q, l).unwrap();
            let oracle = transport_by_vertices(&p.probabilities, &q.probabilities, &cost_matrix(&p, &q, l));
            assert!((sol.cost - oracle).abs() < 1e-10, "{} vs {oracle}", sol.cost);
            for (i, row) in sol.plan.iter().enumerate() {
                assert!((row.iter().sum::<f64>() - p.probabilities[i]).abs() < 1e-10);
                assert!(row.iter().all(|v| *v >= -1e-12));
            }
            for j in 0..m {
                assert!((sol.plan.iter().map(|r| r[j]).sum::<f64>() - q.probabilities[j]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn two_point_example() {
    let p = DiscreteDistribution { locations: vec![vec![0.0], vec![1.0]], probabilities: vec![0.5, 0.5] };
    let q = DiscreteDistribution { locations: vec![vec![0.5]], probabilities: vec![1.0] };
    assert!((wasserstein_distance(&p, &q, 2.0).unwrap() - 0.5).abs() < 1e-12);
    assert!(wasserstein_distance(&p, &p, 2.0).unwrap() < 1e-12);
}

#[test]
fn reduction_matches_partition_optimum_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..60 {
        let n = rng.random_range(2..=9);
        let d = rng.random_range(1..=3);
        let m = rng.random_range(1..=3usize).min(n);
        let p = random_dist(&mut rng, n, d);
        let cfg = KMeansConfig { seed: trial, ..KMeansConfig::default() };
        let (reduced, cost) = reduce_scenarios(&p, m, &cfg).unwrap();
        let optimum = best_partition_cost(&p.locations, &p.probabilities, m);
        let w2 = wasserstein_distance(&p, &reduced, 2.0).unwrap();
        assert!((cost - optimum).abs() < 1e-9, "trial {trial}: {cost} vs {optimum}");
        assert!((w2 * w2 - optimum).abs() < 1e-9, "trial {trial}: {} vs {optimum}", w2 * w2);
    }
}

#[test]
fn reduction_preserves_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = random_dist(&mut rng, 300, 3);
    let (q, _) = reduce_scenarios(&p, 7, &KMeansConfig::default()).unwrap();
    for (a, b) in p.mean().iter().zip(q.mean()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn cost_decreases_with_more_centroids() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = random_dist(&mut rng, 200, 2);
    let mut last = f64::INFINITY;
    for k in 1..=12 {
        let r = kmeans(&p, k, &KMeansConfig::default()).unwrap();
        assert!(r.cost <= last + 1e-12, "k={k}: {} > {last}", r.cost);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        last = r.cost;
    }
    let all = kmeans(&p, 200, &KMeansConfig::default()).unwrap();
    assert!(all.cost < 1e-20);
}

#[test]
fn seeded_reduction_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p = random_dist(&mut rng, 500, 3);
    let cfg = KMeansConfig { seed: 5, ..KMeansConfig::default() };
    assert_eq!(reduce_scenarios(&p, 10, &cfg).unwrap(), reduce_scenarios(&p, 10, &cfg).unwrap());
}

#[test]
fn mode_of_normal_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let normal = Normal::new(5.0, 1.0).unwrap();
    let pts: Vec<Vec<f64>> = (0..100_000).map(|_| vec![normal.sample(&mut rng)]).collect();
    let mode = distribution_mode(&DiscreteDistribution::uniform(pts)).unwrap();
    assert!((mode[0] - 5.0).abs() < 0.15, "{mode:?}");
}

#[test]
fn augmentation_layout() {
    let reduced = DiscreteDistribution {
        locations: vec![vec![0.9, 0.08, 0.1], vec![1.0, 0.1, 0.12]],
        probabilities: vec![0.25, 0.75],
    };
    let names = vec!["alpha".to_string(), "beta".to_string(), "gamma".to_string()];
    let base = scenario_set_from(names, &reduced, &[20.0, 30.0, 10.0], None, 0);
    let grids = vec![vec![19.0, 22.0], vec![29.0, 32.0], vec![9.0, 12.0]];
    let set = augment_onset(&base, &grids).unwrap();
    assert_eq!(set.len(), 16);
    assert!(set.validate().is_ok());
    assert_eq!(set.scenarios[0].c2, vec![19.0, 29.0, 9.0]);
    assert_eq!(set.scenarios[1].c2, vec![19.0, 29.0, 12.0]);
    assert_eq!(set.scenarios[8].theta, reduced.locations[1]);
    assert!((set.scenarios[8].p - 0.75 / 8.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reduced_probabilities_sum_to_one(seed in 0u64..1000, n in 5usize..80, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_dist(&mut rng, n, 2);
        let (q, cost) = reduce_scenarios(&p, k.min(n), &KMeansConfig { seed, restarts: 2, ..KMeansConfig::default() }).unwrap();
        prop_assert!((q.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(q.probabilities.iter().all(|v| *v >= 0.0));
        prop_assert!(cost >= 0.0);
    }

    #[test]
    fn augmented_probabilities_sum_to_one(
        probs in proptest::collection::vec(0.01f64..1.0, 1..10),
        sizes in proptest::collection::vec(1usize..4, 1..4),
    ) {
        let total: f64 = probs.iter().sum();
        let reduced = DiscreteDistribution {
            locations: probs.iter().map(|p| vec![*p]).collect(),
            probabilities: probs.iter().map(|p| p / total).collect(),
        };
        let base = scenario_set_from(vec!["a".into()], &reduced, &vec![0.0; sizes.len()], None, 0);
        let grids: Vec<Vec<f64>> = sizes.iter().map(|m| (0..*m).map(|i| i as f64).collect()).collect();
        let set = augment_onset(&base, &grids).unwrap();
        prop_assert_eq!(set.len(), probs.len() * sizes.iter().product::<usize>());
        prop_assert!((set.total_probability() - 1.0).abs() < 1e-12);
    }
}
