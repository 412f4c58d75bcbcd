//! Discrete distributions, k-means scenario reduction and onset augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weighted point masses in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    pub locations: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn uniform(points: Vec<Vec<f64>>) -> Self {
        let n = points.len();
        Self { locations: points, probabilities: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.locations.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.locations.len() != self.probabilities.len() {
            return Err(Error::dim("one probability per location"));
        }
        let d = self.dim();
        if self.locations.iter().any(|p| p.len() != d || p.iter().any(|v| !v.is_finite())) {
            return Err(Error::domain("locations must be finite points of equal dimension"));
        }
        if self.probabilities.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::domain("probabilities must be nonnegative"));
        }
        let total: f64 = self.probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 * self.len().max(1) as f64 {
            return Err(Error::domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Probability-weighted mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (x, p) in self.locations.iter().zip(&self.probabilities) {
            for (mi, xi) in m.iter_mut().zip(x) {
                *mi += p * xi;
            }
        }
        m
    }
}

/// One scenario: model parameters, per-subpopulation onset midpoints and its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub theta: Vec<f64>,
    pub c2: Vec<f64>,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub param_names: Vec<String>,
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub source_chain: Option<String>,
    pub k: usize,
    pub seed: u64,
}

impl ScenarioSet {
    /// A single certain scenario.
    pub fn single(param_names: Vec<String>, theta: Vec<f64>, c2: Vec<f64>) -> Self {
        Self { param_names, scenarios: vec![Scenario { theta, c2, p: 1.0 }], source_chain: None, k: 1, seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn total_probability(&self) -> f64 {
        self.scenarios.iter().map(|s| s.p).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::domain("scenario set is empty"));
        }
        let np = self.param_names.len();
        let k = self.scenarios[0].c2.len();
        for (i, s) in self.scenarios.iter().enumerate() {
            if s.theta.len() != np || s.c2.len() != k {
                return Err(Error::dim(format!("scenario {i} has inconsistent dimensions")));
            }
            if !(s.p >= 0.0) || s.theta.iter().chain(&s.c2).any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("scenario {i} has invalid values")));
            }
        }
        let total = self.total_probability();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::domain(format!("scenario probabilities sum to {total}")));
        }
        Ok(())
    }

    /// The parameter part as a discrete distribution.
    pub fn parameter_distribution(&self) -> DiscreteDistribution {
        DiscreteDistribution {
            locations: self.scenarios.iter().map(|s| s.theta.clone()).collect(),
            probabilities: self.scenarios.iter().map(|s| s.p).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Cluster on per-dimension z-scores; centroids are still raw-coordinate means.
    #[serde(default)]
    pub standardize: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 300, seed: 0, standardize: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Probability mass of each cluster.
    pub weights: Vec<f64>,
    /// `Σ p_i ||x_i - ζ(i)||²` in the clustering coordinates.
    pub cost: f64,
    /// Cost after every Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus(points: &[Vec<f64>], w: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let pick = |weights: &[f64], rng: &mut ChaCha8Rng| {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return rng.random_range(0..n);
        }
        let mut u = rng.random::<f64>() * total;
        for (i, v) in weights.iter().enumerate() {
            if u < *v {
                return i;
            }
            u -= v;
        }
        weights.iter().rposition(|v| *v > 0.0).unwrap_or(n - 1)
    };
    let mut centroids = vec![points[pick(w, rng)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let score: Vec<f64> = d2.iter().zip(w).map(|(d, wi)| d * wi).collect();
        let c = points[pick(&score, rng)].clone();
        for (di, p) in d2.iter_mut().zip(points) {
            *di = di.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn weighted_centroids(points: &[Vec<f64>], w: &[f64], assign: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut mass = vec![0.0; k];
    for ((p, wi), a) in points.iter().zip(w).zip(assign) {
        mass[*a] += wi;
        for (s, v) in sums[*a].iter_mut().zip(p) {
            *s += wi * v;
        }
    }
    for (s, m) in sums.iter_mut().zip(&mass) {
        if *m > 0.0 {
            for v in s.iter_mut() {
                *v /= m;
            }
        }
    }
    (sums, mass)
}

fn lloyd(points: &[Vec<f64>], w: &[f64], k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let n = points.len();
    let mut centroids = seed_plus_plus(points, w, k, rng);
    let mut assign = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut mass = vec![0.0; k];
    for _ in 0..max_iter.max(1) {
        let near: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let mut new_assign: Vec<usize> = near.iter().map(|x| x.0).collect();
        // Reseed empty clusters with the point farthest from its centroid.
        let mut counts = vec![0usize; k];
        for a in &new_assign {
            counts[*a] += 1;
        }
        let mut dist: Vec<f64> = near.iter().map(|x| x.1).collect();
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[new_assign[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    counts[new_assign[i]] -= 1;
                    new_assign[i] = j;
                    counts[j] = 1;
                    dist[i] = 0.0;
                }
            }
        }
        let changed = new_assign != assign;
        assign = new_assign;
        let (c, m) = weighted_centroids(points, w, &assign, k);
        for j in 0..k {
            if m[j] > 0.0 || counts[j] > 0 {
                centroids[j] = c[j].clone();
            }
        }
        mass = m;
        let cost: f64 = points.iter().zip(w).zip(&assign).map(|((p, wi), a)| wi * sq_dist(p, &centroids[*a])).sum();
        history.push(cost);
        if !changed {
            break;
        }
    }
    if hartigan(points, w, &mut assign, &mut centroids, &mut mass) {
        let cost: f64 = points.iter().zip(w).zip(&assign).map(|((p, wi), a)| wi * sq_dist(p, &centroids[*a])).sum();
        history.push(cost);
    }
    KMeansResult { cost: *history.last().unwrap_or(&0.0), centroids, assignment: assign, weights: mass, history }
}

/// Single-point transfers that lower the weighted cost, with exact centroid updates.
/// Returns whether any point moved.
fn hartigan(points: &[Vec<f64>], w: &[f64], assign: &mut [usize], centroids: &mut [Vec<f64>], mass: &mut [f64]) -> bool {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for a in assign.iter() {
        counts[*a] += 1;
    }
    let mut moved_any = false;
    loop {
        let mut moved = false;
        for i in 0..points.len() {
            let (x, wi, a) = (&points[i], w[i], assign[i]);
            if counts[a] < 2 || !(wi > 0.0) || !(mass[a] - wi > 0.0) {
                continue;
            }
            let removal = wi * mass[a] / (mass[a] - wi) * sq_dist(x, &centroids[a]);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let add = wi * mass[b] / (mass[b] + wi) * sq_dist(x, &centroids[b]);
                if add < removal * (1.0 - 1e-12) && best.is_none_or(|(_, v)| add < v) {
                    best = Some((b, add));
                }
            }
            if let Some((b, _)) = best {
                for (c, v) in centroids[a].iter_mut().zip(x) {
                    *c = (*c * mass[a] - wi * v) / (mass[a] - wi);
                }
                for (c, v) in centroids[b].iter_mut().zip(x) {
                    *c = (*c * mass[b] + wi * v) / (mass[b] + wi);
                }
                mass[a] -= wi;
                mass[b] += wi;
                counts[a] -= 1;
                counts[b] += 1;
                assign[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        moved_any = true;
    }
    if moved_any {
        // Recompute from scratch to drop the rounding of incremental updates.
        let (c, m) = weighted_centroids(points, w, assign, k);
        for j in 0..k {
            if m[j] > 0.0 {
                centroids[j] = c[j].clone();
            }
        }
        mass.copy_from_slice(&m);
    }
    moved_any
}

/// Weighted k-means with k-means++ seeding and a Hartigan refinement pass; the best of `restarts` runs by final cost.
pub fn kmeans(dist: &DiscreteDistribution, k: usize, cfg: &KMeansConfig) -> Result<KMeansResult> {
    dist.validate()?;
    let n = dist.len();
    if k == 0 {
        return Err(Error::domain("k must be positive"));
    }
    if k > n {
        return Err(Error::domain(format!("k = {k} exceeds the {n} input points")));
    }
    let points = if cfg.standardize { standardized(dist) } else { dist.locations.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..cfg.restarts.max(1) {
        let r = lloyd(&points, &dist.probabilities, k, cfg.max_iter, &mut rng);
        if best.as_ref().is_none_or(|b| r.cost < b.cost) {
            best = Some(r);
        }
    }
    let mut best = best.expect("at least one restart");
    if cfg.standardize {
        best.centroids = weighted_centroids(&dist.locations, &dist.probabilities, &best.assignment, k).0;
    }
    Ok(best)
}

fn standardized(dist: &DiscreteDistribution) -> Vec<Vec<f64>> {
    let mean = dist.mean();
    let d = dist.dim();
    let mut var = vec![0.0; d];
    for (x, p) in dist.locations.iter().zip(&dist.probabilities) {
        for j in 0..d {
            var[j] += p * (x[j] - mean[j]).powi(2);
        }
    }
    let sd: Vec<f64> = var.iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    dist.locations
        .iter()
        .map(|x| (0..d).map(|j| (x[j] - mean[j]) / sd[j]).collect())
        .collect()
}

/// Reduces a discrete distribution to `k` centroids with cluster masses as probabilities.
///
/// Returns the reduced distribution and its within-cluster cost, which equals the
/// squared type-2 Wasserstein distance to the input for the nearest-centroid plan.
pub fn reduce_scenarios(
    samples: &DiscreteDistribution,
    k: usize,
    cfg: &KMeansConfig,
) -> Result<(DiscreteDistribution, f64)> {
    let r = kmeans(samples, k, cfg)?;
    let total: f64 = r.weights.iter().sum();
    let cost = if cfg.standardize {
        samples
            .locations
            .iter()
            .zip(&samples.probabilities)
            .zip(&r.assignment)
            .map(|((p, w), a)| w * sq_dist(p, &r.centroids[*a]))
            .sum()
    } else {
        r.cost
    };
    Ok((
        DiscreteDistribution { locations: r.centroids, probabilities: r.weights.iter().map(|w| w / total).collect() },
        cost,
    ))
}

/// Wraps a reduced parameter distribution as a scenario set with a shared onset vector.
pub fn scenario_set_from(
    param_names: Vec<String>,
    reduced: &DiscreteDistribution,
    c2: &[f64],
    source_chain: Option<String>,
    seed: u64,
) -> ScenarioSet {
    ScenarioSet {
        param_names,
        scenarios: reduced
            .locations
            .iter()
            .zip(&reduced.probabilities)
            .map(|(t, p)| Scenario { theta: t.clone(), c2: c2.to_vec(), p: *p })
            .collect(),
        source_chain,
        k: reduced.len(),
        seed,
    }
}

/// Replicates every scenario across the Cartesian product of per-subpopulation onset
/// grids (the last subpopulation varies fastest), scaling probabilities by `1 / Π m_k`.
pub fn augment_onset(base: &ScenarioSet, onset_grid: &[Vec<f64>]) -> Result<ScenarioSet> {
    if onset_grid.is_empty() || onset_grid.iter().any(Vec::is_empty) {
        return Err(Error::domain("every subpopulation needs at least one onset value"));
    }
    let mut combos: Vec<Vec<f64>> = vec![Vec::new()];
    for grid in onset_grid {
        combos = combos
            .iter()
            .flat_map(|c| {
                grid.iter().map(move |v| {
                    let mut n = c.clone();
                    n.push(*v);
                    n
                })
            })
            .collect();
    }
    let scale = 1.0 / combos.len() as f64;
    let scenarios = base
        .scenarios
        .iter()
        .flat_map(|s| combos.iter().map(move |c| Scenario { theta: s.theta.clone(), c2: c.clone(), p: s.p * scale }))
        .collect();
    Ok(ScenarioSet { scenarios, ..base.clone() })
}

/// Weighted quantile by linear interpolation of the cumulative mass.
fn weighted_quantile(sorted: &[(f64, f64)], q: f64) -> f64 {
    let total: f64 = sorted.iter().map(|x| x.1).sum();
    let target = q * total;
    let mut acc = 0.0;
    for (v, w) in sorted {
        acc += w;
        if acc >= target {
            return *v;
        }
    }
    sorted.last().map_or(0.0, |x| x.0)
}

/// Largest histogram size used by [`distribution_mode`].
pub const MAX_MODE_BINS: usize = 2000;

/// Per-dimension mode: midpoint of the heaviest bin of a weighted histogram with
/// `max(50, Freedman–Diaconis)` bins.
pub fn distribution_mode(dist: &DiscreteDistribution) -> Result<Vec<f64>> {
    if dist.is_empty() {
        return Err(Error::domain("cannot take the mode of an empty distribution"));
    }
    let n = dist.len() as f64;
    let mut out = Vec::with_capacity(dist.dim());
    for j in 0..dist.dim() {
        let mut col: Vec<(f64, f64)> =
            dist.locations.iter().zip(&dist.probabilities).map(|(x, p)| (x[j], *p)).collect();
        col.sort_by(|a, b| a.0.total_cmp(&b.0));
        let lo = col[0].0;
        let hi = col[col.len() - 1].0;
        if !(hi > lo) {
            out.push(lo);
            continue;
        }
        let iqr = weighted_quantile(&col, 0.75) - weighted_quantile(&col, 0.25);
        let fd = if iqr > 0.0 { ((hi - lo) / (2.0 * iqr * n.powf(-1.0 / 3.0))).ceil() as usize } else { 0 };
        let bins = fd.clamp(50, MAX_MODE_BINS);
        let width = (hi - lo) / bins as f64;
        let mut mass = vec![0.0; bins];
        for (v, p) in &col {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            mass[b] += p;
        }
        let mut top = 0;
        for (b, m) in mass.iter().enumerate() {
            if *m > mass[top] {
                top = b;
            }
        }
        out.push(lo + (top as f64 + 0.5) * width);
    }
    Ok(out)
}
