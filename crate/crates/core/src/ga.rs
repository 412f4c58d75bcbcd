//! Real-coded genetic algorithm with constrained domination (single objective).

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::{AllocationSetup, PolicyEvaluator};
use crate::error::{Error, Result};
use crate::model::{Interval, VaccinePolicy};
use crate::scenario::ScenarioSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    /// Probability that an offspring is mutated; each gene then mutates with probability `1 / n`.
    pub mutation_prob: f64,
    pub eta_c: f64,
    pub eta_m: f64,
    pub seed: u64,
    /// Seed the initial population with the all-lower-bound genome.
    #[serde(default = "default_true")]
    pub include_zero_policy: bool,
}

fn default_true() -> bool {
    true
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 100,
            generations: 200,
            crossover_prob: 0.9,
            mutation_prob: 0.5,
            eta_c: 10.0,
            eta_m: 10.0,
            seed: 0,
            include_zero_policy: true,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.population % 2 != 0 {
            return Err(Error::domain("population must be even and positive"));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) || !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::domain("probabilities must lie in [0, 1]"));
        }
        if !(self.eta_c > 0.0 && self.eta_m > 0.0) {
            return Err(Error::domain("distribution indices must be positive"));
        }
        Ok(())
    }
}

/// Objective value and total constraint violation of one genome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub objective: f64,
    pub violation: f64,
}

impl Fitness {
    pub fn is_feasible(&self) -> bool {
        self.violation <= 0.0
    }
}

/// Constrained domination: feasible beats infeasible, then lower violation, then lower objective.
///
/// Objectives of two infeasible points are not compared. NaN objectives rank last.
pub fn constrained_cmp(a: &Fitness, b: &Fitness) -> Ordering {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        (false, false) => a.violation.total_cmp(&b.violation),
        (true, true) => {
            let fa = if a.objective.is_nan() { f64::INFINITY } else { a.objective };
            let fb = if b.objective.is_nan() { f64::INFINITY } else { b.objective };
            fa.total_cmp(&fb)
        }
    }
}

/// A box-bounded minimization problem with a separate constraint violation.
pub trait GaProblem: Sync {
    fn bounds(&self) -> Vec<Interval>;
    fn violation(&self, genes: &[f64]) -> f64;
    /// Only called for feasible genomes.
    fn objective(&self, genes: &[f64]) -> f64;

    fn fitness(&self, genes: &[f64]) -> Fitness {
        let violation = self.violation(genes);
        let objective = if violation <= 0.0 { self.objective(genes) } else { f64::NAN };
        Fitness { objective, violation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub generation: usize,
    /// Best feasible objective found so far (`inf` if none).
    pub best_feasible_objective: f64,
    /// Smallest violation in the current population.
    pub best_violation: f64,
    /// Mean objective over the feasible members of the current population.
    pub mean_objective: f64,
}

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("generation,best_feasible_objective,best_violation,mean_objective\n");
    for r in trace {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e}",
            r.generation, r.best_feasible_objective, r.best_violation, r.mean_objective
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaResult {
    pub genes: Vec<f64>,
    pub objective: f64,
    pub trace: Vec<TraceRow>,
    pub evaluations: usize,
}

/// Bounded simulated binary crossover, applied per gene with probability ½.
pub fn sbx_crossover<R: Rng + ?Sized>(
    p1: &[f64],
    p2: &[f64],
    bounds: &[Interval],
    eta: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    for j in 0..p1.len() {
        if rng.random::<f64>() > 0.5 {
            continue;
        }
        let (lo, hi) = (bounds[j].lo, bounds[j].hi);
        if (p1[j] - p2[j]).abs() <= 1e-14 || hi <= lo {
            continue;
        }
        let y1 = p1[j].min(p2[j]);
        let y2 = p1[j].max(p2[j]);
        let u: f64 = rng.random();
        let betaq = |beta: f64| {
            let alpha = 2.0 - beta.powf(-(eta + 1.0));
            if u <= 1.0 / alpha {
                (u * alpha).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
            }
        };
        let b1 = betaq(1.0 + 2.0 * (y1 - lo) / (y2 - y1));
        let b2 = betaq(1.0 + 2.0 * (hi - y2) / (y2 - y1));
        let v1 = (0.5 * ((y1 + y2) - b1 * (y2 - y1))).clamp(lo, hi);
        let v2 = (0.5 * ((y1 + y2) + b2 * (y2 - y1))).clamp(lo, hi);
        if rng.random::<f64>() <= 0.5 {
            c1[j] = v2;
            c2[j] = v1;
        } else {
            c1[j] = v1;
            c2[j] = v2;
        }
    }
    (c1, c2)
}

/// Bounded polynomial mutation; each gene mutates with probability `per_gene`.
pub fn polynomial_mutation<R: Rng + ?Sized>(genes: &mut [f64], bounds: &[Interval], eta: f64, per_gene: f64, rng: &mut R) {
    for (y, b) in genes.iter_mut().zip(bounds) {
        if rng.random::<f64>() > per_gene {
            continue;
        }
        let (lo, hi) = (b.lo, b.hi);
        if hi <= lo {
            *y = lo;
            continue;
        }
        let d1 = (*y - lo) / (hi - lo);
        let d2 = (hi - *y) / (hi - lo);
        let r: f64 = rng.random();
        let pw = 1.0 / (eta + 1.0);
        let dq = if r <= 0.5 {
            let v = 2.0 * r + (1.0 - 2.0 * r) * (1.0 - d1).powf(eta + 1.0);
            v.powf(pw) - 1.0
        } else {
            let v = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * (1.0 - d2).powf(eta + 1.0);
            1.0 - v.powf(pw)
        };
        *y = (*y + dq * (hi - lo)).clamp(lo, hi);
    }
}

struct Member {
    genes: Vec<f64>,
    fit: Fitness,
}

fn evaluate_batch<P: GaProblem + ?Sized>(problem: &P, genomes: Vec<Vec<f64>>) -> Vec<Member> {
    genomes
        .into_par_iter()
        .map(|g| {
            let fit = problem.fitness(&g);
            Member { genes: g, fit }
        })
        .collect()
}

fn tournament(pop: &[Member], rng: &mut ChaCha8Rng) -> usize {
    let a = rng.random_range(0..pop.len());
    let b = rng.random_range(0..pop.len());
    match constrained_cmp(&pop[a].fit, &pop[b].fit) {
        Ordering::Less => a,
        Ordering::Greater => b,
        Ordering::Equal => a.min(b),
    }
}

fn trace_row(generation: usize, pop: &[Member], best: Option<&(Vec<f64>, f64)>) -> TraceRow {
    let feasible: Vec<f64> = pop.iter().filter(|m| m.fit.is_feasible()).map(|m| m.fit.objective).collect();
    TraceRow {
        generation,
        best_feasible_objective: best.map_or(f64::INFINITY, |b| b.1),
        best_violation: pop.iter().map(|m| m.fit.violation).fold(f64::INFINITY, f64::min),
        mean_objective: if feasible.is_empty() {
            f64::NAN
        } else {
            feasible.iter().sum::<f64>() / feasible.len() as f64
        },
    }
}

/// Elitist (μ + λ) generational loop. Returns the best feasible genome seen in any generation.
pub fn ga_optimize<P: GaProblem + ?Sized>(problem: &P, ga: &GaConfig) -> Result<GaResult> {
    ga.validate()?;
    let bounds = problem.bounds();
    let n = bounds.len();
    if bounds.iter().any(|b| !(b.hi >= b.lo)) {
        return Err(Error::domain("gene bounds must be nonempty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ga.seed);
    let per_gene = if n == 0 { 0.0 } else { 1.0 / n as f64 };

    let mut init = Vec::with_capacity(ga.population);
    if ga.include_zero_policy {
        init.push(bounds.iter().map(|b| b.lo).collect::<Vec<f64>>());
    }
    while init.len() < ga.population {
        init.push(bounds.iter().map(|b| b.lo + rng.random::<f64>() * (b.hi - b.lo)).collect());
    }
    let mut pop = evaluate_batch(problem, init);
    let mut evaluations = pop.len();
    pop.sort_by(|a, b| constrained_cmp(&a.fit, &b.fit));

    let mut best: Option<(Vec<f64>, f64)> = None;
    let update_best = |pop: &[Member], best: &mut Option<(Vec<f64>, f64)>| {
        for m in pop.iter().filter(|m| m.fit.is_feasible() && !m.fit.objective.is_nan()) {
            if best.as_ref().is_none_or(|b| m.fit.objective < b.1) {
                *best = Some((m.genes.clone(), m.fit.objective));
            }
        }
    };
    update_best(&pop, &mut best);
    let mut trace = vec![trace_row(0, &pop, best.as_ref())];

    for generation in 1..=ga.generations {
        let mut children = Vec::with_capacity(ga.population);
        while children.len() < ga.population {
            let a = tournament(&pop, &mut rng);
            let b = tournament(&pop, &mut rng);
            let (mut c1, mut c2) = if rng.random::<f64>() < ga.crossover_prob {
                sbx_crossover(&pop[a].genes, &pop[b].genes, &bounds, ga.eta_c, &mut rng)
            } else {
                (pop[a].genes.clone(), pop[b].genes.clone())
            };
            for c in [&mut c1, &mut c2] {
                if rng.random::<f64>() < ga.mutation_prob {
                    polynomial_mutation(c, &bounds, ga.eta_m, per_gene, &mut rng);
                }
            }
            children.push(c1);
            children.push(c2);
        }
        let kids = evaluate_batch(problem, children);
        evaluations += kids.len();
        update_best(&kids, &mut best);
        pop.extend(kids);
        pop.sort_by(|a, b| constrained_cmp(&a.fit, &b.fit));
        pop.truncate(ga.population);
        trace.push(trace_row(generation, &pop, best.as_ref()));
    }

    match best {
        Some((genes, objective)) => Ok(GaResult { genes, objective, trace, evaluations }),
        None => Err(Error::Infeasible {
            best_violation: pop.iter().map(|m| m.fit.violation).fold(f64::INFINITY, f64::min),
        }),
    }
}

/// Daily doses per subpopulation as genes, bounded by the per-subpopulation caps.
pub struct PolicyProblem<'a> {
    pub evaluator: &'a PolicyEvaluator,
}

impl PolicyProblem<'_> {
    pub fn policy(&self, genes: &[f64]) -> VaccinePolicy {
        let b = &self.evaluator.setup.budgets;
        VaccinePolicy::from_genome(self.evaluator.k(), b.window, genes).expect("genome length matches window")
    }
}

impl GaProblem for PolicyProblem<'_> {
    fn bounds(&self) -> Vec<Interval> {
        let b = &self.evaluator.setup.budgets;
        b.cap.iter().flat_map(|u| std::iter::repeat_n(Interval::new(0.0, *u), b.width())).collect()
    }

    fn violation(&self, genes: &[f64]) -> f64 {
        crate::alloc::constraint_violation(&self.policy(genes), &self.evaluator.setup.budgets)
    }

    fn objective(&self, genes: &[f64]) -> f64 {
        self.evaluator.evaluate(&self.policy(genes)).map_or(f64::INFINITY, |r| r.objective)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationOutcome {
    pub policy: VaccinePolicy,
    pub objective: f64,
    pub trace: Vec<TraceRow>,
    pub evaluations: usize,
}

fn solve(setup: &AllocationSetup, scenarios: &ScenarioSet, ga: &GaConfig) -> Result<AllocationOutcome> {
    let evaluator = PolicyEvaluator::new(setup, scenarios)?;
    let problem = PolicyProblem { evaluator: &evaluator };
    let r = ga_optimize(&problem, ga)?;
    Ok(AllocationOutcome { policy: problem.policy(&r.genes), objective: r.objective, trace: r.trace, evaluations: r.evaluations })
}

/// Minimizes the peak at a single parameter point and onset vector.
pub fn solve_nominal(
    setup: &AllocationSetup,
    theta: &[f64],
    c2: &[f64],
    ga: &GaConfig,
) -> Result<AllocationOutcome> {
    let set = ScenarioSet::single(setup.model.param_names.clone(), theta.to_vec(), c2.to_vec());
    solve(setup, &set, ga)
}

/// Minimizes the probability-weighted expected peak over a scenario set.
pub fn solve_stochastic(setup: &AllocationSetup, scenarios: &ScenarioSet, ga: &GaConfig) -> Result<AllocationOutcome> {
    solve(setup, scenarios, ga)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Sphere;

    impl GaProblem for Sphere {
        fn bounds(&self) -> Vec<Interval> {
            vec![Interval::new(-5.0, 5.0); 4]
        }
        fn violation(&self, g: &[f64]) -> f64 {
            (g.iter().sum::<f64>() - 8.0).max(0.0)
        }
        fn objective(&self, g: &[f64]) -> f64 {
            g.iter().map(|x| (x - 3.0).powi(2)).sum()
        }
    }

    #[test]
    fn ordering_rules() {
        let f = |objective, violation| Fitness { objective, violation };
        assert_eq!(constrained_cmp(&f(10.0, 0.0), &f(1.0, 1.0)), Ordering::Less);
        assert_eq!(constrained_cmp(&f(1.0, 2.0), &f(10.0, 1.0)), Ordering::Greater);
        assert_eq!(constrained_cmp(&f(1.0, 0.0), &f(2.0, 0.0)), Ordering::Less);
        assert_eq!(constrained_cmp(&f(1.0, 3.0), &f(2.0, 3.0)), Ordering::Equal);
    }

    #[test]
    fn constrained_sphere() {
        let ga = GaConfig { population: 40, generations: 150, seed: 3, ..GaConfig::default() };
        let r = ga_optimize(&Sphere, &ga).unwrap();
        // Optimum on the plane Σx = 8 is x = 2 everywhere, objective 4.
        assert!(r.objective < 4.2, "{}", r.objective);
        assert!(r.trace.windows(2).all(|w| w[1].best_feasible_objective <= w[0].best_feasible_objective));
        let again = ga_optimize(&Sphere, &ga).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn operators_stay_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = vec![Interval::new(0.0, 1.0); 5];
        for _ in 0..1000 {
            let p1: Vec<f64> = (0..5).map(|_| rng.random()).collect();
            let p2: Vec<f64> = (0..5).map(|_| rng.random()).collect();
            let (mut c1, c2) = sbx_crossover(&p1, &p2, &b, 10.0, &mut rng);
            polynomial_mutation(&mut c1, &b, 10.0, 1.0, &mut rng);
            assert!(c1.iter().chain(&c2).all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn odd_population_rejected() {
        let ga = GaConfig { population: 7, ..GaConfig::default() };
        assert!(ga.validate().is_err());
    }

    #[test]
    fn trace_csv_header() {
        let csv = trace_to_csv(&[TraceRow {
            generation: 0,
            best_feasible_objective: 1.0,
            best_violation: 0.0,
            mean_objective: 2.0,
        }]);
        assert!(csv.starts_with("generation,best_feasible_objective,best_violation,mean_objective\n0,"));
    }
}
