//! Least-squares fit of ODE parameters by repeated simulation.

use crate::error::{Error, Result};
use crate::model::{ModelSpec, PopulationConfig, VaccinePolicy};
use crate::observe::TimeSeriesData;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::solver::{simulate, SolverOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct NllsResult {
    pub theta: Vec<f64>,
    pub residual: f64,
    /// Residual at each start point, in the order tried.
    pub start_residuals: Vec<f64>,
}

/// Sum of squared residuals between a simulation from `x0` at `t = 0` and the observed series.
///
/// Observed columns are matched to model states by name (`p<k>_<state>` for several
/// subpopulations). Failed simulations score `+inf`.
pub fn sum_squared_residuals(
    model: &ModelSpec,
    pop: &PopulationConfig,
    x0: &[f64],
    data: &TimeSeriesData,
    theta: &[f64],
    opts: &SolverOptions,
) -> f64 {
    let Ok(cols) = column_map(model, pop, data) else {
        return f64::INFINITY;
    };
    let (grid, offset) = grid_from(&data.times);
    let policy = VaccinePolicy::zeros(pop.k(), [0, 0]);
    let Ok(tr) = simulate(model, pop, theta, x0, &grid, &policy, opts) else {
        return f64::INFINITY;
    };
    let mut ss = 0.0;
    for (row, idx) in data.values.iter().zip(&cols) {
        for (i, y) in row.iter().enumerate() {
            let r = y - tr.states[i + offset][*idx];
            ss += r * r;
        }
    }
    ss
}

fn grid_from(times: &[f64]) -> (Vec<f64>, usize) {
    if times.first().is_some_and(|t| *t > 0.0) {
        let mut g = vec![0.0];
        g.extend_from_slice(times);
        (g, 1)
    } else {
        (times.to_vec(), 0)
    }
}

fn column_map(model: &ModelSpec, pop: &PopulationConfig, data: &TimeSeriesData) -> Result<Vec<usize>> {
    let nc = model.n_states();
    data.state_names
        .iter()
        .map(|name| {
            if pop.k() == 1 {
                if let Some(s) = model.state_index(name) {
                    return Ok(s);
                }
            }
            for k in 0..pop.k() {
                for (s, st) in model.state_names.iter().enumerate() {
                    if *name == format!("p{}_{st}", k + 1) {
                        return Ok(k * nc + s);
                    }
                }
            }
            Err(Error::dim(format!("observed column {name} matches no model state")))
        })
        .collect()
}

/// Deterministic start points: the caller's guess, the box center and the four
/// diagonal points at 20% and 80% of each bound with alternating signs.
fn start_points(model: &ModelSpec, guess: &[f64]) -> Vec<Vec<f64>> {
    let b = &model.param_bounds;
    let at = |f: &dyn Fn(usize) -> f64| (0..b.len()).map(|j| b[j].lo + f(j) * b[j].width()).collect::<Vec<_>>();
    vec![
        guess.iter().zip(b).map(|(v, bj)| bj.clamp(*v)).collect(),
        at(&|_| 0.5),
        at(&|_| 0.2),
        at(&|_| 0.8),
        at(&|j| if j % 2 == 0 { 0.2 } else { 0.8 }),
        at(&|j| if j % 2 == 0 { 0.8 } else { 0.2 }),
    ]
}

/// Bounded multi-start Nelder–Mead on the squared-residual objective.
pub fn nlls_fit(
    data: &TimeSeriesData,
    model: &ModelSpec,
    pop: &PopulationConfig,
    x0: &[f64],
    guess: &[f64],
    opts: &SolverOptions,
) -> Result<NllsResult> {
    data.validate()?;
    model.validate()?;
    if data.n_times() == 0 {
        return Err(Error::domain("no observations"));
    }
    if guess.len() != model.n_params() {
        return Err(Error::dim(format!("initial guess has {} entries", guess.len())));
    }
    if data.times[0] < 0.0 {
        return Err(Error::domain("observation times must be nonnegative"));
    }
    column_map(model, pop, data)?;

    let f = |t: &[f64]| sum_squared_residuals(model, pop, x0, data, t, opts);
    let nm = NelderMeadOptions { max_evals: 6000, f_tol: 1e-14, x_tol: 1e-12, initial_step: 0.1, restarts: 4 };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_residuals = Vec::new();
    for s in start_points(model, guess) {
        start_residuals.push(f(&s));
        let m = nelder_mead(f, &s, Some(&model.param_bounds), &nm);
        if m.value.is_finite() && best.as_ref().is_none_or(|b| m.value < b.1) {
            best = Some((m.x, m.value));
        }
    }
    let (theta, residual) = best.ok_or_else(|| Error::Optimization("no start point could be integrated".into()))?;
    Ok(NllsResult { theta, residual, start_residuals })
}
