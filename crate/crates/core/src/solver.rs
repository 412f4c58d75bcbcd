//! Fixed-step classical Runge–Kutta integration of the compartmental models.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{deriv, sigmoid_onset, ModelSpec, PopulationConfig, VaccinePolicy};

/// Relative slack below zero tolerated for any compartment, times `N_k`.
pub const NEGATIVE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Integration step in days. Each output interval is split into
    /// `ceil(interval / step)` equal substeps.
    pub step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { step: 0.05 }
    }
}

/// States sampled on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub state_names: Vec<String>,
    pub subpops: usize,
    pub times: Vec<f64>,
    /// `states[i]` is the full state vector at `times[i]`.
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn n_compartments(&self) -> usize {
        self.state_names.len()
    }

    pub fn value(&self, ti: usize, k: usize, s: usize) -> f64 {
        self.states[ti][k * self.n_compartments() + s]
    }

    /// Time series of one compartment in one subpopulation.
    pub fn series(&self, k: usize, s: usize) -> Vec<f64> {
        (0..self.times.len()).map(|i| self.value(i, k, s)).collect()
    }

    /// Time series of a compartment summed over subpopulations.
    pub fn total(&self, s: usize) -> Vec<f64> {
        (0..self.times.len())
            .map(|i| (0..self.subpops).map(|k| self.value(i, k, s)).sum())
            .collect()
    }

    /// Largest grid value of the compartment summed over subpopulations.
    pub fn peak_total(&self, s: usize) -> f64 {
        self.total(s).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with header `t,<subpop>_<state>,...`, 17 significant digits.
    pub fn to_csv(&self, subpop_names: &[String]) -> String {
        let mut out = String::from("t");
        for k in 0..self.subpops {
            for s in &self.state_names {
                let _ = write!(out, ",{}_{}", subpop_names[k], s);
            }
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            out.push_str(&fmt_f64(*t));
            for v in x {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Formats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Integrates the model from `x0` at `grid[0]` and samples the state at every grid point.
pub fn simulate(
    model: &ModelSpec,
    pop: &PopulationConfig,
    params: &[f64],
    x0: &[f64],
    grid: &[f64],
    policy: &VaccinePolicy,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    let k = pop.k();
    let nc = model.n_states();
    let dim = k * nc;
    if x0.len() != dim {
        return Err(Error::dim(format!("initial state has {} entries, expected {dim}", x0.len())));
    }
    if grid.is_empty() {
        return Err(Error::dim("empty time grid"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("time grid must be strictly increasing"));
    }
    if !(opts.step > 0.0 && opts.step.is_finite()) {
        return Err(Error::domain("integration step must be positive"));
    }
    if model.kind.has_immune() && policy.k() != k {
        return Err(Error::dim(format!("policy covers {} subpopulations, expected {k}", policy.k())));
    }
    model.check_params(params)?;
    let rates = model.rates(params);
    let immune = model.kind.has_immune();

    let mut x = x0.to_vec();
    let mut states = Vec::with_capacity(grid.len());
    states.push(x.clone());

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    let mut vacc = vec![0.0; k];
    let mut u0 = vec![0.0; k];
    let mut um = vec![0.0; k];
    let mut u1 = vec![0.0; k];
    let onset = |t: f64, out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = sigmoid_onset(pop.onset_c1[i], pop.onset_c2[i], t);
        }
    };
    onset(grid[0], &mut u0);

    for w in grid.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let n_sub = ((tb - ta) / opts.step - 1e-9).ceil().max(1.0) as usize;
        let h = (tb - ta) / n_sub as f64;
        for j in 0..n_sub {
            let t = ta + j as f64 * h;
            let t_end = if j + 1 == n_sub { tb } else { ta + (j + 1) as f64 * h };
            if immune {
                // Doses are constant over the day containing the step midpoint.
                policy.rates_at(t + 0.5 * h, &mut vacc);
            }
            onset(t + 0.5 * h, &mut um);
            onset(t_end, &mut u1);

            deriv(model.kind, &rates, pop, &x, &u0, &vacc, &mut k1);
            axpy(&x, 0.5 * h, &k1, &mut tmp);
            deriv(model.kind, &rates, pop, &tmp, &um, &vacc, &mut k2);
            axpy(&x, 0.5 * h, &k2, &mut tmp);
            deriv(model.kind, &rates, pop, &tmp, &um, &vacc, &mut k3);
            axpy(&x, h, &k3, &mut tmp);
            deriv(model.kind, &rates, pop, &tmp, &u1, &vacc, &mut k4);
            for i in 0..dim {
                x[i] += h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
            }
            check_state(&x, pop, nc, t_end)?;
            std::mem::swap(&mut u0, &mut u1);
        }
        states.push(x.clone());
    }

    Ok(Trajectory {
        state_names: model.state_names.clone(),
        subpops: k,
        times: grid.to_vec(),
        states,
    })
}

fn axpy(x: &[f64], a: f64, d: &[f64], out: &mut [f64]) {
    for ((o, xi), di) in out.iter_mut().zip(x).zip(d) {
        *o = xi + a * di;
    }
}

fn check_state(x: &[f64], pop: &PopulationConfig, nc: usize, t: f64) -> Result<()> {
    for (i, v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Integration { time: t, reason: format!("state component {i} is not finite") });
        }
        let n = pop.sizes[i / nc];
        if *v < -NEGATIVE_SLACK * n {
            return Err(Error::Integration { time: t, reason: format!("state component {i} = {v} is negative") });
        }
    }
    Ok(())
}

/// Integer-day grid `0, 1, ..., horizon`.
pub fn daily_grid(horizon: u32) -> Vec<f64> {
    (0..=horizon).map(f64::from).collect()
}
