//! Noisy observations of a simulated trajectory.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{fmt_f64, Trajectory};

/// Observed series `values[s][i]` of state `s` at `times[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesData {
    pub state_names: Vec<String>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub noise_sigma: Vec<f64>,
}

impl TimeSeriesData {
    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("observation times must be strictly increasing"));
        }
        if self.values.len() != self.state_names.len() || self.noise_sigma.len() != self.state_names.len() {
            return Err(Error::dim("one value row and one sigma per observed state"));
        }
        if self.values.iter().any(|row| row.len() != self.times.len()) {
            return Err(Error::dim("every value row must match the time grid"));
        }
        Ok(())
    }

    /// Keeps only the observations whose time lies in `[from, to]`.
    pub fn window(&self, from: f64, to: f64) -> Self {
        let keep: Vec<usize> = (0..self.times.len())
            .filter(|&i| self.times[i] >= from && self.times[i] <= to)
            .collect();
        Self {
            state_names: self.state_names.clone(),
            times: keep.iter().map(|&i| self.times[i]).collect(),
            values: self.values.iter().map(|row| keep.iter().map(|&i| row[i]).collect()).collect(),
            noise_sigma: self.noise_sigma.clone(),
        }
    }

    /// CSV with header `t,<state>,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for s in &self.state_names {
            out.push(',');
            out.push_str(s);
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&fmt_f64(*t));
            for row in &self.values {
                out.push(',');
                out.push_str(&fmt_f64(row[i]));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV written by [`TimeSeriesData::to_csv`].
    pub fn from_csv(text: &str, noise_sigma: Vec<f64>) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::domain("empty observation CSV"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"t") {
            return Err(Error::domain("observation CSV must start with a `t` column"));
        }
        let state_names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
        let mut times = Vec::new();
        let mut values = vec![Vec::new(); state_names.len()];
        for (ln, line) in lines.enumerate() {
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::domain(format!("line {}: {e}", ln + 2)))?;
            if fields.len() != cols.len() {
                return Err(Error::dim(format!("line {} has {} fields", ln + 2, fields.len())));
            }
            times.push(fields[0]);
            for (row, v) in values.iter_mut().zip(&fields[1..]) {
                row.push(*v);
            }
        }
        let data = Self { state_names, times, values, noise_sigma };
        data.validate()?;
        Ok(data)
    }
}

/// Adds seeded Gaussian noise `N(0, sigma[s]^2)` to every state of a trajectory.
///
/// Draws are taken state by state, then time by time. A single subpopulation keeps
/// the bare state names; several are labelled `p<k>_<state>`.
pub fn generate_noisy_observations(traj: &Trajectory, sigma: &[f64], seed: u64) -> Result<TimeSeriesData> {
    let nc = traj.n_compartments();
    let n_series = nc * traj.subpops;
    if sigma.len() != nc && sigma.len() != n_series {
        return Err(Error::dim(format!("expected {nc} noise levels, got {}", sigma.len())));
    }
    if sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::domain("noise levels must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::with_capacity(n_series);
    let mut values = Vec::with_capacity(n_series);
    let mut sig = Vec::with_capacity(n_series);
    for k in 0..traj.subpops {
        for (s, name) in traj.state_names.iter().enumerate() {
            let idx = k * nc + s;
            let sd = if sigma.len() == n_series { sigma[idx] } else { sigma[s] };
            let noise = Normal::new(0.0, sd).map_err(|e| Error::domain(e.to_string()))?;
            names.push(if traj.subpops == 1 { name.clone() } else { format!("p{}_{name}", k + 1) });
            values.push(traj.states.iter().map(|x| x[idx] + noise.sample(&mut rng)).collect());
            sig.push(sd);
        }
    }
    Ok(TimeSeriesData { state_names: names, times: traj.times.clone(), values, noise_sigma: sig })
}
