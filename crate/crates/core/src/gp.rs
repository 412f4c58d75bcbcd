//! Squared-exponential Gaussian-process machinery for gradient matching.
//!
//! For a state observed at times `t_1 < ... < t_N` the joint law of the state
//! values and their time derivatives is Gaussian with covariance blocks built
//! from the kernel `C(t, t') = sf² exp(-(t - t')² / (2 l²))` and its partial
//! derivatives. Conditioning the derivatives on the states gives the mean
//! `m = Cov(ẋ, x) C⁻¹ (x - μ)` and covariance `A = C'' - Cov(ẋ, x) C⁻¹ Cov(x, ẋ)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Interval;
use crate::observe::TimeSeriesData;
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Default gradient-mismatch variance added to the derivative covariance.
pub const DEFAULT_LAMBDA: f64 = 1e-2;

/// Relative diagonal jitter used when factoring kernel matrices.
pub const JITTER: f64 = 1e-10;

/// Kernel and observation-noise parameters of one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateHyper {
    pub sigma_f: f64,
    pub length_scale: f64,
    pub sigma_obs: f64,
}

/// Hyperparameters of every observed state plus the shared mismatch variance.
///
/// Serialized as `{"<state>": {sigma_f, length_scale, sigma_obs}, ..., "lambda": λ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperParams {
    #[serde(flatten)]
    pub states: BTreeMap<String, StateHyper>,
    pub lambda: f64,
}

impl GpHyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, h) in &self.states {
            if !(h.sigma_f > 0.0 && h.length_scale > 0.0 && h.sigma_obs > 0.0) {
                return Err(Error::domain(format!("hyperparameters of {name} must be positive")));
            }
        }
        if !(self.lambda > 0.0) {
            return Err(Error::domain("lambda must be positive"));
        }
        Ok(())
    }

    pub fn get(&self, state: &str) -> Result<&StateHyper> {
        self.states
            .get(state)
            .ok_or_else(|| Error::domain(format!("no hyperparameters for state {state}")))
    }
}

/// `c = C`, `dc = ∂C/∂t`, `cd = ∂C/∂t'`, `ddc = ∂²C/∂t∂t'` over one time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrices {
    pub c: DMatrix<f64>,
    pub dc: DMatrix<f64>,
    pub cd: DMatrix<f64>,
    pub ddc: DMatrix<f64>,
}

/// Kernel value and its analytic derivatives at lag `delta = t - t'`.
pub fn rbf_entries(sigma_f: f64, length_scale: f64, delta: f64) -> [f64; 4] {
    let l2 = length_scale * length_scale;
    let c = sigma_f * sigma_f * (-delta * delta / (2.0 * l2)).exp();
    [c, -delta / l2 * c, delta / l2 * c, (1.0 / l2 - delta * delta / (l2 * l2)) * c]
}

pub fn rbf_kernel_matrices(times: &[f64], sigma_f: f64, length_scale: f64) -> Result<KernelMatrices> {
    if !(length_scale > 0.0) {
        return Err(Error::domain("length scale must be positive"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("kernel times must be strictly increasing"));
    }
    let n = times.len();
    let mut m = KernelMatrices {
        c: DMatrix::zeros(n, n),
        dc: DMatrix::zeros(n, n),
        cd: DMatrix::zeros(n, n),
        ddc: DMatrix::zeros(n, n),
    };
    for i in 0..n {
        for j in 0..n {
            let [c, dc, cd, ddc] = rbf_entries(sigma_f, length_scale, times[i] - times[j]);
            m.c[(i, j)] = c;
            m.dc[(i, j)] = dc;
            m.cd[(i, j)] = cd;
            m.ddc[(i, j)] = ddc;
        }
    }
    Ok(m)
}

fn jittered_cholesky(mut a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = a.nrows();
    if n == 0 {
        return Err(Error::dim("empty matrix"));
    }
    let jitter = JITTER * (a.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    for i in 0..n {
        a[(i, i)] += jitter;
    }
    Cholesky::new(a).ok_or_else(|| Error::Numerical("matrix is not positive definite beyond jitter".into()))
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Zero-mean GP log marginal likelihood of `y` (already centered).
pub fn log_marginal_likelihood(times: &[f64], y: &[f64], hp: &StateHyper) -> f64 {
    let Ok(k) = rbf_kernel_matrices(times, hp.sigma_f, hp.length_scale) else {
        return f64::NEG_INFINITY;
    };
    let n = y.len();
    let mut cov = k.c;
    for i in 0..n {
        cov[(i, i)] += hp.sigma_obs * hp.sigma_obs;
    }
    let Some(chol) = Cholesky::new(cov) else {
        return f64::NEG_INFINITY;
    };
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    -0.5 * yv.dot(&alpha) - 0.5 * log_det(&chol) - 0.5 * n as f64 * (2.0 * PI).ln()
}

/// Fits `(sigma_f, length_scale, sigma_obs)` per state by maximizing the marginal
/// likelihood of the mean-centered series from several start points.
pub fn fit_gp_hyperparams(data: &TimeSeriesData, lambda: f64) -> Result<GpHyperParams> {
    data.validate()?;
    if data.n_times() < 3 {
        return Err(Error::domain("at least three observations per state are required"));
    }
    let span = data.times[data.n_times() - 1] - data.times[0];
    if !(span > 0.0) {
        return Err(Error::domain("observation times are degenerate"));
    }
    let mut states = BTreeMap::new();
    for (name, row) in data.state_names.iter().zip(&data.values) {
        states.insert(name.clone(), fit_state(&data.times, row)?.0);
    }
    Ok(GpHyperParams { states, lambda })
}

/// Fits one series; also returns the start points tried (in natural units) for inspection.
pub fn fit_state(times: &[f64], y: &[f64]) -> Result<(StateHyper, Vec<StateHyper>)> {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let sd = (centered.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let scale = sd.max(1e-8 * mean.abs()).max(1e-12);
    let span = times[n - 1] - times[0];
    let min_dt = times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);

    let bounds = [
        Interval::new((1e-3 * scale).ln(), (1e2 * scale).ln()),
        Interval::new((0.5 * min_dt).ln(), (10.0 * span).ln()),
        Interval::new((1e-6 * scale).ln(), (2.0 * scale).ln()),
    ];
    let to_hyper = |p: &[f64]| StateHyper { sigma_f: p[0].exp(), length_scale: p[1].exp(), sigma_obs: p[2].exp() };
    let objective = |p: &[f64]| -log_marginal_likelihood(times, &centered, &to_hyper(p));

    let mut starts = Vec::new();
    for l in [span / 6.0, span / 3.0, span] {
        for s in [1e-2, 1e-1] {
            starts.push(vec![scale.ln(), l.max(min_dt).ln(), (s * scale).ln()]);
        }
    }
    let opts = NelderMeadOptions { max_evals: 4000, f_tol: 1e-10, x_tol: 1e-8, initial_step: 0.05, restarts: 2 };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let m = nelder_mead(objective, s, Some(&bounds), &opts);
        if best.as_ref().is_none_or(|b| m.value < b.1) {
            best = Some((m.x, m.value));
        }
    }
    let (x, v) = best.expect("at least one start");
    if !v.is_finite() {
        return Err(Error::Numerical("marginal likelihood is not finite at any start".into()));
    }
    Ok((to_hyper(&x), starts.iter().map(|s| to_hyper(s)).collect()))
}

/// Derivative conditional for one state: `m = D (x - μ)`, covariance `A`.
#[derive(Debug, Clone)]
pub struct DerivativeConditional {
    /// `Cov(ẋ, x) C⁻¹`.
    pub d: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

impl DerivativeConditional {
    pub fn new(k: &KernelMatrices) -> Result<Self> {
        let n = k.c.nrows();
        let chol = jittered_cholesky(k.c.clone())?;
        // Dᵀ = C⁻¹ Cov(x, ẋ) = C⁻¹ cd.
        let d = chol.solve(&k.cd).transpose();
        let mut a = &k.ddc - &d * &k.cd;
        a = 0.5 * (&a + a.transpose());
        let jitter = JITTER * (a.trace() / n as f64).abs();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        Ok(Self { d, a })
    }

    pub fn mean(&self, x_centered: &[f64]) -> Vec<f64> {
        (&self.d * DVector::from_column_slice(x_centered)).iter().copied().collect()
    }
}

/// Conditional mean and covariance of the derivatives given zero-mean state values.
pub fn gp_conditional_derivative(x: &[f64], k: &KernelMatrices) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if x.len() != k.c.nrows() {
        return Err(Error::dim(format!("{} state values for a {}-point kernel", x.len(), k.c.nrows())));
    }
    let cond = DerivativeConditional::new(k)?;
    Ok((cond.mean(x), cond.a))
}

/// Precision and log-determinant of a covariance, both with jitter applied.
pub(crate) fn precision(cov: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = jittered_cholesky(cov)?;
    let ld = log_det(&chol);
    Ok((chol.inverse(), ld))
}

/// GP posterior mean of a latent series given its noisy (centered) observations.
pub fn posterior_mean(times: &[f64], y_centered: &[f64], hp: &StateHyper) -> Result<Vec<f64>> {
    let k = rbf_kernel_matrices(times, hp.sigma_f, hp.length_scale)?;
    let mut cov = k.c.clone();
    for i in 0..times.len() {
        cov[(i, i)] += hp.sigma_obs * hp.sigma_obs;
    }
    let chol = jittered_cholesky(cov)?;
    let w = chol.solve(&DVector::from_column_slice(y_centered));
    Ok((&k.c * w).iter().copied().collect())
}
