//! Joint log density of latent states and ODE parameters under GP gradient matching.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::{precision, rbf_kernel_matrices, DerivativeConditional, GpHyperParams};
use crate::model::{Interval, ModelSpec, PopulationConfig, Rates};
use crate::observe::TimeSeriesData;

/// An autonomous ODE `ẋ = f(x, θ)` whose right-hand side can be matched against GP slopes.
pub trait OdeSystem: Sync {
    fn state_names(&self) -> Vec<String>;
    fn param_bounds(&self) -> Vec<Interval>;
    /// Writes `f(x, θ)` for one state vector into `out`.
    fn eval(&self, theta: &[f64], x: &[f64], out: &mut [f64]);

    fn param_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn label(&self) -> String {
        "custom".to_string()
    }
}

/// A single-population compartmental model without vaccination.
#[derive(Debug, Clone)]
pub struct EpidemicSystem {
    pub spec: ModelSpec,
    pub population: f64,
}

impl EpidemicSystem {
    pub fn new(spec: ModelSpec, population: f64) -> Result<Self> {
        spec.validate()?;
        if spec.kind.has_immune() {
            return Err(Error::domain("gradient matching uses the model without vaccination"));
        }
        if !(population > 0.0) {
            return Err(Error::domain("population must be positive"));
        }
        Ok(Self { spec, population })
    }
}

impl OdeSystem for EpidemicSystem {
    fn state_names(&self) -> Vec<String> {
        self.spec.state_names.clone()
    }

    fn param_bounds(&self) -> Vec<Interval> {
        self.spec.param_bounds.clone()
    }

    fn eval(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let rates: Rates = self.spec.rates(theta);
        let pop = PopulationConfig::single(self.population);
        crate::model::deriv(self.spec.kind, &rates, &pop, x, &[1.0], &[0.0], out);
    }

    fn param_names(&self) -> Vec<String> {
        self.spec.param_names.clone()
    }

    fn label(&self) -> String {
        self.spec.kind.label().to_string()
    }
}

/// The four additive pieces of the log density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityTerms {
    pub prior: f64,
    pub gp_prior: f64,
    pub likelihood: f64,
    pub gradient: f64,
}

impl DensityTerms {
    pub fn total(&self) -> f64 {
        self.prior + self.gp_prior + self.likelihood + self.gradient
    }
}

struct StateBlock {
    mean: f64,
    y: Vec<f64>,
    sigma_obs: f64,
    c_prec: DMatrix<f64>,
    c_logdet: f64,
    cond: DerivativeConditional,
    g_prec: DMatrix<f64>,
    g_logdet: f64,
}

/// Precomputed kernel factorizations for one dataset and hyperparameter set.
///
/// Latent states are passed as `x[s][i]` in the system's state order, whatever
/// the column order of the data.
pub struct GradientMatching<'a, S: OdeSystem + ?Sized> {
    system: &'a S,
    times: Vec<f64>,
    bounds: Vec<Interval>,
    log_prior: f64,
    blocks: Vec<StateBlock>,
}

fn gauss_quad(prec: &DMatrix<f64>, r: &[f64]) -> f64 {
    let v = DVector::from_column_slice(r);
    (prec * &v).dot(&v)
}

impl<'a, S: OdeSystem + ?Sized> GradientMatching<'a, S> {
    pub fn new(system: &'a S, data: &TimeSeriesData, hp: &GpHyperParams) -> Result<Self> {
        data.validate()?;
        hp.validate()?;
        let names = system.state_names();
        let bounds = system.param_bounds();
        let mut blocks = Vec::with_capacity(names.len());
        for name in &names {
            let col = data
                .state_names
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::dim(format!("state {name} is not observed")))?;
            let h = hp.get(name)?;
            let y = data.values[col].clone();
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let k = rbf_kernel_matrices(&data.times, h.sigma_f, h.length_scale)?;
            let (c_prec, c_logdet) = precision(k.c.clone())?;
            let cond = DerivativeConditional::new(&k)?;
            let mut g = cond.a.clone();
            for i in 0..g.nrows() {
                g[(i, i)] += hp.lambda;
            }
            let (g_prec, g_logdet) = precision(g)?;
            blocks.push(StateBlock { mean, y, sigma_obs: h.sigma_obs, c_prec, c_logdet, cond, g_prec, g_logdet });
        }
        let mut log_prior = 0.0;
        for b in &bounds {
            if !(b.width() > 0.0) {
                return Err(Error::domain("parameter bounds must have positive width"));
            }
            log_prior -= b.width().ln();
        }
        Ok(Self { system, times: data.times.clone(), bounds, log_prior, blocks })
    }

    pub fn n_states(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn bounds(&self) -> &[Interval] {
        &self.bounds
    }

    pub fn system(&self) -> &S {
        self.system
    }

    /// Empirical mean of each observed series (the GP prior mean).
    pub fn means(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.mean).collect()
    }

    /// Observations in system state order.
    pub fn observations(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().map(|b| b.y.clone()).collect()
    }

    pub fn sigma_obs(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.sigma_obs).collect()
    }

    fn in_bounds(&self, theta: &[f64]) -> bool {
        theta.len() == self.bounds.len() && self.bounds.iter().zip(theta).all(|(b, v)| b.contains(*v))
    }

    /// `log N(x_s - μ_s | 0, C_s)` summed over states.
    pub fn gp_prior_term(&self, x: &[Vec<f64>]) -> f64 {
        let n = self.times.len() as f64;
        self.blocks
            .iter()
            .zip(x)
            .map(|(b, xs)| {
                let z: Vec<f64> = xs.iter().map(|v| v - b.mean).collect();
                -0.5 * gauss_quad(&b.c_prec, &z) - 0.5 * b.c_logdet - 0.5 * n * (2.0 * PI).ln()
            })
            .sum()
    }

    /// `log N(y_s | x_s, σ_s² I)` summed over states.
    pub fn likelihood_term(&self, x: &[Vec<f64>]) -> f64 {
        let n = self.times.len() as f64;
        self.blocks
            .iter()
            .zip(x)
            .map(|(b, xs)| {
                let ss: f64 = b.y.iter().zip(xs).map(|(y, v)| (y - v) * (y - v)).sum();
                -0.5 * ss / (b.sigma_obs * b.sigma_obs) - n * b.sigma_obs.ln() - 0.5 * n * (2.0 * PI).ln()
            })
            .sum()
    }

    /// `log N(f(x, θ)_s | m_s, A_s + λI)` summed over states.
    pub fn gradient_term(&self, x: &[Vec<f64>], theta: &[f64]) -> f64 {
        let ns = self.blocks.len();
        let nt = self.times.len();
        let mut f = vec![vec![0.0; nt]; ns];
        let mut xi = vec![0.0; ns];
        let mut fi = vec![0.0; ns];
        for i in 0..nt {
            for s in 0..ns {
                xi[s] = x[s][i];
            }
            self.system.eval(theta, &xi, &mut fi);
            for s in 0..ns {
                f[s][i] = fi[s];
            }
        }
        let mut total = 0.0;
        for (s, b) in self.blocks.iter().enumerate() {
            let z: Vec<f64> = x[s].iter().map(|v| v - b.mean).collect();
            let m = b.cond.mean(&z);
            let r: Vec<f64> = f[s].iter().zip(&m).map(|(a, c)| a - c).collect();
            total += -0.5 * gauss_quad(&b.g_prec, &r) - 0.5 * b.g_logdet - 0.5 * nt as f64 * (2.0 * PI).ln();
        }
        total
    }

    /// All four terms; the prior is `-inf` outside the bound box.
    pub fn terms(&self, x: &[Vec<f64>], theta: &[f64]) -> DensityTerms {
        if !self.in_bounds(theta) {
            return DensityTerms { prior: f64::NEG_INFINITY, gp_prior: 0.0, likelihood: 0.0, gradient: 0.0 };
        }
        DensityTerms {
            prior: self.log_prior,
            gp_prior: self.gp_prior_term(x),
            likelihood: self.likelihood_term(x),
            gradient: self.gradient_term(x, theta),
        }
    }

    pub fn log_density(&self, x: &[Vec<f64>], theta: &[f64]) -> f64 {
        let t = self.terms(x, theta);
        if t.prior == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let v = t.total();
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn check_shape(&self, x: &[Vec<f64>]) -> Result<()> {
        if x.len() != self.blocks.len() || x.iter().any(|r| r.len() != self.times.len()) {
            return Err(Error::dim(format!(
                "latent states must be {} x {}",
                self.blocks.len(),
                self.times.len()
            )));
        }
        Ok(())
    }
}

/// One-shot evaluation of the log density. Out-of-bounds `theta` gives `-inf`.
pub fn log_density<S: OdeSystem + ?Sized>(
    x: &[Vec<f64>],
    theta: &[f64],
    data: &TimeSeriesData,
    hp: &GpHyperParams,
    system: &S,
) -> Result<f64> {
    let gm = GradientMatching::new(system, data, hp)?;
    gm.check_shape(x)?;
    Ok(gm.log_density(x, theta))
}
