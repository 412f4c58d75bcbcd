//! Componentwise random-walk Metropolis–Hastings over parameters and latent states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::{GradientMatching, OdeSystem};
use crate::error::{Error, Result};
use crate::gp::{posterior_mean, GpHyperParams};
use crate::model::Interval;
use crate::observe::TimeSeriesData;
use crate::optim::{nelder_mead, NelderMeadOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Initial proposal scale per parameter; defaults to 2% of each bound width.
    #[serde(default)]
    pub theta_step: Option<Vec<f64>>,
    /// Initial latent-state proposal scale as a multiple of the state's noise level.
    #[serde(default = "default_state_step")]
    pub state_step: f64,
    #[serde(default = "default_thin")]
    pub thin: usize,
    /// Tune proposal scales toward `target_acceptance` during burn-in.
    #[serde(default = "default_true")]
    pub adapt: bool,
    #[serde(default = "default_target")]
    pub target_acceptance: f64,
    #[serde(default)]
    pub store_states: bool,
}

fn default_state_step() -> f64 {
    0.5
}
fn default_thin() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_target() -> f64 {
    0.25
}

impl MhConfig {
    pub fn new(iterations: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in,
            seed,
            theta_step: None,
            state_step: default_state_step(),
            thin: 1,
            adapt: true,
            target_acceptance: default_target(),
            store_states: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in > self.iterations {
            return Err(Error::domain("burn_in cannot exceed iterations"));
        }
        if self.thin == 0 {
            return Err(Error::domain("thin must be at least 1"));
        }
        if !(self.state_step > 0.0) {
            return Err(Error::domain("state_step must be positive"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::domain("target_acceptance must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Post-burn-in acceptance rates per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub theta: f64,
    pub states: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub model: String,
    pub param_names: Vec<String>,
    pub bounds: Vec<Interval>,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub acceptance: Acceptance,
    /// Final proposal scales (after adaptation).
    pub theta_step: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    /// Latent states per retained sample, `states[j][s][i]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<Vec<Vec<f64>>>>,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples of one parameter.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[j]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.samples.len().max(1) as f64;
        (0..self.param_names.len()).map(|j| self.samples.iter().map(|s| s[j]).sum::<f64>() / n).collect()
    }
}

/// Metropolis acceptance for a symmetric proposal.
pub fn mh_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio.is_nan() {
        return false;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// Window of trials used for step-size adaptation.
const ADAPT_WINDOW: usize = 50;

struct Tuner {
    step: f64,
    accepted: usize,
    tried: usize,
}

impl Tuner {
    fn new(step: f64) -> Self {
        Self { step, accepted: 0, tried: 0 }
    }

    fn record(&mut self, ok: bool, adapt: bool, target: f64, max_step: f64) {
        self.tried += 1;
        self.accepted += ok as usize;
        if adapt && self.tried == ADAPT_WINDOW {
            let rate = self.accepted as f64 / ADAPT_WINDOW as f64;
            self.step = (self.step * (2.0 * (rate - target)).exp()).clamp(1e-12 * max_step, max_step);
            self.tried = 0;
            self.accepted = 0;
        }
    }
}

/// Starting point: latent states at the GP posterior mean, parameters maximizing
/// the density with those states held fixed.
pub fn initial_point<S: OdeSystem + ?Sized>(
    gm: &GradientMatching<'_, S>,
    hp: &GpHyperParams,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let names = gm.system().state_names();
    let means = gm.means();
    let mut x = Vec::with_capacity(names.len());
    for ((name, y), mu) in names.iter().zip(gm.observations()).zip(&means) {
        let centered: Vec<f64> = y.iter().map(|v| v - mu).collect();
        let m = posterior_mean(gm.times(), &centered, hp.get(name)?)?;
        x.push(m.iter().map(|v| v + mu).collect());
    }
    let bounds = gm.bounds().to_vec();
    let start: Vec<f64> = bounds.iter().map(|b| b.mid()).collect();
    let best = nelder_mead(|t| -gm.log_density(&x, t), &start, Some(&bounds), &NelderMeadOptions::default());
    Ok((x, best.x))
}

/// Runs the sampler on `data` for the ODE `system`.
pub fn mh_sample<S: OdeSystem + ?Sized>(
    data: &TimeSeriesData,
    system: &S,
    hp: &GpHyperParams,
    config: &MhConfig,
) -> Result<PosteriorChain> {
    config.validate()?;
    let gm = GradientMatching::new(system, data, hp)?;
    let bounds = gm.bounds().to_vec();
    let np = bounds.len();
    let ns = gm.n_states();
    let nt = gm.n_times();

    let theta_steps = match &config.theta_step {
        Some(s) if s.len() == np => s.clone(),
        Some(s) => return Err(Error::dim(format!("{} proposal scales for {np} parameters", s.len()))),
        None => bounds.iter().map(|b| 0.02 * b.width()).collect(),
    };
    let mut theta_tuners: Vec<Tuner> = theta_steps.into_iter().map(Tuner::new).collect();
    let sig = gm.sigma_obs();
    let mut state_tuners: Vec<Tuner> = sig.iter().map(|s| Tuner::new(config.state_step * s)).collect();
    let state_max: Vec<f64> = gm
        .observations()
        .iter()
        .zip(&sig)
        .map(|(y, s)| {
            let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (hi - lo).max(10.0 * s)
        })
        .collect();

    let (mut x, mut theta) = initial_point(&gm, hp)?;
    let mut logp = gm.log_density(&x, &theta);
    if !logp.is_finite() {
        return Err(Error::Numerical("log density is not finite at the starting point".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut samples = Vec::new();
    let mut states = config.store_states.then(Vec::new);
    let (mut acc_t, mut try_t, mut acc_x, mut try_x) = (0usize, 0usize, 0usize, 0usize);

    for it in 0..config.iterations {
        let burning = it < config.burn_in;
        let adapt = burning && config.adapt;

        for j in 0..np {
            let old = theta[j];
            let z: f64 = rng.sample(StandardNormal);
            let prop = old + theta_tuners[j].step * z;
            let ok = if bounds[j].contains(prop) {
                theta[j] = prop;
                let lp = gm.log_density(&x, &theta);
                if mh_accept(lp - logp, &mut rng) {
                    logp = lp;
                    true
                } else {
                    theta[j] = old;
                    false
                }
            } else {
                false
            };
            theta_tuners[j].record(ok, adapt, config.target_acceptance, bounds[j].width());
            if !burning {
                try_t += 1;
                acc_t += ok as usize;
            }
        }

        for s in 0..ns {
            for i in 0..nt {
                let old = x[s][i];
                let z: f64 = rng.sample(StandardNormal);
                x[s][i] = old + state_tuners[s].step * z;
                let lp = gm.log_density(&x, &theta);
                let ok = mh_accept(lp - logp, &mut rng);
                if ok {
                    logp = lp;
                } else {
                    x[s][i] = old;
                }
                state_tuners[s].record(ok, adapt, config.target_acceptance, state_max[s]);
                if !burning {
                    try_x += 1;
                    acc_x += ok as usize;
                }
            }
        }

        if !burning && (it - config.burn_in) % config.thin == 0 {
            samples.push(theta.clone());
            if let Some(st) = states.as_mut() {
                st.push(x.clone());
            }
        }
    }

    let rate = |a: usize, t: usize| if t == 0 { 0.0 } else { a as f64 / t as f64 };
    Ok(PosteriorChain {
        model: system.label(),
        param_names: param_names_for(system, np),
        bounds,
        seed: config.seed,
        iterations: config.iterations,
        burn_in: config.burn_in,
        thin: config.thin,
        acceptance: Acceptance { theta: rate(acc_t, try_t), states: rate(acc_x, try_x) },
        theta_step: theta_tuners.iter().map(|t| t.step).collect(),
        samples,
        states,
    })
}

fn param_names_for<S: OdeSystem + ?Sized>(system: &S, np: usize) -> Vec<String> {
    let names = system.param_names();
    if names.len() == np {
        names
    } else {
        (0..np).map(|j| format!("theta{j}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accept_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(mh_accept(0.0, &mut rng));
        assert!(mh_accept(1.0, &mut rng));
        assert!(!mh_accept(f64::NEG_INFINITY, &mut rng));
        assert!(!mh_accept(f64::NAN, &mut rng));
        let n = 100_000;
        let hits = (0..n).filter(|_| mh_accept(0.5f64.ln(), &mut rng)).count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn config_validation() {
        assert!(MhConfig::new(10, 11, 0).validate().is_err());
        assert!(MhConfig::new(10, 10, 0).validate().is_ok());
        let mut c = MhConfig::new(10, 0, 0);
        c.thin = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn tuner_moves_toward_target() {
        let mut t = Tuner::new(1.0);
        for _ in 0..ADAPT_WINDOW {
            t.record(false, true, 0.25, 10.0);
        }
        assert!(t.step < 1.0);
        let mut t = Tuner::new(1.0);
        for _ in 0..ADAPT_WINDOW {
            t.record(true, true, 0.25, 10.0);
        }
        assert!(t.step > 1.0);
    }
}
