//! Compartmental epidemic models and their right-hand sides.
//!
//! Four variants are supported. `Seir` and `Sepihr` are the plain models, applied
//! independently to every subpopulation. `Seirm` and `Sepihrm` add the immune
//! compartment `M`, vaccination, the sigmoid onset factor and mobility coupling
//! between subpopulations.
//!
//! States are stored subpopulation-major: index `k * n_compartments + s`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    Seir,
    Seirm,
    Sepihr,
    Sepihrm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [Self::Seir, Self::Seirm, Self::Sepihr, Self::Sepihrm];

    /// Whether the variant carries the immune compartment and vaccination.
    pub fn has_immune(self) -> bool {
        matches!(self, Self::Seirm | Self::Sepihrm)
    }

    /// Whether the variant carries quarantine and hospital compartments.
    pub fn has_hospital(self) -> bool {
        matches!(self, Self::Sepihr | Self::Sepihrm)
    }

    pub fn state_names(self) -> &'static [&'static str] {
        match self {
            Self::Seir => &["S", "E", "I", "R"],
            Self::Seirm => &["S", "E", "I", "R", "M"],
            Self::Sepihr => &["S", "E", "P", "I", "H", "R"],
            Self::Sepihrm => &["S", "E", "P", "I", "H", "R", "M"],
        }
    }

    pub fn free_param_names(self) -> &'static [&'static str] {
        if self.has_hospital() {
            &["alpha", "beta", "delta1", "gamma1", "gamma2"]
        } else {
            &["alpha", "beta", "gamma"]
        }
    }

    /// Clinical rates held fixed during inference.
    pub fn default_fixed_params(self) -> &'static [(&'static str, f64)] {
        if self.has_hospital() {
            &[("delta2", 0.002), ("delta3", 0.002), ("gamma3", 0.06)]
        } else {
            &[]
        }
    }

    /// The variant without vaccination (used for inference).
    pub fn without_immune(self) -> Self {
        match self {
            Self::Seirm => Self::Seir,
            Self::Sepihrm => Self::Sepihr,
            k => k,
        }
    }

    /// The variant with vaccination (used for allocation).
    pub fn with_immune(self) -> Self {
        match self {
            Self::Seir => Self::Seirm,
            Self::Sepihr => Self::Sepihrm,
            k => k,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Seir => "SEIR",
            Self::Seirm => "SEIRM",
            Self::Sepihr => "SEPIHR",
            Self::Sepihrm => "SEPIHRM",
        }
    }
}

/// A compartmental model together with its free parameters and their bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub state_names: Vec<String>,
    pub param_names: Vec<String>,
    pub param_bounds: Vec<Interval>,
    pub fixed_params: BTreeMap<String, f64>,
}

impl ModelSpec {
    /// Default bounds: `alpha` in `[0, 2]`, every other rate in `[0, 1]`.
    pub fn new(kind: ModelKind) -> Self {
        let param_names: Vec<String> = kind.free_param_names().iter().map(|s| s.to_string()).collect();
        let param_bounds = param_names
            .iter()
            .map(|n| if n == "alpha" { Interval::new(0.0, 2.0) } else { Interval::new(0.0, 1.0) })
            .collect();
        Self {
            kind,
            state_names: kind.state_names().iter().map(|s| s.to_string()).collect(),
            param_names,
            param_bounds,
            fixed_params: kind
                .default_fixed_params()
                .iter()
                .map(|(n, v)| (n.to_string(), *v))
                .collect(),
        }
    }

    /// Same parameters, with or without the immune compartment.
    pub fn with_kind(&self, kind: ModelKind) -> Result<Self> {
        if kind.has_hospital() != self.kind.has_hospital() {
            return Err(Error::domain(format!(
                "cannot convert {} into {}",
                self.kind.label(),
                kind.label()
            )));
        }
        Ok(Self {
            kind,
            state_names: kind.state_names().iter().map(|s| s.to_string()).collect(),
            ..self.clone()
        })
    }

    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|s| s == name)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.kind.state_names();
        if self.state_names.len() != expected.len()
            || self.state_names.iter().zip(expected).any(|(a, b)| a != b)
        {
            return Err(Error::dim(format!(
                "state names {:?} do not match {}",
                self.state_names,
                self.kind.label()
            )));
        }
        let free = self.kind.free_param_names();
        if self.param_names.len() != free.len() || self.param_names.iter().zip(free).any(|(a, b)| a != b) {
            return Err(Error::dim(format!(
                "parameter names {:?} do not match {}",
                self.param_names,
                self.kind.label()
            )));
        }
        if self.param_bounds.len() != self.param_names.len() {
            return Err(Error::dim("one bound interval per parameter is required"));
        }
        for (name, b) in self.param_names.iter().zip(&self.param_bounds) {
            if !(b.lo.is_finite() && b.hi.is_finite()) || b.lo < 0.0 || b.hi < b.lo {
                return Err(Error::domain(format!("bounds for {name} must be a nonempty nonnegative interval")));
            }
        }
        for (name, _) in self.kind.default_fixed_params() {
            match self.fixed_params.get(*name) {
                Some(v) if v.is_finite() && *v >= 0.0 => {}
                _ => return Err(Error::domain(format!("fixed parameter {name} missing or invalid"))),
            }
        }
        Ok(())
    }

    /// Checks that `theta` has the right length and lies in the bound box.
    pub fn check_params(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::dim(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        for ((name, b), v) in self.param_names.iter().zip(&self.param_bounds).zip(theta) {
            if !b.contains(*v) {
                return Err(Error::domain(format!("{name} = {v} outside [{}, {}]", b.lo, b.hi)));
            }
        }
        Ok(())
    }

    pub fn in_bounds(&self, theta: &[f64]) -> bool {
        theta.len() == self.n_params() && self.param_bounds.iter().zip(theta).all(|(b, v)| b.contains(*v))
    }

    /// Orders a name → value map into a parameter vector.
    pub fn params_from_map(&self, map: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        self.param_names
            .iter()
            .map(|n| map.get(n).copied().ok_or_else(|| Error::domain(format!("missing parameter {n}"))))
            .collect()
    }

    pub fn params_to_map(&self, theta: &[f64]) -> BTreeMap<String, f64> {
        self.param_names.iter().cloned().zip(theta.iter().copied()).collect()
    }

    pub(crate) fn rates(&self, theta: &[f64]) -> Rates {
        let fixed = |n: &str| self.fixed_params.get(n).copied().unwrap_or(0.0);
        if self.kind.has_hospital() {
            Rates {
                alpha: theta[0],
                beta: theta[1],
                delta1: theta[2],
                gamma1: theta[3],
                gamma2: theta[4],
                delta2: fixed("delta2"),
                delta3: fixed("delta3"),
                gamma3: fixed("gamma3"),
            }
        } else {
            Rates {
                alpha: theta[0],
                beta: theta[1],
                gamma1: theta[2],
                ..Rates::default()
            }
        }
    }
}

/// Resolved rate constants. For SEIR-family models only `alpha`, `beta` and
/// `gamma1` (the recovery rate) are used.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Rates {
    pub alpha: f64,
    pub beta: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

/// Subpopulation sizes, mobility coupling, onset curves and vaccine efficacy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub sizes: Vec<f64>,
    /// `mobility[r][k]` weights infections in subpopulation `r` acting on susceptibles in `k`.
    pub mobility: Vec<Vec<f64>>,
    pub onset_c1: Vec<f64>,
    pub onset_c2: Vec<f64>,
    pub eta: f64,
}

impl PopulationConfig {
    /// A single, uncoupled population with no onset delay.
    pub fn single(size: f64) -> Self {
        Self {
            sizes: vec![size],
            mobility: vec![vec![1.0]],
            onset_c1: vec![0.6],
            onset_c2: vec![0.0],
            eta: 0.99,
        }
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 {
            return Err(Error::dim("at least one subpopulation is required"));
        }
        if self.mobility.len() != k || self.mobility.iter().any(|row| row.len() != k) {
            return Err(Error::dim(format!("mobility must be {k}x{k}")));
        }
        if self.onset_c1.len() != k || self.onset_c2.len() != k {
            return Err(Error::dim(format!("onset parameters must have length {k}")));
        }
        if self.sizes.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
            return Err(Error::domain("subpopulation sizes must be positive"));
        }
        for (r, row) in self.mobility.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if !(v.is_finite() && *v >= 0.0) {
                    return Err(Error::domain(format!("mobility[{r}][{c}] must be nonnegative")));
                }
                if r == c && *v != 1.0 {
                    return Err(Error::domain(format!("mobility[{r}][{r}] must equal 1")));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::domain("eta must lie in [0, 1]"));
        }
        if self.onset_c1.iter().chain(&self.onset_c2).any(|v| !v.is_finite()) {
            return Err(Error::domain("onset parameters must be finite"));
        }
        Ok(())
    }

    /// Copy with a different onset midpoint vector.
    pub fn with_onset(&self, c2: &[f64]) -> Self {
        Self { onset_c2: c2.to_vec(), ..self.clone() }
    }
}

/// Onset factor `1 / (1 + exp(-c1 (t - c2)))`.
pub fn sigmoid_onset(c1: f64, c2: f64, t: f64) -> f64 {
    let z = -c1 * (t - c2);
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Daily vaccine doses per subpopulation over the window `[start, end]` (inclusive days).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaccinePolicy {
    pub window: [u32; 2],
    /// `doses[k][d]` is given on day `window[0] + d`.
    pub doses: Vec<Vec<f64>>,
}

impl VaccinePolicy {
    pub fn zeros(k: usize, window: [u32; 2]) -> Self {
        let w = (window[1].saturating_sub(window[0]) + 1) as usize;
        Self { window, doses: vec![vec![0.0; w]; k] }
    }

    /// Reshapes a flat genome of length `k * width` (subpopulation-major).
    pub fn from_genome(k: usize, window: [u32; 2], genes: &[f64]) -> Result<Self> {
        let w = (window[1] - window[0] + 1) as usize;
        if genes.len() != k * w {
            return Err(Error::dim(format!("genome length {} != {k} x {w}", genes.len())));
        }
        Ok(Self { window, doses: genes.chunks(w).map(|c| c.to_vec()).collect() })
    }

    pub fn width(&self) -> usize {
        (self.window[1] - self.window[0] + 1) as usize
    }

    pub fn k(&self) -> usize {
        self.doses.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window[1] < self.window[0] {
            return Err(Error::domain("vaccination window end precedes its start"));
        }
        let w = self.width();
        if self.doses.iter().any(|row| row.len() != w) {
            return Err(Error::dim(format!("every subpopulation needs {w} daily doses")));
        }
        Ok(())
    }

    /// Doses for subpopulation `k` on integer day `day`; zero outside the window.
    pub fn dose(&self, k: usize, day: i64) -> f64 {
        if day < self.window[0] as i64 || day > self.window[1] as i64 {
            return 0.0;
        }
        self.doses
            .get(k)
            .and_then(|row| row.get((day - self.window[0] as i64) as usize))
            .copied()
            .unwrap_or(0.0)
    }

    /// Fills `out[k]` with the doses in force at time `t` (piecewise constant per day).
    pub fn rates_at(&self, t: f64, out: &mut [f64]) {
        let day = t.floor() as i64;
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.dose(k, day);
        }
    }

    pub fn total_doses(&self) -> f64 {
        self.doses.iter().flatten().sum()
    }
}

/// Right-hand side kernel shared by the public [`rhs`] and the integrator.
///
/// `onset[k]` is the onset factor and `vacc[k]` the daily doses in force.
pub(crate) fn deriv(
    kind: ModelKind,
    rates: &Rates,
    pop: &PopulationConfig,
    x: &[f64],
    onset: &[f64],
    vacc: &[f64],
    out: &mut [f64],
) {
    let nc = kind.state_names().len();
    let k_total = pop.k();
    // Index of I within a subpopulation block.
    let i_idx = if kind.has_hospital() { 3 } else { 2 };
    let immune = kind.has_immune();

    for k in 0..k_total {
        let b = k * nc;
        let n = pop.sizes[k];
        let s = x[b];
        let e = x[b + 1];

        let (infection, vaccinated) = if immune {
            let mut coupled = 0.0;
            for r in 0..k_total {
                coupled += pop.mobility[r][k] * x[r * nc + i_idx];
            }
            let dose = pop.eta * vacc[k];
            // Vaccination cannot draw more than the remaining susceptible pool per day.
            let vaccinated = dose.min(s.max(0.0));
            let exposed_pool = (s - dose).max(0.0);
            (onset[k] * rates.alpha / n * exposed_pool * coupled, vaccinated)
        } else {
            (rates.alpha / n * s * x[b + i_idx], 0.0)
        };

        let o = &mut out[b..b + nc];
        o[0] = -vaccinated - infection;
        if kind.has_hospital() {
            let p = x[b + 2];
            let i = x[b + 3];
            let h = x[b + 4];
            o[1] = infection - (rates.beta + rates.delta1) * e;
            o[2] = rates.delta1 * e - (rates.delta2 + rates.gamma2) * p;
            o[3] = rates.beta * e - (rates.gamma1 + rates.delta3) * i;
            o[4] = rates.delta2 * p + rates.delta3 * i - rates.gamma3 * h;
            o[5] = rates.gamma1 * i + rates.gamma2 * p + rates.gamma3 * h;
        } else {
            let i = x[b + 2];
            o[1] = infection - rates.beta * e;
            o[2] = rates.beta * e - rates.gamma1 * i;
            o[3] = rates.gamma1 * i;
        }
        if immune {
            o[nc - 1] = vaccinated;
        }
    }
}

/// Time derivative of the full state at time `t`.
///
/// For variants without `M` the policy, onset and mobility are ignored.
pub fn rhs(
    model: &ModelSpec,
    pop: &PopulationConfig,
    params: &[f64],
    state: &[f64],
    t: f64,
    policy: &VaccinePolicy,
) -> Result<Vec<f64>> {
    let k = pop.k();
    let nc = model.n_states();
    if state.len() != k * nc {
        return Err(Error::dim(format!(
            "state has {} entries, expected {k} x {nc}",
            state.len()
        )));
    }
    if model.kind.has_immune() && policy.k() != k {
        return Err(Error::dim(format!("policy covers {} subpopulations, expected {k}", policy.k())));
    }
    model.check_params(params)?;
    let rates = model.rates(params);
    let onset: Vec<f64> = (0..k).map(|i| sigmoid_onset(pop.onset_c1[i], pop.onset_c2[i], t)).collect();
    let mut vacc = vec![0.0; k];
    if model.kind.has_immune() {
        policy.rates_at(t, &mut vacc);
    }
    let mut out = vec![0.0; k * nc];
    deriv(model.kind, &rates, pop, state, &onset, &vacc, &mut out);
    Ok(out)
}

/// Initial state with `infected` persons in `I` and `exposed` in `E` per
/// subpopulation, everyone else susceptible.
pub fn initial_state(model: &ModelSpec, pop: &PopulationConfig, infected: f64, exposed: f64) -> Vec<f64> {
    let nc = model.n_states();
    let i_idx = model.state_index("I").expect("every model has I");
    let mut x = vec![0.0; pop.k() * nc];
    for (k, n) in pop.sizes.iter().enumerate() {
        x[k * nc] = n - infected - exposed;
        x[k * nc + 1] = exposed;
        x[k * nc + i_idx] = infected;
    }
    x
}
