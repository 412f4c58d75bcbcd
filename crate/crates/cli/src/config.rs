//! Experiment configuration: a TOML document with one table per pipeline stage.

use std::collections::BTreeMap;
use std::path::Path;

use epialloc_core::{
    initial_state, AllocationSetup, BudgetConfig, GaConfig, Interval, MhConfig, ModelKind, ModelSpec, ObjectiveSpec,
    PopulationConfig, SolverOptions,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    /// Output directory. Not part of the configuration hash.
    pub outdir: String,
    /// Worker cap for parallel evaluation. Not part of the configuration hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub synthetic: SyntheticConfig,
    pub inference: InferenceConfig,
    pub reduction: ReductionConfig,
    pub allocation: AllocationConfig,
    pub ga: GaSection,
}

/// Ground truth and observation model for the synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub model: ModelKind,
    pub population: f64,
    pub infected: f64,
    pub exposed: f64,
    pub theta: BTreeMap<String, f64>,
    /// Last simulated day.
    pub horizon: u32,
    pub noise_sigma: f64,
    /// Observed days, inclusive.
    pub window: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Parameter bounds overriding the model defaults.
    pub bounds: BTreeMap<String, [f64; 2]>,
    pub lambda: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub state_step: f64,
    pub store_states: bool,
    /// Starting guess for least squares; the box center when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nlls_guess: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub standardize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NominalSource {
    /// Per-parameter mode of the posterior chain.
    Mode,
    Mean,
    /// The synthetic ground truth.
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocationConfig {
    pub model: ModelKind,
    pub subpop_names: Vec<String>,
    pub sizes: Vec<f64>,
    pub mobility: Vec<Vec<f64>>,
    pub onset_c1: Vec<f64>,
    /// Nominal onset midpoints.
    pub onset_c2: Vec<f64>,
    /// Onset values enumerated per subpopulation when augmenting the scenario set.
    pub onset_grid: Vec<Vec<f64>>,
    pub eta: f64,
    pub infected: f64,
    pub exposed: f64,
    pub horizon: u32,
    pub target: String,
    pub window: [u32; 2],
    pub daily_budget: f64,
    pub cap: Vec<f64>,
    pub solver_step: f64,
    pub nominal: NominalSource,
}

/// GA settings; the seed comes from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaSection {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub eta_c: f64,
    pub eta_m: f64,
    pub include_zero_policy: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            outdir: "out".into(),
            threads: None,
            synthetic: SyntheticConfig::default(),
            inference: InferenceConfig::default(),
            reduction: ReductionConfig::default(),
            allocation: AllocationConfig::default(),
            ga: GaSection::default(),
        }
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Seir,
            population: 1000.0,
            infected: 10.0,
            exposed: 0.0,
            theta: [("alpha", 0.9), ("beta", 0.08), ("gamma", 0.1)].iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            horizon: 15,
            noise_sigma: 0.1,
            window: [1.0, 15.0],
        }
    }
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            bounds: BTreeMap::new(),
            lambda: epialloc_core::gp::DEFAULT_LAMBDA,
            iterations: 50_000,
            burn_in: 5_000,
            thin: 1,
            state_step: 0.5,
            store_states: false,
            nlls_guess: None,
        }
    }
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self { k: 25, restarts: 10, max_iter: 300, standardize: false }
    }
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Seirm,
            subpop_names: vec!["p1".into(), "p2".into(), "p3".into()],
            sizes: vec![7.5e5, 5e5, 1e6],
            mobility: vec![vec![1.0, 1e-4, 0.0], vec![1e-4, 1.0, 1e-4], vec![0.0, 1e-4, 1.0]],
            onset_c1: vec![0.6; 3],
            onset_c2: vec![20.0, 30.0, 10.0],
            onset_grid: vec![vec![19.0, 22.0], vec![29.0, 32.0], vec![9.0, 12.0]],
            eta: 0.99,
            infected: 100.0,
            exposed: 0.0,
            horizon: 120,
            target: "I".into(),
            window: [16, 40],
            daily_budget: 24e3,
            cap: vec![1e4; 3],
            solver_step: 0.25,
            nominal: NominalSource::Mode,
        }
    }
}

impl Default for GaSection {
    fn default() -> Self {
        let g = GaConfig::default();
        Self {
            population: g.population,
            generations: 60,
            crossover_prob: g.crossover_prob,
            mutation_prob: g.mutation_prob,
            eta_c: g.eta_c,
            eta_m: g.eta_m,
            include_zero_policy: g.include_zero_policy,
        }
    }
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Sets `a.b.c = value` inside a TOML table, creating intermediate tables.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(key, "empty key segment"));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| CliError::config(key, format!("`{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Tables keyed by parameter name; a file that sets them replaces the defaults entirely.
const MAP_FIELDS: [&str; 2] = ["synthetic.theta", "inference.bounds"];

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table, prefix: &str) {
    for (k, v) in top {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) if !MAP_FIELDS.contains(&path.as_str()) => {
                merge(b, t, &path)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Reads an optional TOML file over the defaults, applies `key=value` overrides and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&Self::default().to_toml()).expect("defaults round trip");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|source| CliError::Io { file: p.into(), source })?;
            let file = toml::from_str::<toml::Table>(&text).map_err(|e| CliError::config(p.display().to_string(), e))?;
            merge(&mut table, file, "");
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg = Self::from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::config("config", e.message()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, ignoring `outdir` and `threads`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.outdir.clear();
        c.threads = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Inference model with bound overrides applied.
    pub fn inference_model(&self) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(self.synthetic.model);
        for (name, [lo, hi]) in &self.inference.bounds {
            let j = spec
                .param_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| CliError::config(format!("inference.bounds.{name}"), "unknown parameter"))?;
            spec.param_bounds[j] = Interval::new(*lo, *hi);
        }
        spec.validate().map_err(|e| CliError::config("inference.bounds", e))?;
        Ok(spec)
    }

    pub fn truth(&self) -> Result<Vec<f64>> {
        let spec = self.inference_model()?;
        spec.params_from_map(&self.synthetic.theta).map_err(|e| CliError::config("synthetic.theta", e))
    }

    pub fn synthetic_population(&self) -> PopulationConfig {
        PopulationConfig::single(self.synthetic.population)
    }

    pub fn synthetic_x0(&self) -> Result<Vec<f64>> {
        let spec = self.inference_model()?;
        Ok(initial_state(&spec, &self.synthetic_population(), self.synthetic.infected, self.synthetic.exposed))
    }

    pub fn mh_config(&self, seed: u64) -> MhConfig {
        let i = &self.inference;
        MhConfig {
            thin: i.thin,
            state_step: i.state_step,
            store_states: i.store_states,
            ..MhConfig::new(i.iterations, i.burn_in, seed)
        }
    }

    pub fn ga_config(&self, seed: u64) -> GaConfig {
        let g = &self.ga;
        GaConfig {
            population: g.population,
            generations: g.generations,
            crossover_prob: g.crossover_prob,
            mutation_prob: g.mutation_prob,
            eta_c: g.eta_c,
            eta_m: g.eta_m,
            seed,
            include_zero_policy: g.include_zero_policy,
        }
    }

    pub fn allocation_population(&self) -> PopulationConfig {
        let a = &self.allocation;
        PopulationConfig {
            sizes: a.sizes.clone(),
            mobility: a.mobility.clone(),
            onset_c1: a.onset_c1.clone(),
            onset_c2: a.onset_c2.clone(),
            eta: a.eta,
        }
    }

    pub fn allocation_setup(&self) -> Result<AllocationSetup> {
        let a = &self.allocation;
        let inference = self.inference_model()?;
        let model = inference.with_kind(a.model).map_err(|e| CliError::config("allocation.model", e))?;
        let pop = self.allocation_population();
        let x0 = initial_state(&model, &pop, a.infected, a.exposed);
        Ok(AllocationSetup {
            model,
            pop,
            x0,
            objective: ObjectiveSpec { target_state: a.target.clone(), horizon: a.horizon },
            budgets: BudgetConfig::uniform(a.window, a.daily_budget, a.cap.clone()),
            solver: SolverOptions { step: a.solver_step },
        })
    }

    /// Checks every section, reporting the first offending field path.
    pub fn validate(&self) -> Result<()> {
        let s = &self.synthetic;
        if !(s.population > 0.0) {
            return Err(CliError::config("synthetic.population", "must be positive"));
        }
        if !(s.infected >= 0.0 && s.exposed >= 0.0 && s.infected + s.exposed <= s.population) {
            return Err(CliError::config("synthetic.infected", "initial cases must lie in [0, population]"));
        }
        if !(s.noise_sigma >= 0.0) {
            return Err(CliError::config("synthetic.noise_sigma", "must be nonnegative"));
        }
        if !(s.window[0] <= s.window[1] && s.window[1] <= s.horizon as f64) {
            return Err(CliError::config("synthetic.window", "must be ordered and end by the horizon"));
        }
        let spec = self.inference_model()?;
        if s.model.has_immune() {
            return Err(CliError::config("synthetic.model", "inference runs on a model without vaccination"));
        }
        let truth = self.truth()?;
        spec.check_params(&truth).map_err(|e| CliError::config("synthetic.theta", e))?;

        let i = &self.inference;
        if !(i.lambda > 0.0) {
            return Err(CliError::config("inference.lambda", "must be positive"));
        }
        self.mh_config(0).validate().map_err(|e| CliError::config("inference", e))?;
        if let Some(g) = &i.nlls_guess {
            if g.len() != spec.n_params() {
                return Err(CliError::config("inference.nlls_guess", format!("expected {} values", spec.n_params())));
            }
        }

        if self.reduction.k == 0 {
            return Err(CliError::config("reduction.k", "must be positive"));
        }

        let a = &self.allocation;
        let k = a.sizes.len();
        if a.subpop_names.len() != k {
            return Err(CliError::config("allocation.subpop_names", format!("expected {k} names")));
        }
        if a.onset_grid.len() != k || a.onset_grid.iter().any(Vec::is_empty) {
            return Err(CliError::config("allocation.onset_grid", format!("expected {k} nonempty lists")));
        }
        if a.cap.len() != k {
            return Err(CliError::config("allocation.cap", format!("expected {k} caps")));
        }
        if a.cap.iter().any(|u| !(*u >= 0.0)) {
            return Err(CliError::config("allocation.cap", "caps must be nonnegative"));
        }
        if !(a.daily_budget >= 0.0) {
            return Err(CliError::config("allocation.daily_budget", "must be nonnegative"));
        }
        if !(a.solver_step > 0.0) {
            return Err(CliError::config("allocation.solver_step", "must be positive"));
        }
        if !a.model.has_immune() {
            return Err(CliError::config("allocation.model", "allocation needs a model with vaccination"));
        }
        self.allocation_population().validate().map_err(|e| CliError::config("allocation.sizes", e))?;
        self.allocation_setup()?.validate().map_err(|e| CliError::config("allocation", e))?;

        self.ga_config(0).validate().map_err(|e| CliError::config("ga", e))?;
        if self.threads == Some(0) {
            return Err(CliError::config("threads", "must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_table(toml::from_str(&c.to_toml()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "ga.generations=7").unwrap();
        apply_override(&mut t, "allocation.cap=[1.0, 2.0, 3.0]").unwrap();
        apply_override(&mut t, "allocation.target=H").unwrap();
        let c = ExperimentConfig::from_table(t).unwrap();
        assert_eq!(c.ga.generations, 7);
        assert_eq!(c.allocation.cap, vec![1.0, 2.0, 3.0]);
        assert_eq!(c.allocation.target, "H");
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = ExperimentConfig::default();
        c.allocation.cap.pop();
        match c.validate() {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "allocation.cap"),
            other => panic!("{other:?}"),
        }
        let mut t = toml::Table::new();
        apply_override(&mut t, "ga.populaton=10").unwrap();
        assert!(ExperimentConfig::from_table(t).is_err());
    }

    #[test]
    fn overrides_layer_over_file_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 4\n[ga]\ngenerations = 9\n").unwrap();
        let c = ExperimentConfig::load(Some(&path), &["synthetic.theta.alpha=0.7".into()]).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.ga.generations, 9);
        assert_eq!(c.ga.population, GaSection::default().population);
        assert_eq!(c.synthetic.theta["alpha"], 0.7);
        assert_eq!(c.synthetic.theta["beta"], 0.08);
    }

    #[test]
    fn hash_ignores_outdir_and_threads() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.outdir = "elsewhere".into();
        b.threads = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
