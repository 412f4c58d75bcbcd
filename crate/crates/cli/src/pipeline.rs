//! The pipeline stages. Each reads its inputs from the artifact store and writes its outputs back.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use epialloc_core::ga::trace_to_csv;
use epialloc_core::scenario::scenario_set_from;
use epialloc_core::solver::fmt_f64;
use epialloc_core::{
    augment_onset, daily_grid, distribution_mode, fit_gp_hyperparams, generate_noisy_observations, mh_sample,
    nlls_fit, reduce_scenarios, simulate, solve_nominal, solve_stochastic, AllocationSetup, DiscreteDistribution,
    EpidemicSystem, GpHyperParams, KMeansConfig, PolicyEvaluator, PosteriorChain, ScenarioSet,
    SolverOptions, TimeSeriesData, Trajectory, VaccinePolicy,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, NominalSource};
use crate::error::{CliError, Result};
use crate::store::{Artifact, Store};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Nominal,
    Stochastic,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Nominal => "nominal",
            Mode::Stochastic => "stochastic",
        }
    }
}

/// Which policy `evaluate` scores.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyRef {
    Zero,
    Optimized(Mode),
    File(std::path::PathBuf),
}

impl PolicyRef {
    /// `zero`, `nominal`, `stochastic` or a path to a policy JSON file.
    pub fn parse(s: &str) -> Self {
        match s {
            "zero" => Self::Zero,
            "nominal" => Self::Optimized(Mode::Nominal),
            "stochastic" => Self::Optimized(Mode::Stochastic),
            path => Self::File(path.into()),
        }
    }

    fn name(&self) -> String {
        match self {
            Self::Zero => "zero".into(),
            Self::Optimized(m) => m.label().into(),
            Self::File(p) => p.file_stem().map_or("policy".into(), |s| s.to_string_lossy().into_owned()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBody {
    pub model: String,
    pub theta: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<Vec<f64>>,
    pub target: String,
    pub peak_total: f64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllsBody {
    pub theta: BTreeMap<String, f64>,
    pub residual: f64,
    pub start_residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mode: f64,
    pub mean: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub param_names: Vec<String>,
    pub samples: usize,
    pub acceptance_theta: f64,
    pub acceptance_states: f64,
    pub params: BTreeMap<String, ParamSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedBody {
    #[serde(flatten)]
    pub set: ScenarioSet,
    /// Squared type-2 Wasserstein distance to the chain's empirical distribution.
    pub w2_squared: f64,
}

/// A persisted dose schedule `V[k][d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyBody {
    pub window: [u32; 2],
    pub subpop_names: Vec<String>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<Vec<f64>>,
}

impl PolicyBody {
    pub fn policy(&self) -> VaccinePolicy {
        VaccinePolicy { window: self.window, doses: self.v.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationBody {
    pub policy: String,
    pub scenario_set: String,
    pub objective: f64,
    pub violation: f64,
    pub probabilities: Vec<f64>,
    pub peaks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub expected_peak: f64,
    pub reduction_vs_zero: f64,
    pub vss_vs_nominal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub rows: Vec<ComparisonRow>,
    /// Largest relative gap between recomputed and stored expected peaks.
    pub max_objective_gap: f64,
    /// Largest relative gap between re-simulated and stored scenario peaks.
    pub max_peak_gap: f64,
}

/// Tolerance of the report's cross-check against the evaluation artifacts.
pub const REPORT_TOLERANCE: f64 = 1e-9;

pub struct Pipeline {
    pub config: ExperimentConfig,
    pub store: Store,
}

fn theta_map(names: &[String], theta: &[f64]) -> BTreeMap<String, f64> {
    names.iter().cloned().zip(theta.iter().copied()).collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn scenario_csv(set: &ScenarioSet, subpops: &[String]) -> String {
    let mut out = String::from("p");
    for n in &set.param_names {
        let _ = write!(out, ",{n}");
    }
    for n in subpops {
        let _ = write!(out, ",c2_{n}");
    }
    out.push('\n');
    for s in &set.scenarios {
        out.push_str(&fmt_f64(s.p));
        for v in s.theta.iter().chain(&s.c2) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

fn rel_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Self {
        let store = Store::new(&config);
        Self { config, store }
    }

    fn core(stage: &str) -> impl Fn(epialloc_core::Error) -> CliError + '_ {
        move |e| CliError::from_core(stage, e)
    }

    /// Truth trajectory for the synthetic data and the allocation model's zero-policy baseline.
    pub fn simulate(&self) -> Result<()> {
        const STAGE: &str = "simulate";
        let c = &self.config;
        let spec = c.inference_model()?;
        let truth = c.truth()?;
        let pop = c.synthetic_population();
        let tr = simulate(
            &spec,
            &pop,
            &truth,
            &c.synthetic_x0()?,
            &daily_grid(c.synthetic.horizon),
            &VaccinePolicy::zeros(1, [0, 0]),
            &SolverOptions::default(),
        )
        .map_err(Self::core(STAGE))?;
        let infected = spec.state_index("I").expect("every model has I");
        let body = TrajectoryBody {
            model: spec.kind.label().into(),
            theta: theta_map(&spec.param_names, &truth),
            c2: None,
            target: "I".into(),
            peak_total: tr.peak_total(infected),
            trajectory: tr.clone(),
        };
        self.store.write("simulate", "truth.csv", tr.to_csv(&["p1".into()]).as_bytes())?;
        self.store.write_json(STAGE, "truth.json", &Artifact { provenance: self.store.provenance(STAGE), body })?;

        let setup = c.allocation_setup()?;
        let grid = daily_grid(setup.objective.horizon);
        let base = simulate(&setup.model, &setup.pop, &truth, &setup.x0, &grid, &setup.zero_policy(), &setup.solver)
            .map_err(Self::core(STAGE))?;
        let target = setup.model.state_index(&setup.objective.target_state).expect("validated");
        let body = TrajectoryBody {
            model: setup.model.kind.label().into(),
            theta: theta_map(&setup.model.param_names, &truth),
            c2: Some(setup.pop.onset_c2.clone()),
            target: setup.objective.target_state.clone(),
            peak_total: base.peak_total(target),
            trajectory: base.clone(),
        };
        self.store.write(STAGE, "baseline.csv", base.to_csv(&c.allocation.subpop_names).as_bytes())?;
        self.store.write_json(STAGE, "baseline.json", &Artifact { provenance: self.store.provenance(STAGE), body })?;
        Ok(())
    }

    pub fn synth(&self) -> Result<()> {
        const STAGE: &str = "synth";
        let (truth, digest) = self.store.read_json::<TrajectoryBody>("simulate", "truth.json")?;
        let s = &self.config.synthetic;
        let n = truth.body.trajectory.n_compartments();
        let obs = generate_noisy_observations(&truth.body.trajectory, &vec![s.noise_sigma; n], self.store.seed(STAGE))
            .map_err(Self::core(STAGE))?
            .window(s.window[0], s.window[1]);
        let mut prov = self.store.provenance(STAGE);
        prov.inputs.insert("simulate/truth.json".into(), digest);
        self.store.write(STAGE, "observations.csv", obs.to_csv().as_bytes())?;
        self.store.write_json(STAGE, "observations.json", &Artifact { provenance: prov, body: obs })?;
        Ok(())
    }

    fn observations(&self) -> Result<(TimeSeriesData, String)> {
        let (a, d) = self.store.read_json::<TimeSeriesData>("synth", "observations.json")?;
        Ok((a.body, d))
    }

    pub fn fit_gp(&self) -> Result<()> {
        const STAGE: &str = "fit-gp";
        let (obs, digest) = self.observations()?;
        let hp = fit_gp_hyperparams(&obs, self.config.inference.lambda).map_err(Self::core(STAGE))?;
        let mut prov = self.store.provenance(STAGE);
        prov.inputs.insert("synth/observations.json".into(), digest);
        self.store.write_json(STAGE, "hyperparams.json", &Artifact { provenance: prov, body: hp })?;
        Ok(())
    }

    pub fn fit_nlls(&self) -> Result<()> {
        const STAGE: &str = "fit-nlls";
        let (obs, digest) = self.observations()?;
        let spec = self.config.inference_model()?;
        let guess = match &self.config.inference.nlls_guess {
            Some(g) => g.clone(),
            None => spec.param_bounds.iter().map(|b| b.mid()).collect(),
        };
        let fit = nlls_fit(
            &obs,
            &spec,
            &self.config.synthetic_population(),
            &self.config.synthetic_x0()?,
            &guess,
            &SolverOptions::default(),
        )
        .map_err(Self::core(STAGE))?;
        let body = NllsBody {
            theta: theta_map(&spec.param_names, &fit.theta),
            residual: fit.residual,
            start_residuals: fit.start_residuals,
        };
        let mut prov = self.store.provenance(STAGE);
        prov.inputs.insert("synth/observations.json".into(), digest);
        self.store.write_json(STAGE, "estimate.json", &Artifact { provenance: prov, body })?;
        Ok(())
    }

    pub fn sample(&self) -> Result<()> {
        const STAGE: &str = "sample";
        let (obs, obs_digest) = self.observations()?;
        let (hp, hp_digest) = self.store.read_json::<GpHyperParams>("fit-gp", "hyperparams.json")?;
        let spec = self.config.inference_model()?;
        let system = EpidemicSystem::new(spec, self.config.synthetic.population).map_err(Self::core(STAGE))?;
        let chain = mh_sample(&obs, &system, &hp.body, &self.config.mh_config(self.store.seed(STAGE)))
            .map_err(Self::core(STAGE))?;
        let mut prov = self.store.provenance(STAGE);
        prov.inputs.insert("synth/observations.json".into(), obs_digest);
        prov.inputs.insert("fit-gp/hyperparams.json".into(), hp_digest);

        let mut csv = chain.param_names.join(",");
        csv.push('\n');
        for s in &chain.samples {
            csv.push_str(&s.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","));
            csv.push('\n');
        }
        let summary = summarize(&chain)?;
        self.store.write(STAGE, "chain.csv", csv.as_bytes())?;
        self.store.write_json(STAGE, "summary.json", &Artifact { provenance: prov.clone(), body: summary })?;
        self.store.write_json(STAGE, "chain.json", &Artifact { provenance: prov, body: chain })?;
        Ok(())
    }

    pub fn reduce(&self) -> Result<()> {
        const STAGE: &str = "reduce";
        let (chain, digest) = self.store.read_json::<PosteriorChain>("sample", "chain.json")?;
        let chain = chain.body;
        if chain.is_empty() {
            return Err(CliError::config("inference.burn_in", "the chain retained no samples"));
        }
        let r = &self.config.reduction;
        let dist = DiscreteDistribution::uniform(chain.samples.clone());
        let cfg = KMeansConfig {
            restarts: r.restarts,
            max_iter: r.max_iter,
            seed: self.store.seed(STAGE),
            standardize: r.standardize,
        };
        let (reduced, w2_squared) =
            reduce_scenarios(&dist, r.k.min(dist.len()), &cfg).map_err(|e| CliError::from_core("reduction", e))?;
        let set = scenario_set_from(
            chain.param_names.clone(),
            &reduced,
            &self.config.allocation.onset_c2,
            Some("sample/chain.json".into()),
            cfg.seed,
        );
        let mut prov = self.store.provenance(STAGE);
        prov.inputs.insert("sample/chain.json".into(), digest);
        self.store.write(STAGE, "scenarios.csv", scenario_csv(&set, &self.config.allocation.subpop_names).as_bytes())?;
        self.store.write_json(STAGE, "scenarios.json", &Artifact { provenance: prov, body: ReducedBody { set, w2_squared } })?;
        Ok(())
    }

    pub fn augment(&self) -> Result<()> {
        const STAGE: &str = "augment";
        let (reduced, digest) = self.store.read_json::<ReducedBody>("reduce", "scenarios.json")?;
        let omega = augment_onset(&reduced.body.set, &self.config.allocation.onset_grid).map_err(Self::core(STAGE))?;
        let mut prov = self.store.provenance(STAGE);
        prov.inputs.insert("reduce/scenarios.json".into(), digest);
        self.store.write(STAGE, "scenarios.csv", scenario_csv(&omega, &self.config.allocation.subpop_names).as_bytes())?;
        self.store.write_json(STAGE, "scenarios.json", &Artifact { provenance: prov, body: omega })?;
        Ok(())
    }

    /// The augmented scenario set, or a user-supplied one.
    fn scenarios(&self, file: Option<&Path>) -> Result<(ScenarioSet, String, String)> {
        match file {
            None => {
                let (a, d) = self.store.read_json::<ScenarioSet>("augment", "scenarios.json")?;
                Ok((a.body, d, "augment/scenarios.json".into()))
            }
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|source| CliError::Io { file: p.into(), source })?;
                let value: serde_json::Value = serde_json::from_slice(&bytes)
                    .map_err(|e| CliError::config(p.display().to_string(), e))?;
                let set: ScenarioSet =
                    serde_json::from_value(value).map_err(|e| CliError::config(p.display().to_string(), e))?;
                Ok((set, crate::store::sha256_hex(&bytes), p.display().to_string()))
            }
        }
    }

    /// Parameters used by the nominal formulation.
    pub fn nominal_theta(&self) -> Result<(Vec<f64>, Option<(String, String)>)> {
        let spec = self.config.inference_model()?;
        let source = self.config.allocation.nominal;
        if source == NominalSource::Truth {
            return Ok((self.config.truth()?, None));
        }
        let (summary, digest) = self.store.read_json::<ChainSummary>("sample", "summary.json")?;
        let theta = spec
            .param_names
            .iter()
            .map(|n| {
                summary.body.params.get(n).map(|p| if source == NominalSource::Mode { p.mode } else { p.mean }).ok_or_else(
                    || CliError::config("sample/summary.json", format!("parameter {n} missing from the summary")),
                )
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok((theta, Some(("sample/summary.json".into(), digest))))
    }

    pub fn optimize(&self, mode: Mode) -> Result<()> {
        const STAGE: &str = "optimize";
        let setup = self.config.allocation_setup()?;
        let ga = self.config.ga_config(self.store.seed(STAGE));
        let mut prov = self.store.provenance(STAGE);
        prov.mode = Some(mode.label().into());
        prov.ga = Some(ga.clone());
        let (outcome, theta, c2) = match mode {
            Mode::Nominal => {
                let (theta, input) = self.nominal_theta()?;
                if let Some((k, d)) = input {
                    prov.inputs.insert(k, d);
                }
                let c2 = setup.pop.onset_c2.clone();
                let out = solve_nominal(&setup, &theta, &c2, &ga).map_err(Self::core(STAGE))?;
                (out, Some(theta_map(&setup.model.param_names, &theta)), Some(c2))
            }
            Mode::Stochastic => {
                let (omega, digest, name) = self.scenarios(None)?;
                prov.inputs.insert(name, digest);
                (solve_stochastic(&setup, &omega, &ga).map_err(Self::core(STAGE))?, None, None)
            }
        };
        let body = PolicyBody {
            window: outcome.policy.window,
            subpop_names: self.config.allocation.subpop_names.clone(),
            v: outcome.policy.doses.clone(),
            objective: Some(outcome.objective),
            evaluations: Some(outcome.evaluations),
            theta,
            c2,
        };
        let label = mode.label();
        self.store.write(STAGE, &format!("trace_{label}.csv"), trace_to_csv(&outcome.trace).as_bytes())?;
        self.store.write_json(STAGE, &format!("policy_{label}.json"), &Artifact { provenance: prov, body })?;
        Ok(())
    }

    fn load_policy(&self, which: &PolicyRef, setup: &AllocationSetup) -> Result<(VaccinePolicy, Option<(String, String)>)> {
        match which {
            PolicyRef::Zero => Ok((setup.zero_policy(), None)),
            PolicyRef::Optimized(m) => {
                let name = format!("policy_{}.json", m.label());
                let (a, d) = self.store.read_json::<PolicyBody>("optimize", &name)?;
                Ok((a.body.policy(), Some((format!("optimize/{name}"), d))))
            }
            PolicyRef::File(p) => {
                if !p.exists() {
                    return Err(CliError::Missing { stage: "optimize".into(), file: p.clone() });
                }
                let bytes = std::fs::read(p).map_err(|source| CliError::Io { file: p.clone(), source })?;
                let body: PolicyBody =
                    serde_json::from_slice(&bytes).map_err(|e| CliError::config(p.display().to_string(), e))?;
                Ok((body.policy(), Some((p.display().to_string(), crate::store::sha256_hex(&bytes)))))
            }
        }
    }

    /// Scores a policy on the scenario set; writes `evaluate/<name>.{json,csv}`.
    pub fn evaluate(&self, which: &PolicyRef, scenarios: Option<&Path>) -> Result<EvaluationBody> {
        const STAGE: &str = "evaluate";
        let setup = self.config.allocation_setup()?;
        let (policy, input) = self.load_policy(which, &setup)?;
        let (omega, digest, set_name) = self.scenarios(scenarios)?;
        let ev = PolicyEvaluator::new(&setup, &omega).map_err(Self::core(STAGE))?;
        let r = ev.evaluate(&policy).map_err(Self::core(STAGE))?;
        let mut prov = self.store.provenance(STAGE);
        prov.inputs.insert(set_name.clone(), digest);
        if let Some((k, d)) = input {
            prov.inputs.insert(k, d);
        }
        let name = which.name();
        let body = EvaluationBody {
            policy: name.clone(),
            scenario_set: set_name,
            objective: r.objective,
            violation: r.violation,
            probabilities: omega.scenarios.iter().map(|s| s.p).collect(),
            peaks: r.peaks,
        };
        let mut csv = String::from("scenario,p,peak\n");
        for (i, (p, v)) in body.probabilities.iter().zip(&body.peaks).enumerate() {
            let _ = writeln!(csv, "{i},{},{}", fmt_f64(*p), fmt_f64(*v));
        }
        self.store.write(STAGE, &format!("{name}.csv"), csv.as_bytes())?;
        self.store.write_json(STAGE, &format!("{name}.json"), &Artifact { provenance: prov, body: body.clone() })?;
        Ok(body)
    }

    /// Comparison table and expected trajectories for the zero, nominal and stochastic policies.
    pub fn report(&self) -> Result<ReportBody> {
        const STAGE: &str = "report";
        let setup = self.config.allocation_setup()?;
        let (omega, omega_digest, _) = self.scenarios(None)?;
        let names = ["zero", "nominal", "stochastic"];
        let refs = [PolicyRef::Zero, PolicyRef::Optimized(Mode::Nominal), PolicyRef::Optimized(Mode::Stochastic)];
        let mut prov = self.store.provenance(STAGE);
        prov.inputs.insert("augment/scenarios.json".into(), omega_digest);

        let grid = daily_grid(setup.objective.horizon);
        let target = setup.model.state_index(&setup.objective.target_state).expect("validated");
        let nc = setup.model.n_states();
        let k = setup.pop.k();
        let mut expected = Vec::new();
        let mut objectives = Vec::new();
        let (mut max_obj_gap, mut max_peak_gap) = (0.0f64, 0.0f64);
        for (name, r) in names.iter().zip(&refs) {
            let (eval, digest) = self.store.read_json::<EvaluationBody>("evaluate", &format!("{name}.json"))?;
            prov.inputs.insert(format!("evaluate/{name}.json"), digest);
            let (policy, input) = self.load_policy(r, &setup)?;
            if let Some((key, d)) = input {
                prov.inputs.insert(key, d);
            }
            let eval = eval.body;
            if eval.peaks.len() != omega.len() {
                return Err(CliError::Numerical(format!(
                    "evaluate/{name}.json covers {} scenarios, the scenario set has {}",
                    eval.peaks.len(),
                    omega.len()
                )));
            }
            let recomputed: f64 = omega.scenarios.iter().zip(&eval.peaks).fold(0.0, |acc, (s, v)| acc + s.p * v);
            max_obj_gap = max_obj_gap.max(rel_gap(recomputed, eval.objective));

            let trajs = simulate_all(&setup, &omega, &policy, &grid)?;
            let mut mean = vec![vec![0.0; k * nc]; grid.len()];
            for ((tr, s), stored) in trajs.iter().zip(&omega.scenarios).zip(&eval.peaks) {
                max_peak_gap = max_peak_gap.max(rel_gap(tr.peak_total(target), *stored));
                for (row, x) in mean.iter_mut().zip(&tr.states) {
                    for (m, v) in row.iter_mut().zip(x) {
                        *m += s.p * v;
                    }
                }
            }
            expected.push(mean);
            objectives.push(eval.objective);
        }
        if max_obj_gap > REPORT_TOLERANCE || max_peak_gap > REPORT_TOLERANCE {
            return Err(CliError::Numerical(format!(
                "report cross-check failed: objective gap {max_obj_gap:e}, peak gap {max_peak_gap:e}"
            )));
        }

        let rows: Vec<ComparisonRow> = names
            .iter()
            .zip(&objectives)
            .map(|(n, v)| ComparisonRow {
                policy: n.to_string(),
                expected_peak: *v,
                reduction_vs_zero: 1.0 - v / objectives[0],
                vss_vs_nominal: (objectives[1] - v) / objectives[1],
            })
            .collect();
        let mut cmp = String::from("policy,expected_peak,reduction_vs_zero,vss_vs_nominal\n");
        for r in &rows {
            let _ = writeln!(
                cmp,
                "{},{},{},{}",
                r.policy,
                fmt_f64(r.expected_peak),
                fmt_f64(r.reduction_vs_zero),
                fmt_f64(r.vss_vs_nominal)
            );
        }
        self.store.write(STAGE, "policy_comparison.csv", cmp.as_bytes())?;

        let subpops = &self.config.allocation.subpop_names;
        let state = |s: &str| setup.model.state_index(s);
        let i_idx = state("I").expect("every model has I");
        let mut total = String::from("day");
        for n in names {
            let _ = write!(total, ",{n}");
        }
        total.push('\n');
        for (ti, t) in grid.iter().enumerate() {
            let _ = write!(total, "{}", *t as u32);
            for m in &expected {
                let v: f64 = (0..k).map(|kk| m[ti][kk * nc + i_idx]).sum();
                let _ = write!(total, ",{}", fmt_f64(v));
            }
            total.push('\n');
        }
        self.store.write(STAGE, "total_I.csv", total.as_bytes())?;

        let per_subpop = |s: usize| {
            let mut out = String::from("day");
            for n in names {
                for sp in subpops {
                    let _ = write!(out, ",{n}_{sp}");
                }
            }
            out.push('\n');
            for (ti, t) in grid.iter().enumerate() {
                let _ = write!(out, "{}", *t as u32);
                for m in &expected {
                    for kk in 0..k {
                        let _ = write!(out, ",{}", fmt_f64(m[ti][kk * nc + s]));
                    }
                }
                out.push('\n');
            }
            out
        };
        for s in ["I", "M", "H"] {
            if let Some(idx) = state(s) {
                self.store.write(STAGE, &format!("subpop_{s}.csv"), per_subpop(idx).as_bytes())?;
            }
        }
        let body = ReportBody { rows, max_objective_gap: max_obj_gap, max_peak_gap };
        self.store.write_json(STAGE, "report.json", &Artifact { provenance: prov, body: body.clone() })?;
        Ok(body)
    }

    /// Every stage in order.
    pub fn run(&self) -> Result<ReportBody> {
        self.simulate()?;
        self.synth()?;
        self.fit_gp()?;
        self.fit_nlls()?;
        self.sample()?;
        self.reduce()?;
        self.augment()?;
        self.optimize(Mode::Nominal)?;
        self.optimize(Mode::Stochastic)?;
        for p in ["zero", "nominal", "stochastic"] {
            self.evaluate(&PolicyRef::parse(p), None)?;
        }
        self.report()
    }
}

fn simulate_all(setup: &AllocationSetup, omega: &ScenarioSet, policy: &VaccinePolicy, grid: &[f64]) -> Result<Vec<Trajectory>> {
    use rayon::prelude::*;
    omega
        .scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let pop = setup.pop.with_onset(&s.c2);
            simulate(&setup.model, &pop, &s.theta, &setup.x0, grid, policy, &setup.solver)
                .map_err(|e| CliError::Numerical(format!("report: scenario {i}: {e}")))
        })
        .collect()
}

/// Mode, mean and quantiles of each parameter.
pub fn summarize(chain: &PosteriorChain) -> Result<ChainSummary> {
    let mut params = BTreeMap::new();
    if !chain.is_empty() {
        let mode = distribution_mode(&DiscreteDistribution::uniform(chain.samples.clone()))
            .map_err(|e| CliError::from_core("sample", e))?;
        let mean = chain.mean();
        for (j, name) in chain.param_names.iter().enumerate() {
            let mut col = chain.column(j);
            col.sort_by(f64::total_cmp);
            params.insert(
                name.clone(),
                ParamSummary {
                    mode: mode[j],
                    mean: mean[j],
                    q05: quantile(&col, 0.05),
                    q50: quantile(&col, 0.5),
                    q95: quantile(&col, 0.95),
                },
            );
        }
    }
    Ok(ChainSummary {
        param_names: chain.param_names.clone(),
        samples: chain.len(),
        acceptance_theta: chain.acceptance.theta,
        acceptance_states: chain.acceptance.states,
        params,
    })
}
