//! Budget constraints and expected-peak evaluation of vaccine policies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, PopulationConfig, VaccinePolicy};
use crate::scenario::ScenarioSet;
use crate::solver::{daily_grid, simulate, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub window: [u32; 2],
    /// Total doses available on each window day.
    pub daily_budget: Vec<f64>,
    /// Per-subpopulation daily cap.
    pub cap: Vec<f64>,
}

impl BudgetConfig {
    pub fn uniform(window: [u32; 2], budget: f64, cap: Vec<f64>) -> Self {
        let w = (window[1].saturating_sub(window[0]) + 1) as usize;
        Self { window, daily_budget: vec![budget; w], cap }
    }

    pub fn width(&self) -> usize {
        (self.window[1] - self.window[0] + 1) as usize
    }

    pub fn validate(&self, horizon: u32) -> Result<()> {
        if self.window[1] < self.window[0] {
            return Err(Error::domain("budget window end precedes its start"));
        }
        if self.window[1] > horizon {
            return Err(Error::domain("budget window extends past the horizon"));
        }
        if self.daily_budget.len() != self.width() {
            return Err(Error::dim(format!("{} daily budgets for a {}-day window", self.daily_budget.len(), self.width())));
        }
        if self.daily_budget.iter().chain(&self.cap).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::domain("budgets and caps must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    /// Compartment whose summed peak is minimized (`I` or `H`).
    pub target_state: String,
    pub horizon: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    /// `Σ p_ω peak_ω`.
    pub objective: f64,
    pub peaks: Vec<f64>,
    pub violation: f64,
}

/// Total budget overshoot plus cap overshoot plus negative doses.
pub fn constraint_violation(policy: &VaccinePolicy, budgets: &BudgetConfig) -> f64 {
    let mut v = 0.0;
    for d in 0..policy.width() {
        let day_total: f64 = policy.doses.iter().map(|row| row[d]).sum();
        let b = budgets.daily_budget.get(d).copied().unwrap_or(0.0);
        v += (day_total - b).max(0.0);
    }
    for (k, row) in policy.doses.iter().enumerate() {
        let u = budgets.cap.get(k).copied().unwrap_or(0.0);
        for x in row {
            v += (x - u).max(0.0) + (-x).max(0.0);
        }
    }
    v
}

/// Model, population and constraints shared by every evaluation of one allocation problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSetup {
    pub model: ModelSpec,
    pub pop: PopulationConfig,
    pub x0: Vec<f64>,
    pub objective: ObjectiveSpec,
    pub budgets: BudgetConfig,
    pub solver: SolverOptions,
}

impl AllocationSetup {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pop.validate()?;
        self.budgets.validate(self.objective.horizon)?;
        if !self.model.kind.has_immune() {
            return Err(Error::domain(format!("{} has no vaccination compartment", self.model.kind.label())));
        }
        if self.model.state_index(&self.objective.target_state).is_none() {
            return Err(Error::domain(format!("target state {} not in model", self.objective.target_state)));
        }
        if self.budgets.cap.len() != self.pop.k() {
            return Err(Error::dim(format!("{} caps for {} subpopulations", self.budgets.cap.len(), self.pop.k())));
        }
        if self.x0.len() != self.pop.k() * self.model.n_states() {
            return Err(Error::dim("initial state does not match model and population"));
        }
        Ok(())
    }

    pub fn zero_policy(&self) -> VaccinePolicy {
        VaccinePolicy::zeros(self.pop.k(), self.budgets.window)
    }
}

/// A validated setup bound to a scenario set.
#[derive(Debug, Clone)]
pub struct PolicyEvaluator {
    pub setup: AllocationSetup,
    pub scenarios: ScenarioSet,
    target: usize,
    grid: Vec<f64>,
}

impl PolicyEvaluator {
    pub fn new(setup: &AllocationSetup, scenarios: &ScenarioSet) -> Result<Self> {
        setup.validate()?;
        scenarios.validate()?;
        if scenarios.param_names != setup.model.param_names {
            return Err(Error::dim("scenario parameters do not match the model"));
        }
        if scenarios.scenarios.iter().any(|s| s.c2.len() != setup.pop.k()) {
            return Err(Error::dim("every scenario needs one onset value per subpopulation"));
        }
        let target = setup.model.state_index(&setup.objective.target_state).expect("validated");
        Ok(Self {
            setup: setup.clone(),
            scenarios: scenarios.clone(),
            target,
            grid: daily_grid(setup.objective.horizon),
        })
    }

    pub fn k(&self) -> usize {
        self.setup.pop.k()
    }

    /// Peak of the target compartment summed over subpopulations in one scenario.
    pub fn scenario_peak(&self, policy: &VaccinePolicy, index: usize) -> Result<f64> {
        let s = &self.scenarios.scenarios[index];
        let st = &self.setup;
        let pop = st.pop.with_onset(&s.c2);
        let tr = simulate(&st.model, &pop, &s.theta, &st.x0, &self.grid, policy, &st.solver)
            .map_err(|e| Error::Scenario { scenario: index, source: Box::new(e) })?;
        Ok(tr.peak_total(self.target))
    }

    /// Scenarios run in parallel on the current rayon pool; the weighted sum is taken in scenario order.
    pub fn evaluate(&self, policy: &VaccinePolicy) -> Result<EvaluationResult> {
        self.check_policy(policy)?;
        let peaks = (0..self.scenarios.len())
            .into_par_iter()
            .map(|i| self.scenario_peak(policy, i))
            .collect::<Result<Vec<f64>>>()?;
        let objective = expected_value(&self.scenarios, &peaks);
        Ok(EvaluationResult { objective, peaks, violation: constraint_violation(policy, &self.setup.budgets) })
    }

    fn check_policy(&self, policy: &VaccinePolicy) -> Result<()> {
        policy.validate()?;
        if policy.window != self.setup.budgets.window {
            return Err(Error::domain("policy window differs from the budget window"));
        }
        if policy.k() != self.k() {
            return Err(Error::dim(format!("policy covers {} subpopulations, expected {}", policy.k(), self.k())));
        }
        Ok(())
    }
}

/// `Σ p_ω peak_ω` accumulated in scenario order.
pub fn expected_value(set: &ScenarioSet, peaks: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (s, v) in set.scenarios.iter().zip(peaks) {
        acc += s.p * v;
    }
    acc
}

/// One-shot evaluation of a policy against a scenario set.
pub fn evaluate_policy(
    policy: &VaccinePolicy,
    scenarios: &ScenarioSet,
    setup: &AllocationSetup,
) -> Result<EvaluationResult> {
    PolicyEvaluator::new(setup, scenarios)?.evaluate(policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn violation_examples() {
        let b = BudgetConfig::uniform([16, 40], 24e3, vec![1e4; 3]);
        let zero = VaccinePolicy::zeros(3, [16, 40]);
        assert_eq!(constraint_violation(&zero, &b), 0.0);

        let mut full = zero.clone();
        for row in full.doses.iter_mut() {
            row.fill(1e4);
        }
        assert_eq!(constraint_violation(&full, &b), 6e3 * 25.0);

        let mut one = zero.clone();
        one.doses[1][3] = 1e4 + 1.0;
        assert_eq!(constraint_violation(&one, &b), 1.0);

        let mut neg = zero;
        neg.doses[0][0] = -2.0;
        assert_eq!(constraint_violation(&neg, &b), 2.0);
    }

    #[test]
    fn budget_validation() {
        let b = BudgetConfig::uniform([16, 40], 24e3, vec![1e4; 3]);
        assert!(b.validate(120).is_ok());
        assert!(b.validate(30).is_err());
        let mut bad = b.clone();
        bad.daily_budget.pop();
        assert!(bad.validate(120).is_err());
    }
}
