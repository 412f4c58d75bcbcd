//! Epidemic parameter inference, scenario reduction and vaccine allocation.
//!
//! The pipeline runs in four steps:
//!
//! 1. [`solver::simulate`] integrates the compartmental models of [`model`].
//! 2. [`mcmc::mh_sample`] draws parameters from the gradient-matching posterior of [`density`].
//! 3. [`scenario::reduce_scenarios`] and [`scenario::augment_onset`] compress the chain into a scenario set.
//! 4. [`ga::solve_nominal`] and [`ga::solve_stochastic`] search for dose allocations.

pub mod alloc;
pub mod density;
pub mod error;
pub mod ga;
pub mod gp;
pub mod mcmc;
pub mod model;
pub mod nlls;
pub mod observe;
pub mod optim;
pub mod scenario;
pub mod solver;
pub mod transport;

pub use alloc::{
    constraint_violation, evaluate_policy, AllocationSetup, BudgetConfig, EvaluationResult, ObjectiveSpec,
    PolicyEvaluator,
};
pub use density::{log_density, EpidemicSystem, GradientMatching, OdeSystem};
pub use error::{Error, Result};
pub use ga::{ga_optimize, solve_nominal, solve_stochastic, AllocationOutcome, GaConfig, GaProblem, TraceRow};
pub use gp::{fit_gp_hyperparams, gp_conditional_derivative, rbf_kernel_matrices, GpHyperParams, KernelMatrices, StateHyper};
pub use mcmc::{mh_sample, MhConfig, PosteriorChain};
pub use model::{initial_state, rhs, sigmoid_onset, Interval, ModelKind, ModelSpec, PopulationConfig, VaccinePolicy};
pub use nlls::{nlls_fit, NllsResult};
pub use observe::{generate_noisy_observations, TimeSeriesData};
pub use scenario::{
    augment_onset, distribution_mode, reduce_scenarios, DiscreteDistribution, KMeansConfig, Scenario, ScenarioSet,
};
pub use solver::{daily_grid, simulate, SolverOptions, Trajectory};
pub use transport::wasserstein_distance;
