//! Contract design, revocation equilibria and retention for federated
//! learning with a right to be forgotten.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contract;
pub mod error;
pub mod experiments;
pub mod learning;
pub mod model;
pub mod population;
pub mod retention;
pub mod revocation;
pub mod seed;
pub mod truncnorm;

pub use contract::{
    design_contract, optimal_data_sizes, optimal_rewards, verify_ir_ic, DesignScope, IrIcReport, PoolingSolution,
};
pub use error::{Error, Result};
pub use experiments::{run_comparison, run_pipeline, Comparison, CostRow, FinalState, Mechanism, Outcome, UserOutcome};
pub use learning::{LearnProblem, ProblemSpec, StepSchedule, TrainTrace};
pub use model::*;
pub use population::{
    find_stationary_rates, realized_rates, sample_population, PopulationModel, RateGrid, SpreadReading,
};
pub use retention::{
    optimal_retention, optimal_retention_exact, optimal_retention_heuristic, RetentionMethod, RetentionResult,
};
pub use revocation::{RevocationGame, RevocationProfile, StartFrom};
pub use truncnorm::{truncated_normal_moments, TruncatedNormal};
