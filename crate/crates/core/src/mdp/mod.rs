//! Executable dynamic-programming models and their exact solvers.
//!
//! Finite-horizon models use 1-indexed epochs: decisions happen at epochs
//! `1..T-1` and the terminal reward applies at `T`. Every solver breaks ties
//! toward the earliest action in the state's declared action list.

mod enumerate;
mod execute;
mod linalg;
mod model;
mod solve;
mod spec;

pub use enumerate::{enumerate_policies, policy_count, ENUMERATION_LIMIT};
pub use execute::{
    execute_solution, parse_single_number, Backend, CodeKind, ExecStatus, ExecutionResult, Executor,
    ScriptConfig, SolutionCode,
};
pub use model::{parse_and_validate, validate_spec, Choice, InvalidSpec, Stage, ValidatedSpec, PROBABILITY_TOLERANCE};
pub use solve::{
    backward_induction, policy_iteration, relative_value_iteration, solve, value_iteration,
    value_iteration_threshold, DecisionRule, IterationOptions, Policy, SolveError, SolveOutcome,
    StageValues, ValueFunction, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE,
};
pub use spec::{DPSpec, EpochActions, Horizon, HorizonKind, Initial, Objective, Query, RewardEntry, TransitionRow};

#[cfg(test)]
mod tests;
