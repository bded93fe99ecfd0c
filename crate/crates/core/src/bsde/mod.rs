//! Regression-based solvers for the quadratic backward equations of a
//! single agent, under the physical measure and under the measure that
//! removes the market price of risk.

pub mod basis;
pub mod estimator;
pub mod solver;
pub mod verification;

pub use basis::{BasisSpec, PolyBasis, StateVar};
pub use estimator::{ConditionalExpectation, HistoryEstimator, IntegrandMap, RegressionEstimator};
pub use solver::{
    backward_pass, bmo_proxy, cole_hopf_oracle, solve_agent_bsde, solve_under_q, BsdeSolution, MeasureChangeSolution,
    SolverSettings, ThetaPath,
};
pub use verification::{
    optimal_strategy, verify_condition_r, ConditionRReport, DriftEstimate, Perturbation, Strategy, TailDiagnostics,
};
