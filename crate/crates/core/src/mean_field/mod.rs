//! Mean-field equation with common noise: the frozen-driver map, its Picard
//! fixed point over a particle cloud, and the endogenous market price of risk.

pub mod cloud;
pub mod diagnostics;
pub mod solver;
pub mod tree;

pub use cloud::{type_cloud, TypeCloud};
pub use diagnostics::{default_lipschitz, smallness_report, ContractionDiagnostics};
pub use solver::{cloud_mean, gamma_map, solve_mean_field, MeanFieldProblem, MeanFieldSettings, MeanFieldSolution};
pub use tree::{binomial_tree_bundle, tree_groups, tree_oracle};
