//! Variance allocation across Gaussian variables: estimators for the expected
//! maximum, approximation algorithms, and empirical checks of their structure.

pub mod analysis;
pub mod error;
pub mod gaussian_oracle;
pub mod instances;
pub mod normal;
pub mod quadrature;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
pub use gaussian_oracle::{
    expected_max_correlated, expected_max_independent, expected_max_pair, expected_max_with_floor,
    graph_objective, graph_objective_correlated, CovarianceSpec, Estimate, EstimatorConfig,
    GaussianVector, Method, MethodUsed,
};
pub use instances::{
    complete_k_subsets_instance, cycle_instance, erdos_renyi_instance, parse_instance,
    serialize_instance, AllocationVector, Instance,
};
