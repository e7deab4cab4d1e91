//! Multiclass jump processes on block-structured networks.

pub mod error;
pub mod experiments;
pub mod graph;
pub mod io;
pub mod ldp;
pub mod meanfield;
pub mod metrics;
pub mod oracle;
pub mod particle;
pub mod rates;
pub mod rng;
mod sumtree;

pub use error::{Error, Result};
pub use experiments::{
    default_tagged, lln_experiment, multichaos_test, ConvergenceReport, ConvergenceRow, GraphFamily, LlnSettings,
    MultichaosResult,
};
pub use graph::{
    check_regularity, component_index, component_of, neighborhood_proportions, BlockGraph, BlockSize,
    NeighborhoodProportions, NodeClass, ProportionTargets, RegularityReport,
};
pub use ldp::{
    girsanov_log_density, h_functional, legendre_cost, tau, tau_star, variational_cost, variational_norm,
    DeviationCost, RateFamily,
};
pub use meanfield::{
    picard_iterate, simulate_limit_particle, solve_mckean_vlasov, ColorPath, FlowRates, GeneratorMatrix, MeanFieldFlow,
    PicardResult,
};
pub use metrics::{d_bl, relative_entropy, total_variation, w1_discrete};
pub use oracle::{master_equation_oracle, product_distribution, OracleDistribution};
pub use particle::{
    empirical_process, local_empirical, sample_initial_state, simulate, EmpiricalVector, Event, SystemState, Trajectory,
};
pub use rates::{lambda_c, lambda_p, queue_spec, sis_spec, ColorGraph, Measure, RateModel, RateSpec};
pub use rng::{replica_rng, SimRng};
