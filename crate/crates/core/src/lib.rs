//! Fully decentralized policy evaluation with off-policy eligibility traces,
//! linear function approximation, exact-diffusion primal-dual updates and
//! amortized variance reduction.
//!
//! The crate is organized around desk-scale verifiability: every stochastic
//! component is paired with an exact analytical oracle so estimators, network
//! updates and the solvers can be checked against closed forms.
//!
//! * [`mdp`]: finite MDPs, induced Markov chains, exact value functions and
//!   stationary distributions.
//! * [`features`]: linear function approximation: feature matrices and the
//!   weighted projection onto their span.
//! * [`sampler`]: behavior-policy trajectories and importance-ratio tables.
//! * [`estimators`]: per-sample and batch estimates of the quadratic problem
//!   data (A, b, C, U) with eligibility traces, plus multi-agent aggregation.
//! * [`oracle`]: exact problem data, saddle points, and bias/variance curve
//!   machinery.
//! * [`network`]: agent graphs and doubly-stochastic combination matrices.
//! * [`solver`]: the exact-gradient diffusion solver, the single-agent
//!   amortized variance-reduced reference, the variance-reduced decentralized
//!   solver, and a decaying-step-size baseline.
//! * [`io`]: versioned text serialization for all artifact types.
//!
//! All numeric code is generic over [`scalar::Scalar`]; `f64` aliases for the
//! main types live at the crate root.

pub mod error;
pub mod estimators;
pub mod features;
pub mod io;
pub mod mdp;
pub mod network;
pub mod oracle;
pub mod sampler;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default precision for the concrete aliases below.
pub type DefaultScalar = f64;

pub type Mdp64 = mdp::Mdp<DefaultScalar>;
pub type Policy64 = mdp::Policy<DefaultScalar>;
pub type MarkovChain64 = mdp::MarkovChain<DefaultScalar>;
pub type FeatureMap64 = features::FeatureMap<DefaultScalar>;
pub type Dataset64 = sampler::Dataset<DefaultScalar>;
pub type RatioTable64 = sampler::RatioTable<DefaultScalar>;
pub type EstimateSet64 = estimators::EstimateSet<DefaultScalar>;
pub type ExactProblem64 = oracle::ExactProblem<DefaultScalar>;
pub type BellmanOperators64 = oracle::BellmanOperators<DefaultScalar>;
pub type Topology64 = network::Topology<DefaultScalar>;
pub type SolverConfig64 = solver::SolverConfig<DefaultScalar>;
pub type Trace64 = solver::Trace<DefaultScalar>;
