//! Programmatic risk-of-bias assessment for randomized controlled trials.
//!
//! The crate covers the seven RoB 1 domains and their criteria ([`domain`]),
//! trial and gold-label loading ([`corpus`]), a metered LLM gateway with an
//! offline mock backend ([`gateway`]), the two-step per-domain assessment
//! ([`assessment`]), reflective Pareto prompt search ([`optimizer`]),
//! mapping of external rating schemes ([`harmonize`]) and agreement
//! statistics ([`evaluation`]).

pub mod assessment;
pub mod clock;
pub mod corpus;
pub mod domain;
pub mod evaluation;
pub mod gateway;
pub mod harmonize;
pub mod optimizer;
pub mod scalar;

pub use domain::{RiskLabel, RobDomain};
pub use scalar::Scalar;

/// Pareto front over floating-point validation scores.
pub type ParetoFront = optimizer::Front<f64>;
/// Pareto front over exact rational scores.
pub type ExactParetoFront = optimizer::Front<num_rational::Ratio<i64>>;
/// Confusion-table rates in floating point.
pub type Rate = f64;
/// Confusion-table rates as exact fractions.
pub type ExactRate = num_rational::Ratio<i64>;
