//! Variational Gromov-Wasserstein distances between finitely supported
//! measures, a direct estimator of the null limit law, and a two-sample test
//! for isomorphism of independent-edge random graph models.

pub mod cli;
pub mod error;
pub mod graph_match;
pub mod graph_model;
pub mod gw_solver;
pub mod limit_sampler;
pub mod measures;
pub mod ot_entropic;
pub mod ot_exact;
pub mod rng;

pub use error::{Error, Result};
pub use measures::{center, gw_quadratic_value, moments, s1, Coupling, DiscreteMeasure, MomentSummary};
