//! Sparse, conservative data attribution through a Crammer-Singer SVM
//! surrogate fitted on penultimate-layer features.
//!
//! The pipeline: cache features ([`store`]), fit the surrogate in the dual
//! ([`svm`]), read attributions off the dual coefficients ([`attribution`]),
//! explain individual attributions in input space with paired LRP heatmaps
//! ([`netlrp`]) and score attribution methods ([`eval`]) against the
//! reference methods in [`baselines`].

pub mod attribution;
pub mod baselines;
pub mod error;
pub mod eval;
pub mod netlrp;
pub mod store;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};
pub use store::{load_cache, save_cache, FeatureCache, GradientCache};
pub use svm::{solve, DualSolution, SolverOptions, SurrogateModel};
