//! Example models: an almost constant velocity particle filter, annealed SMC
//! for a Bayesian Gaussian mixture, and a conjugate normal model with a known
//! normalizing constant.

pub mod anneal;
pub mod conjugate;
pub mod data;
pub mod gmm;
pub mod pf;
