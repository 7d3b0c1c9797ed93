//! Hybrid Bayesian optimization: Gaussian-process surrogates for unknown model
//! equations embedded as constraints in mechanistic nonlinear programs.

pub mod benchmarks;
pub mod bo;
pub mod campaign;
pub mod expr;
pub mod gp;
pub mod model;
pub mod nlp;
pub mod rng;
pub mod scenario;
