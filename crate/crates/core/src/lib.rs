//! Collaborative metric learning for implicit-feedback top-K
//! recommendation, with hierarchical latent relation models (HLR, HLR++)
//! and the CML, LRML and AdaCML baselines.

pub mod cli;
pub mod dataset;
pub mod evaluation;
pub mod models;
pub mod parameters;
pub mod rng;
pub mod synthetic;
pub mod training;
