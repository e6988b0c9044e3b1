//! Inference compilation for a small universal probabilistic-programming
//! core, with dot-product attention over previously sampled variables.

pub mod acsim;
pub mod dist;
pub mod icnet;
pub mod models;
pub mod nn;
pub mod par;
pub mod sis;
pub mod trace;
pub mod trainer;
