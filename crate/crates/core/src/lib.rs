//! Stochastic multimodal fusion: a small autodiff engine, a coordinate
//! encoder, masked transformer fusion with contrastive and reconstruction
//! objectives, a synthetic information-decomposition benchmark, and ridge
//! probing.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod geo;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod par;
pub mod pid;
pub mod probe;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
