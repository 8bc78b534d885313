//! Simulation and analysis toolkit for multi-server federated averaging.
//!
//! Regional servers with overlapping coverage each keep a regional model.
//! Clients in overlap areas start every round from the mean of the regional
//! models they can reach, train locally, and upload to the servers that
//! sampled them. The crate provides:
//!
//! * [`topology`]: coverage layouts, area types, mobility.
//! * [`datagen`]: Dirichlet label-skewed synthetic shards.
//! * [`model`]: softmax models with analytic gradients and local SGD.
//! * [`participation`]: full, unbiased and biased client sampling.
//! * [`engine`]: the multi-server training loop and HFL / FedAvg baselines.
//! * [`latency`]: per-round wireless transmission time for four architectures.
//! * [`theory`]: learning-rate conditions, assumption estimates, bound terms.
//! * [`config`] and [`experiment`]: run configuration, presets and outputs.

pub mod config;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod latency;
pub mod model;
pub mod participation;
pub mod rng;
pub mod theory;
pub mod topology;

pub use error::{Error, Result};
