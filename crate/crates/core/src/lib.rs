//! Federated semi-supervised learning with siamese local models.
//!
//! Every client trains an online net on its data and keeps a target net that
//! follows the online net by exponential moving average. Labeled data feeds a
//! cross-entropy loss and all data feeds a consistency loss between the two
//! nets. The server averages target nets and online nets weighted by client
//! sample counts. Online layers that barely differ from their target
//! counterparts are left out of uploads, chosen by an adaptive quantile
//! boundary over recent layer divergences.
//!
//! Module map:
//!
//! - [`nn`]: dense networks, losses, backpropagation, SGD.
//! - [`data`]: datasets, client partitioning schemes, input perturbation.
//! - [`siamese`]: EMA target nets, ramp schedules, local training loops.
//! - [`fedselect`]: layer divergence, quantile boundary, `tau` curves.
//! - [`fedcore`]: packets, splice and aggregation, the round loop.
//! - [`config`] and [`experiment`]: configuration files, runs, comparisons.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fedcore;
pub mod fedselect;
pub mod nn;
pub mod rng;
pub mod siamese;

pub use error::{Error, Result};
