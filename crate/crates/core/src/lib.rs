//! Variational auto-encoders trained by reparameterized gradients.
//!
//! Covers reparameterized sampling, stochastic lower-bound estimators, MLP
//! encoders and decoders with hand-derived gradients, minibatch training,
//! the wake-sleep and Monte Carlo EM baselines, HMC-based evaluation and
//! variational Bayes over the generative parameters.

pub mod aevb;
pub mod baselines;
pub mod dataio;
pub mod error;
pub mod evalkit;
pub mod fullvb;
pub mod networks;
pub mod numkit;
pub mod objective;
pub mod samplers;

pub use error::{AevbError, Result};
