//! Encoder and decoder networks with hand-written backpropagation.
//!
//! Every network is a single tanh hidden layer. Gradients are accumulated
//! into a value of the same type, so a network doubles as its own gradient
//! buffer and optimizer state.

mod bernoulli;
mod gaussian;
mod params;
mod vae;

pub use bernoulli::{bernoulli_loglik, bernoulli_loglik_grad_logits, BernoulliMlp, BernoulliTrace, PROB_CLAMP};
pub use gaussian::{
    gaussian_loglik, gaussian_loglik_grad, GaussianMlp, GaussianParams, GaussianTrace, LOG_VAR_BOUND,
};
pub use params::Parameters;
pub use vae::{vae_backward, vae_backward_into, Decoder, DecoderFamily, ModelShape, VaeGradient, VaeModel};

pub(crate) use vae::{kl_term, log_q_at_noise, log_std_normal};
