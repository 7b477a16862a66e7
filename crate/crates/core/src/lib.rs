//! Wasserstein-1 verification toolkit for Markov-process approximations.
//!
//! The crate compares a continuous-time Markov process with a discrete chain
//! that approximates it, in three settings (online SGD against its diffusion
//! limit, Euler-Maruyama for an alpha-stable Ornstein-Uhlenbeck process, and
//! normalized partial sums against a Gaussian), plus an exact finite-state
//! check of the one-step telescoping identity that underlies all of them.

pub mod chain_compare;
pub mod cli;
pub mod config;
pub mod error;
pub mod normal_clt;
pub mod rate_harness;
pub mod sampling;
pub mod sgd_diffusion;
pub mod stable_ou;
pub mod state;
pub mod wasserstein;

pub use error::{Error, Result};
pub use state::VectorState;
