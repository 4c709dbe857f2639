//! Offline Q-ensemble actor-critic training (SAC-N, EDAC, LB-SAC) with
//! large-batch optimisation, toy continuous-control datasets and the
//! diagnostics used to study ensemble pessimism.

pub mod algorithms;
mod binio;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod networks;
pub mod optimizers;
pub mod rng;

pub use error::{Error, Result};

// Training allocates many short-lived activation buffers of a few hundred
// kilobytes; the system allocator maps and unmaps each of them.
#[cfg(feature = "mimalloc")]
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
pub use lbsac_autodiff as autodiff;
pub use rng::Rng;
