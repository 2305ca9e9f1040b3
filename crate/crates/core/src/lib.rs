//! Discrete-time peer-to-peer swarm simulator and scheduling library.
//!
//! Fragment spreading is modelled as one-dimensional diffusion along the
//! latency axis: swarm state sets a per-fragment permeability, a
//! pure-exponential erfc kernel turns latency and elapsed time into a
//! diffusion probability, and a staleness-decayed urgency argmax picks the
//! next (peer, fragment) transfer. A wavelet-recurrent forecaster predicts
//! future swarm state and feeds altered permeability values back into the
//! scheduler.

// Matrix and kernel code indexes by position throughout; iterator rewrites
// obscure the subscript structure.
#![allow(clippy::needless_range_loop)]

pub mod diffusion;
pub mod engine;
mod error;
pub mod forecast;
pub mod metric;
pub mod scheduler;

pub use diffusion::FragmentId;
pub use error::{Error, Result};
pub use metric::NodeId;
