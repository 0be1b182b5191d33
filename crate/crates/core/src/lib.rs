//! Momentum-conserving Lagrangian neural networks.
//!
//! Learns the pairwise potential of a multi-particle system from position
//! trajectories alone. The system Lagrangian is kinetic energy minus a sum
//! of one shared network evaluated on every interparticle distance, so
//! translation and rotation invariance (and with them conservation of
//! linear and angular momentum) hold by construction.

pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod lagrangian;
pub mod nn;
pub mod systems;
pub mod training;

pub use error::{Error, Result};
