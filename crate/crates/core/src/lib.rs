pub mod batch;
pub mod branching;
pub mod busy_cycle;
pub mod dist;
pub mod error;
pub mod model;
pub mod map_gate;
pub mod numerics;
pub mod sim;
pub mod vacation;

pub use dist::DistSpec;
pub use error::{Error, Result};
pub use model::{InitialState, ModelParams, TruncationPolicy};
