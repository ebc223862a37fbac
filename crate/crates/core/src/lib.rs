//! Online recovery of low-rank parameter matrices from streaming linear
//! observations, with data generators and statistical diagnostics.

pub mod channel;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod recovery;
pub mod rng;

pub use error::{Error, Result};
pub use recovery::{recover, LambdaSchedule, RecoveryOutput, RlsState};
