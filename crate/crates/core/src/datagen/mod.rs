//! Regressor and observation generators.

mod gaussian;
mod str_loop;
mod target;

pub use gaussian::{
    gen_nonstationary_gaussian, gen_stationary_regressors, GaussianRegressors,
    NonStatGaussianConfig,
};
pub use str_loop::{reference_signal, StrConfig, StrState};
pub use target::{lowrank_observe, make_lowrank_target, LowRankTarget};
