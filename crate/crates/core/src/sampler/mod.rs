//! Gibbs sampler: random draws, full-conditional kernels and the chain driver.

pub mod chain;
pub mod data;
pub mod draw;
pub mod kernels;

pub use chain::{
    run_chain, run_chains, ChainState, McmcConfig, ParamLayout, SampleStore, SamplerOptions,
};
pub use data::{DataOptions, ModelData};
