//! Domain types and exact likelihood/prior evaluation for the joint MRD and
//! drug-sensitivity model.

pub mod density;
pub mod design;
pub mod likelihood;
pub mod types;

pub use design::{build_design, DesignMatrix, Standardization, SubtypeRegistry};
pub use likelihood::{
    log_prior, loglik_censored, loglik_uncensored, mean_day15, mean_day42, mixture_loglik,
    total_loglik,
};
pub use types::*;
