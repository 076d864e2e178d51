//! Censoring-aware generative posterior sampling for the repeated newsvendor.
//!
//! The crate is `no_std` with `alloc`; the default `std` feature only widens
//! the error and RNG dependencies.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod math;
pub mod rng;

pub mod env;
pub mod survival;
pub mod flow;
pub mod train;
pub mod icgps;
pub mod baselines;
pub mod bco;
pub mod harness;

pub use env::{
    censor, demand_cdf, demand_density, demand_quantile, demand_sample, loss, optimal_order, realized_regret_step,
    sample_task, CensoredObs, CostParams, DemandModel, DiscreteLaw, FamilyPrior, History, HistoryStep, ParamPrior,
    PriorComponent, TaskPrior,
};
pub use error::{Error, Result};
pub use flow::{CompletionModel, FlowParams, FlowShape, HyperNetwork};
pub use survival::{encode_context, km_fit, km_quantile, ContextVector, HistorySummary, KMEstimator, CONTEXT_DIM};
