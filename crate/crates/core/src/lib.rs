//! Fleet maintenance analytics.
//!
//! The crate turns vehicle and maintenance tables into vehicle × system × time
//! count tensors, factors them with nonnegative PARAFAC, explains each factor
//! with PRISM (in-group detection, n-gram mining and a Bayesian
//! difference-in-proportions test), and forecasts both maintenance sequences
//! and per-vehicle monthly costs.
//!
//! Modules map onto pipeline stages:
//!
//! * [`ingest`]: CSV parsing, cleaning, per-vehicle sequences
//! * [`tensor`]: dense count tensors under absolute-month or lifetime-year time axes
//! * [`parafac`]: multiplicative-update nonnegative CP decomposition and fit metric
//! * [`prism`]: BGMM in-groups, n-gram mining, BDPT, and the frequentist DSM baseline
//! * [`forecast`]: cost series, ARIMA (CSS) with rolling-origin evaluation, sequence models and perplexity
//! * [`synthgen`]: synthetic fleets with planted structure and recovery scoring
//! * [`pipeline`]: the stage drivers behind the `fleet-prism` binary

pub mod config;
pub mod error;
pub mod forecast;
pub mod ingest;
pub mod money;
pub mod parafac;
pub mod pipeline;
pub mod prism;
pub mod seed;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
