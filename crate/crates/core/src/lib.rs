//! Deterministic discrete-event simulator of a three-tier drought-monitoring
//! sensor network: coverage planning, a layered node stack with tree,
//! directed-diffusion and flooding routing, base-station backbone and
//! central database, and four-class drought analytics with a wind-advection
//! forecast.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod backbone;
pub mod config;
pub mod coverage;
pub mod environment;
pub mod export;
pub mod kernel;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod stack;
