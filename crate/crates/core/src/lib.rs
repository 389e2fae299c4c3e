//! Design-space exploration for fog and edge deployments.
//!
//! The crate walks a design space through a fixed funnel: enumerate every
//! placement of services onto infrastructure nodes, prune with best-practice
//! rules, simulate cost and latency, keep the cheapest SLO-conforming options,
//! and benchmark those on an emulated single-host testbed.

// `!(x > 0.0)` is used on purpose: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bestpractices;
pub mod casestudy;
pub mod emulator;
pub mod enumerate;
pub mod ids;
pub mod model;
pub mod pipeline;
pub mod simulator;

pub use ids::{ComponentId, HardwareId, LinkId, NodeId, OptionId, PathId};
