//! Key-supply buffering for quantum key distribution networks.
//!
//! Endpoints keep a buffer of relayed key blocks so application requests can
//! be served without waiting for a multi-hop relay. The crate contains the
//! slot model, the statistics used to size the buffer, the buffer
//! controllers, a trusted-relay network simulator and a scenario runner.

// NaN must fail the positivity checks, so they are written as negations.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod controllers;
pub mod metrics;
pub mod model;
pub mod netsim;
pub mod oracle;
pub mod scenario;
pub mod traffic;
