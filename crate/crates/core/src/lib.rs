//! Local-first routing for fill-in-the-middle code completion.
//!
//! A small local model answers first; its completion is kept when the
//! model is confident and the completion parses in context, and escalated
//! to a larger self-hosted model otherwise. Baseline routers, calibration
//! and the evaluation harness live here too.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod calibration;
pub mod confidence;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod postprocess;
pub mod records;
pub mod routers;
pub mod synth;
pub mod syntax;

pub use error::{BackendError, Error, Result};
