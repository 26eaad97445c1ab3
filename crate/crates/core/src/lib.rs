//! Federated learning with mined signal temporal logic properties.
//!
//! The crate is layered bottom-up:
//!
//! * [`stl`]: formulas, parsing, boolean and robustness semantics.
//! * [`mining`]: templated properties and tight parameter inference.
//! * [`projection`]: DNF expansion, L1 projection onto satisfying traces,
//!   the property loss and teacher correction.
//! * [`models`]: small sequence predictors with a shared/private parameter
//!   split and manual gradients.
//! * [`federation`]: property-based clustering, bi-level client/cluster
//!   training, a FedAvg baseline and evaluation.
//! * [`datagen`]: synthetic heterogeneous client data and CSV I/O.
//! * [`config`] and [`experiment`]: run configuration and end-to-end runs.

// NaN must fail validation, hence `!(x > 0.0)` style checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod datagen;
pub mod experiment;
pub mod federation;
pub mod mining;
pub mod models;
pub mod projection;
pub mod stl;
