//! Discrimination-aware classification toolkit.
//!
//! Measures disparate treatment and disparate impact in binary-decision data
//! and models, mitigates it before, during and after training, and runs a
//! staged audit whose tests produce pass/warn/fail reports.

pub mod dataset;
pub mod metrics;
pub mod model;
pub mod counterfactual;
pub mod mitigate;
pub mod scenarios;
pub mod audit;
pub mod cli;
