//! Quality evaluation, cluster-level consistency repair and Monte Carlo
//! simulation studies for synthetic two-level (parent/child) tabular data.

pub mod clca;
pub mod data;
pub mod efficacy;
pub mod error;
pub mod fidelity;
pub mod frame;
pub mod generators;
pub mod report;
pub mod seed;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
