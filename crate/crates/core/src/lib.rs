//! Selective concept models.
pub mod cli;
pub mod data;
pub mod error;
pub mod intervention;
pub mod masking;
pub mod model;
pub mod nn;
pub mod report;
pub mod selection;
pub mod service;

pub use error::{Error, Result};
