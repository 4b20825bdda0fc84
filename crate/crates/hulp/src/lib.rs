//! File formats, command-line tools and the HTTP inference service around
//! [`hulp_core`].

pub mod checkpoint;
pub mod cli;
pub mod cohort_io;
pub mod config;
pub mod reports;
pub mod service;

pub use hulp_core as core;
