//! Command-line driver for the splittable-field toolkit: JSON-configured
//! experiments producing deterministic JSON and CSV reports.

pub mod config;
pub mod experiments;
pub mod report;
