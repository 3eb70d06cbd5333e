//! Command-line, annotation service and knowledge-base export on top of the
//! `omner` library.

pub mod config;
pub mod kb;
pub mod service;
pub mod store;
