//! Configuration, expression parsing and pipelines behind the `leafcycle` binary.

pub mod config;
pub mod expr;
pub mod output;
pub mod runner;
