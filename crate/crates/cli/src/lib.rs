//! Pieces of the `radchar` command line that are useful on their own.

pub mod config;
