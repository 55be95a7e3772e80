//! Command-line front end for the `histner` library.

pub mod commands;
pub mod config;
