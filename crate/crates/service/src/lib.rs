//! Command-line tool and HTTP service around `signdigit-core`.

pub mod backends;
pub mod cli;
pub mod config;
pub mod server;
