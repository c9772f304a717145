//! HTTP service and command-line driver for the release engine. Both are
//! thin layers over [`dprelease`]; no privacy arithmetic happens here.

pub mod api;
pub mod cli;
pub mod config;

pub use api::{router, serve, AppState};
pub use config::{ServiceConfig, TokenGrant};
