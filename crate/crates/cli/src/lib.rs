//! Command line entry points and the HTTP review service.

pub mod commands;
pub mod plot;
pub mod server;
pub mod store;
