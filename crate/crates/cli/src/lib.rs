//! Library half of the `emomem` binary: argument types, command runners and
//! the HTTP service, split out so they can be tested in-process.

pub mod args;
pub mod commands;
pub mod exit;
pub mod service;
