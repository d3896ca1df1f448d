//! Host-side companion to `graphleap-core`: configuration documents, binary
//! tensor formats, the two-worker overlapped executor, reports and the CLI.

pub mod cli;
pub mod config_doc;
mod error;
pub mod io;
pub mod pipeline;
pub mod report;

pub use error::{Error, FormatError, Result};
