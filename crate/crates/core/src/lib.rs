//! Recurrent U-Net graph neural network surrogate for sheet forming.

pub mod autodiff;
pub mod cli;
pub mod coarsen;
pub mod contact;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod meshgraph;
pub mod net;
pub mod oracle;
pub mod persist;
pub mod pipeline;
pub mod train;

pub use error::{Error, ErrorKind, Result};
