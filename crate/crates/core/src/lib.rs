//! Image-to-point-cloud registration toolkit.

pub mod error;
pub mod attention;
pub mod cli;
pub mod config;
pub mod geom;
pub mod gradcheck;
pub mod grouping;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod pose;
pub mod scenegen;
pub mod viz;

pub use error::{Error, Result};
