pub mod analyze;
pub mod artifact;
pub mod augment;
pub mod cli;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod params;
pub mod text;
pub mod train;

pub use error::{Error, Result};
