pub mod acceptance;
pub mod arith;
pub mod cli;
pub mod empirical;
pub mod error;
pub mod lattice;
pub mod moments;
pub mod numeric;
pub mod profile;
pub mod voronoi;

pub use error::{Error, Result};
