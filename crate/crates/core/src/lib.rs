//! Random-walk loop soups on `Z^d`: lattice walks, Green functions, the
//! unrooted loop measure, exact soup sampling, loop percolation and
//! Monte Carlo estimators.

pub mod error;
pub mod estimators;
pub mod green;
pub mod io;
pub mod lattice;
pub mod loopmeasure;
pub mod percolation;
pub mod sampler;
pub mod validation;

pub use error::{Error, ErrorClass, Result};
pub use green::{GreenFunction, GreenTable};
pub use lattice::{LatticeSpec, RngStream, Site};
