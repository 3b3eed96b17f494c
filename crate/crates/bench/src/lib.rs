//! Benchmark fixtures shared by the criterion benches.

use loopsoup::lattice::{LatticeSpec, RngStream};
use loopsoup::sampler::SoupParams;

/// Soup parameters used by the sampler benches.
pub fn soup_params(dim: usize, radius: u32, alpha: f64) -> SoupParams {
    let spec = LatticeSpec::new(dim, radius, 0.0).expect("valid box");
    SoupParams::new(&spec, alpha, RngStream::new(1, 0)).expect("valid params")
}
