//! Fixtures shared by the benchmarks.

use evoavg_core::harness::{bundled, RunConfig};
use evoavg_core::OperatorFamily;
use nalgebra::DMatrix;

pub fn config(name: &str) -> RunConfig {
    bundled(name).unwrap_or_else(|| panic!("no bundled config {name}"))
}

/// Oscillatory family of a bundled config, rescaled by `lambda`.
pub fn family(name: &str, lambda: f64) -> OperatorFamily {
    let setup = config(name).build().expect("bundled config builds");
    setup.problem.family().rescaled(lambda)
}

/// Deterministic dense test matrix with spectrum roughly in [-n, n].
pub fn test_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let x = (i * 7 + j * 13 + 1) as f64;
        (x.sin() * 1.7).fract() + if i == j { -1.0 } else { 0.0 }
    })
}
