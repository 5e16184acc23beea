//! Frozen-coefficient product approximants of the evolution system.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::expm::matrix_exponential;
use super::family::OperatorFamily;
use crate::error::{Error, Result};

/// Factors are computed this many at a time (in parallel) when streaming.
const CHUNK: usize = 256;

/// `R_n(t, s) = exp(h A(t_{n-1})) ... exp(h A(t_0))` on the uniform
/// partition `t_j = s + j h` of `[s, t]`, coefficients frozen at the left
/// endpoint of each subinterval.
#[derive(Debug, Clone)]
pub struct EvolutionOperatorApprox {
    s: f64,
    t: f64,
    breakpoints: Vec<f64>,
    factors: Vec<DMatrix<f64>>,
    product: DMatrix<f64>,
}

impl EvolutionOperatorApprox {
    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn n_steps(&self) -> usize {
        self.factors.len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Factor `j` is `exp((t_{j+1} - t_j) A(t_j))`.
    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.product
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        apply_evolution(self, v)
    }
}

pub fn product_evolution(
    fam: &OperatorFamily,
    s: f64,
    t: f64,
    n: usize,
) -> Result<EvolutionOperatorApprox> {
    if !(0.0 <= s && s <= t && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("need 0 <= s <= t, got s={s}, t={t}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let dim = fam.dim();
    let h = (t - s) / n as f64;
    let breakpoints: Vec<f64> = (0..=n).map(|j| partition_point(s, t, n, j)).collect();
    let factors = factors_on_grid(fam, s, h, n)?;
    let mut product = DMatrix::identity(dim, dim);
    for f in &factors {
        product = f * product;
    }
    Ok(EvolutionOperatorApprox {
        s,
        t,
        breakpoints,
        factors,
        product,
    })
}

pub fn apply_evolution(r: &EvolutionOperatorApprox, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != r.product.ncols() {
        return Err(Error::DimensionMismatch {
            expected: r.product.ncols(),
            got: v.len(),
        });
    }
    Ok(&r.product * v)
}

fn partition_point(s: f64, t: f64, n: usize, j: usize) -> f64 {
    if j == n {
        t
    } else {
        s + (t - s) * (j as f64 / n as f64)
    }
}

/// `exp(h A(t0 + j h))` for `j < count`.
pub(crate) fn factors_on_grid(
    fam: &OperatorFamily,
    t0: f64,
    h: f64,
    count: usize,
) -> Result<Vec<DMatrix<f64>>> {
    if fam.is_autonomous() {
        let f = matrix_exponential(&fam.at(t0), h)?;
        return Ok(vec![f; count]);
    }
    (0..count)
        .into_par_iter()
        .map(|j| matrix_exponential(&fam.at(t0 + j as f64 * h), h))
        .collect()
}

/// Streams `exp(h A(t0 + j h))` for `j < count` into `visit`, in order.
/// Factors are computed in parallel chunks and never all held at once.
pub(crate) fn for_each_factor(
    fam: &OperatorFamily,
    t0: f64,
    h: f64,
    count: usize,
    mut visit: impl FnMut(usize, &DMatrix<f64>) -> Result<()>,
) -> Result<()> {
    if fam.is_autonomous() {
        let f = matrix_exponential(&fam.at(t0), h)?;
        for j in 0..count {
            visit(j, &f)?;
        }
        return Ok(());
    }
    let mut start = 0;
    while start < count {
        let end = (start + CHUNK).min(count);
        let chunk: Vec<DMatrix<f64>> = (start..end)
            .into_par_iter()
            .map(|j| matrix_exponential(&fam.at(t0 + j as f64 * h), h))
            .collect::<Result<_>>()?;
        for (off, f) in chunk.iter().enumerate() {
            visit(start + off, f)?;
        }
        start = end;
    }
    Ok(())
}
