use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::expm::matrix_exponential;
use super::family::{min_resolving_steps, OperatorFamily};
use super::product::{for_each_factor, product_evolution};
use super::stability::StabilityCertificate;
use crate::error::{Error, Result};

/// Constants `M, omega` (in `E`) and `M_V, omega_V` (in `V`) entering the
/// parameter-perturbation bound.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PerturbationConstants {
    pub m: f64,
    pub omega: f64,
    pub m_v: f64,
    pub omega_v: f64,
}

impl PerturbationConstants {
    /// Takes the larger constant of the two families in each slot, so the
    /// result bounds either ordering of the pair.
    pub fn from_certificates(a: &StabilityCertificate, b: &StabilityCertificate) -> Self {
        Self {
            m: a.e.m.max(b.e.m),
            omega: a.e.omega.abs().max(b.e.omega.abs()),
            m_v: a.v.m.max(b.v.m),
            omega_v: a.v.omega.abs().max(b.v.omega.abs()),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PerturbationGap {
    pub lhs: f64,
    pub rhs: f64,
}

impl PerturbationGap {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-3)
    }
}

/// Compares `|R_n^nu(t,s) v - R_n^mu(t,s) v|_E` with
/// `M M_V e^{(|omega| + |omega_V|) t} |v|_V \int_s^t |A^nu - A^mu|_{L(V,E)}`.
///
/// The integral uses the left-endpoint rule on the same partition the
/// approximants freeze their coefficients on.
pub fn perturbation_gap(
    fam_nu: &OperatorFamily,
    fam_mu: &OperatorFamily,
    v: &DVector<f64>,
    s: f64,
    t: f64,
    n: usize,
    constants: &PerturbationConstants,
) -> Result<PerturbationGap> {
    if fam_nu.dim() != fam_mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: fam_mu.dim(),
            got: fam_nu.dim(),
        });
    }
    if fam_nu.weights() != fam_mu.weights() {
        return Err(Error::InvalidArgument("families use different norm weights".into()));
    }
    if v.len() != fam_mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: fam_mu.dim(),
            got: v.len(),
        });
    }
    let w = fam_mu.weights();
    let r_nu = product_evolution(fam_nu, s, t, n)?;
    let r_mu = product_evolution(fam_mu, s, t, n)?;
    let lhs = w.e_norm(&(r_nu.matrix() * v - r_mu.matrix() * v));

    let h = (t - s) / n as f64;
    // Constant perturbations repeat the same difference at every node, up
    // to rounding; reuse the previous norm then.
    let mut last: Option<(DMatrix<f64>, f64)> = None;
    let mut integral = 0.0;
    for &r in r_mu.breakpoints().iter().take(n) {
        let d = fam_nu.at(r) - fam_mu.at(r);
        let norm = match &last {
            Some((prev, norm)) if (prev - &d).norm() <= 1e-13 * prev.norm() => *norm,
            _ => {
                let norm = w.op_norm_ve(&d);
                last = Some((d, norm));
                norm
            }
        };
        integral += norm;
    }
    integral *= h;
    let c = constants;
    let rhs = c.m * c.m_v * ((c.omega.abs() + c.omega_v.abs()) * t).exp() * w.v_norm(v) * integral;
    Ok(PerturbationGap { lhs, rhs })
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearAveragingRecord {
    pub lambda: f64,
    /// `max |R^lambda(t, s) v - exp((t - s) a_hat) v|_E` over the grid.
    pub discrepancy: f64,
    pub steps: usize,
}

/// Empirical check that `R^lambda(t, s) v -> exp((t - s) a_hat) v` as
/// `lambda -> 0`, uniformly over `s <= t` on a grid of `grid_points`
/// nodes in `[0, horizon]`.
///
/// The product approximant uses one global step per `lambda`, chosen so
/// that grid nodes fall on step boundaries and the step resolves the
/// oscillation; `R(t, s)` is then the product over the steps in `[s, t]`.
pub fn check_linear_averaging(
    fam: &OperatorFamily,
    a_hat: &DMatrix<f64>,
    lambdas: &[f64],
    v: &DVector<f64>,
    horizon: f64,
    grid_points: usize,
) -> Result<Vec<LinearAveragingRecord>> {
    let dim = fam.dim();
    if a_hat.shape() != (dim, dim) || v.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    if grid_points < 2 || !(horizon > 0.0) {
        return Err(Error::InvalidArgument("need at least two grid nodes on a positive horizon".into()));
    }
    let w = fam.weights_arc();
    let spacing = horizon / (grid_points - 1) as f64;
    let node_prop = matrix_exponential(a_hat, spacing)?;
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} must be positive")));
        }
        let view = fam.rescaled(lambda);
        let per_node = min_resolving_steps(spacing, fam.max_rate(), lambda);
        let h = spacing / per_node as f64;
        let total = per_node * (grid_points - 1);

        // One propagated vector and one reference vector per start node.
        let mut active: Vec<(DVector<f64>, DVector<f64>)> = vec![(v.clone(), v.clone())];
        let mut worst: f64 = 0.0;
        for_each_factor(&view, 0.0, h, total, |j, f| {
            for (x, _) in active.iter_mut() {
                *x = f * &*x;
            }
            if (j + 1) % per_node == 0 {
                for (x, r) in active.iter_mut() {
                    *r = &node_prop * &*r;
                    worst = worst.max(w.e_norm(&(&*x - &*r)));
                }
                active.push((v.clone(), v.clone()));
            }
            Ok(())
        })?;
        out.push(LinearAveragingRecord {
            lambda,
            discrepancy: worst,
            steps: total,
        });
    }
    Ok(out)
}
