//! Sampled certification of growth bounds `|R_n(t, s)| <= M e^{omega (t - s)}`.

use nalgebra::DMatrix;
use serde::Serialize;

use super::family::OperatorFamily;
use super::product::factors_on_grid;
use crate::error::{Error, Result};

/// Slack allowed between a certified bound and any sampled norm.
pub const CERT_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CertificationGrid {
    /// Partition sizes of `[0, T]`; every sub-product of consecutive
    /// factors of every partition is sampled.
    pub n_list: Vec<usize>,
    /// Fits with a larger growth rate are rejected.
    pub omega_cap: f64,
}

impl Default for CertificationGrid {
    fn default() -> Self {
        Self {
            n_list: vec![1, 2, 4, 8, 16, 32],
            omega_cap: 50.0,
        }
    }
}

impl CertificationGrid {
    pub fn with_sizes(n_list: Vec<usize>) -> Self {
        Self {
            n_list,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityEstimate {
    pub m: f64,
    pub omega: f64,
    pub certified_over: String,
    /// Largest `|R| / (M e^{omega tau})` over the samples; at most `1 + CERT_EPS`.
    pub worst_ratio: f64,
    #[serde(skip)]
    pub samples: Vec<(f64, f64)>,
}

impl StabilityEstimate {
    pub fn bound(&self, tau: f64) -> f64 {
        self.m * (self.omega * tau).exp()
    }

    pub fn dominates(&self, tau: f64, norm: f64) -> bool {
        norm <= self.bound(tau) * (1.0 + CERT_EPS)
    }
}

/// Estimates in the `E` norm and in the `V` norm.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityCertificate {
    pub e: StabilityEstimate,
    pub v: StabilityEstimate,
}

pub fn certify_stability(
    fam: &OperatorFamily,
    horizon: f64,
    grid: &CertificationGrid,
) -> Result<StabilityCertificate> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
    }
    if grid.n_list.is_empty() || grid.n_list.contains(&0) {
        return Err(Error::InvalidArgument("partition sizes must be positive".into()));
    }
    let w = fam.weights();
    let dim = fam.dim();
    let mut e_samples = vec![(0.0, 1.0)];
    let mut v_samples = vec![(0.0, 1.0)];
    for &n in &grid.n_list {
        let h = horizon / n as f64;
        let factors = factors_on_grid(fam, 0.0, h, n)?;
        let sub: Vec<Vec<(f64, f64, f64)>> = {
            use rayon::prelude::*;
            (0..n)
                .into_par_iter()
                .map(|l| {
                    let mut p = DMatrix::identity(dim, dim);
                    let mut out = Vec::with_capacity(n - l);
                    for (k, f) in factors.iter().enumerate().skip(l) {
                        p = f * p;
                        let tau = (k + 1 - l) as f64 * h;
                        out.push((tau, w.op_norm_e(&p), w.op_norm_v(&p)));
                    }
                    out
                })
                .collect()
        };
        for (tau, e, v) in sub.into_iter().flatten() {
            e_samples.push((tau, e));
            v_samples.push((tau, v));
        }
    }
    let desc = format!(
        "sub-products of uniform partitions of [0, {horizon}] with n in {:?}",
        grid.n_list
    );
    let e = fit_growth(e_samples, grid.omega_cap, &desc)?;
    let v = fit_growth(v_samples, grid.omega_cap, &desc)?;
    Ok(StabilityCertificate { e, v })
}

/// Fits `log|R| <= log M + omega tau` over `(tau, |R|)` samples.
///
/// The least-squares line (intercept clamped to `log M >= 0`) fixes the
/// preferred slope. The certified pair then minimizes the bound at the
/// longest sampled `tau` among all dominating pairs, taking the slope
/// closest to the least-squares one when several are optimal.
pub(crate) fn fit_growth(
    samples: Vec<(f64, f64)>,
    omega_cap: f64,
    desc: &str,
) -> Result<StabilityEstimate> {
    let logs: Vec<(f64, f64)> = samples
        .iter()
        .map(|&(tau, norm)| (tau, norm.max(f64::MIN_POSITIVE).ln()))
        .collect();
    let envelope = upper_envelope(&logs);
    let tau_max = envelope.iter().map(|p| p.0).fold(0.0, f64::max);

    let slope_lsq = least_squares_slope(&logs);

    let log_m = |omega: f64| {
        envelope
            .iter()
            .map(|&(tau, y)| y - omega * tau)
            .fold(0.0, f64::max)
    };
    let objective = |omega: f64| log_m(omega) + (omega * tau_max).max(0.0);

    let mut candidates = vec![0.0, slope_lsq];
    for (i, a) in envelope.iter().enumerate() {
        for b in &envelope[i + 1..] {
            if a.0 != b.0 {
                candidates.push((a.1 - b.1) / (a.0 - b.0));
            }
        }
        if a.0 > 0.0 {
            candidates.push(a.1 / a.0);
        }
    }
    let values: Vec<f64> = candidates.iter().map(|&w| objective(w)).collect();
    let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * (1.0 + best.abs());
    let (lo, hi) = candidates
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v <= best + tol)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&w, _)| {
            (lo.min(w), hi.max(w))
        });
    let omega = slope_lsq.clamp(lo, hi);
    if omega > omega_cap {
        return Err(Error::StabilityNotCertifiable {
            omega,
            cap: omega_cap,
        });
    }
    let m = log_m(omega).exp().max(1.0);
    let worst_ratio = samples
        .iter()
        .map(|&(tau, norm)| norm / (m * (omega * tau).exp()))
        .fold(0.0, f64::max);
    Ok(StabilityEstimate {
        m,
        omega,
        certified_over: desc.to_string(),
        worst_ratio,
        samples,
    })
}

/// Largest log-norm per distinct `tau`.
fn upper_envelope(logs: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted = logs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    sorted.dedup_by(|b, a| (a.0 - b.0).abs() <= 1e-12 * a.0.abs().max(1.0));
    sorted
}

fn least_squares_slope(logs: &[(f64, f64)]) -> f64 {
    let n = logs.len() as f64;
    let mean_t = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = logs.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    if stt == 0.0 {
        return 0.0;
    }
    let sty: f64 = logs.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    let slope = sty / stt;
    if mean_y - slope * mean_t >= 0.0 {
        return slope;
    }
    // Intercept would put M below 1: refit through the origin.
    let tt: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let ty: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    if tt == 0.0 {
        0.0
    } else {
        ty / tt
    }
}
