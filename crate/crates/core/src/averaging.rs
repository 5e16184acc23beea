//! Averaged generators and nonlinearities, and the Cesàro-mean check on
//! generator families.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{NormWeights, OperatorFamily};
use crate::mildsolve::SemilinearProblem;
use crate::signals::{ApMap, ApTerm, DecayEnvelope, Shape, TrigPolynomial};

/// Midpoint nodes per period of the fastest mode.
pub const DEFAULT_NODES_PER_PERIOD: usize = 128;

/// Closed-form average: each term keeps the mean of its weight, or
/// nothing when its envelope decays. Terms with zero mean are dropped.
pub fn average_map(f: &ApMap) -> ApMap {
    let terms = f
        .terms()
        .iter()
        .filter_map(|term| {
            if term.envelope.decays() {
                return None;
            }
            let mean = term.weight.mean()[(0, 0)];
            (mean != 0.0).then(|| {
                ApTerm::new(
                    TrigPolynomial::constant_scalar(mean),
                    DecayEnvelope::None,
                    term.map.clone(),
                )
            })
        })
        .collect();
    ApMap::new(f.dim(), terms).expect("averaging preserves term validity")
}

/// `(1/T) \int_0^T F(tau + h, v) d tau` by composite midpoint on `N` and
/// `2N` panels combined by one Richardson step.
///
/// `N` resolves the fastest weight frequency (or envelope rate, at least 1)
/// with `nodes_per_period` nodes per period.
pub fn numerical_average(
    f: &ApMap,
    v: &DVector<f64>,
    horizon: f64,
    shift: f64,
    nodes_per_period: usize,
) -> Result<DVector<f64>> {
    if v.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: v.len(),
        });
    }
    if !(horizon > 0.0) || !(shift >= 0.0) {
        return Err(Error::InvalidArgument("need T > 0 and h >= 0".into()));
    }
    let density = nodes_per_period.max(20) as f64;
    let n = ((density * horizon * f.max_rate().max(1.0)) / std::f64::consts::TAU).ceil() as usize;
    let n = n.max(1);
    // F(., v) is a combination of fixed vectors with scalar time factors,
    // so the quadrature runs on the scalar factors.
    let mut out = DVector::zeros(f.dim());
    for term in f.terms() {
        let g = |tau: f64| term.weight.eval_scalar(tau) * term.envelope.value(tau);
        let coarse = midpoint(&g, shift, horizon, n);
        let fine = midpoint(&g, shift, horizon, 2 * n);
        let mean = (4.0 * fine - coarse) / 3.0 / horizon;
        let unit = ApMap::new(
            f.dim(),
            vec![ApTerm::new(TrigPolynomial::constant_scalar(1.0), DecayEnvelope::None, term.map.clone())],
        )?;
        out.axpy(mean, &unit.eval_unchecked(0.0, v), 1.0);
    }
    Ok(out)
}

fn midpoint(g: &impl Fn(f64) -> f64, a: f64, len: f64, n: usize) -> f64 {
    let d = len / n as f64;
    (0..n).map(|j| g(a + (j as f64 + 0.5) * d)).sum::<f64>() * d
}

/// `A-hat`: the long-time mean of the family.
pub fn average_operator_family(fam: &OperatorFamily) -> DMatrix<f64> {
    fam.unscaled().mean()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CesaroVerdict {
    Satisfied,
    Violated,
}

#[derive(Debug, Clone, Serialize)]
pub struct CesaroReport {
    pub t_grid: Vec<f64>,
    pub h_grid: Vec<f64>,
    /// `values[i][j]` is the mean at `(t_grid[i], h_grid[j])`.
    pub values: Vec<Vec<f64>>,
    pub max_over_h: Vec<f64>,
    pub tolerance: f64,
    pub verdict: CesaroVerdict,
    /// Mean over `h` of the values at the largest `T`.
    pub estimated_limit: f64,
}

/// 0 followed by 49 log-spaced shifts in `[1e-2, 1e3]`.
pub fn default_shift_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend((0..49).map(|i| 10f64.powf(-2.0 + 5.0 * i as f64 / 48.0)));
    g
}

/// Evaluates `(1/T) \int_0^T |A(tau + h) - a_hat|_{L(V,E)} d tau` on the grid.
///
/// Satisfied iff the largest-`T` maximum over `h` is below `tol` and the
/// maxima do not grow by more than 10% from one `T` to the next.
pub fn cesaro_check(
    fam: &OperatorFamily,
    a_hat: &DMatrix<f64>,
    t_grid: &[f64],
    h_grid: &[f64],
    tol: f64,
    nodes_per_period: usize,
) -> Result<CesaroReport> {
    if t_grid.is_empty() || h_grid.is_empty() {
        return Err(Error::InvalidArgument("empty Cesàro grid".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] <= 0.0 {
        return Err(Error::InvalidArgument("T grid must be positive and increasing".into()));
    }
    let fam = fam.unscaled();
    if a_hat.shape() != (fam.dim(), fam.dim()) {
        return Err(Error::DimensionMismatch {
            expected: fam.dim(),
            got: a_hat.nrows(),
        });
    }
    let weights = fam.weights();
    let norm_at: Box<dyn Fn(f64) -> f64 + Sync> = match fam.rank_one_deviation(a_hat) {
        Some((s, pert, base)) => {
            let scale = weights.op_norm_ve(&base);
            Box::new(move |tau| {
                let mut c = s.eval_scalar(tau);
                if let Some((env, k)) = pert {
                    c += k * env.value(tau);
                }
                c.abs() * scale
            })
        }
        None => {
            let fam = fam.clone();
            let a_hat = a_hat.clone();
            Box::new(move |tau| fam.weights().op_norm_ve(&(fam.at(tau) - &a_hat)))
        }
    };
    let density = nodes_per_period.max(20) as f64;
    let rate = fam.max_rate().max(1.0);
    let pairs: Vec<(usize, usize)> = (0..t_grid.len())
        .flat_map(|i| (0..h_grid.len()).map(move |j| (i, j)))
        .collect();
    let flat: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let t = t_grid[i];
            let n = ((density * t * rate) / std::f64::consts::TAU).ceil().max(1.0) as usize;
            midpoint(&norm_at, h_grid[j], t, n) / t
        })
        .collect();
    let values: Vec<Vec<f64>> = flat.chunks(h_grid.len()).map(|c| c.to_vec()).collect();
    let max_over_h: Vec<f64> = values
        .iter()
        .map(|row| row.iter().cloned().fold(0.0, f64::max))
        .collect();
    let last = *max_over_h.last().unwrap();
    let non_increasing = max_over_h.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    let verdict = if last < tol && non_increasing {
        CesaroVerdict::Satisfied
    } else {
        CesaroVerdict::Violated
    };
    let last_row = values.last().unwrap();
    let estimated_limit = last_row.iter().sum::<f64>() / last_row.len() as f64;
    Ok(CesaroReport {
        t_grid: t_grid.to_vec(),
        h_grid: h_grid.to_vec(),
        values,
        max_over_h,
        tolerance: tol,
        verdict,
        estimated_limit,
    })
}

/// The autonomous problem `u' = A-hat u + F-hat(u)`.
#[derive(Debug, Clone)]
pub struct AveragedProblem {
    pub a_hat: DMatrix<f64>,
    pub f_hat: ApMap,
    pub u0: DVector<f64>,
    pub horizon: f64,
    weights: NormWeights,
}

impl AveragedProblem {
    pub fn to_problem(&self) -> Result<SemilinearProblem> {
        let n = self.a_hat.nrows();
        let fam = OperatorFamily::new(
            TrigPolynomial::constant(Shape::Matrix(n), self.a_hat.clone())?,
            None,
            self.weights.clone(),
        )?;
        SemilinearProblem::new(fam, self.f_hat.clone(), self.u0.clone(), self.horizon, None)
    }
}

pub fn build_averaged_problem(p: &SemilinearProblem) -> AveragedProblem {
    AveragedProblem {
        a_hat: average_operator_family(p.family()),
        f_hat: average_map(p.map()),
        u0: p.u0().clone(),
        horizon: p.horizon(),
        weights: p.family().weights().clone(),
    }
}
