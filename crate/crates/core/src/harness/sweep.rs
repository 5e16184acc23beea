use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::checks::{run_checks, CheckReports};
use super::config::{RunConfig, Setup, SweepSpec};
use crate::averaging::build_averaged_problem;
use crate::error::{Error, Result};
use crate::evolution::min_resolving_steps;
use crate::hyperbolic::{exact_transport, GridField, TorusGrid, TransportCoefficients};
use crate::mildsolve::{solve_mild, SemilinearProblem, Trajectory};

/// Errors at or below this are treated as solver round-off.
pub const SOLVER_FLOOR: f64 = 1e-14;

/// Step counts of one sweep. Every oscillatory count is a multiple of the
/// averaged one, so the averaged grid is a subgrid of each oscillatory grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepPlan {
    pub averaged: usize,
    pub per_lambda: Vec<usize>,
}

pub fn plan_steps(p: &SemilinearProblem, sweep: &SweepSpec) -> StepPlan {
    let t = p.horizon();
    let rate = p.max_rate();
    let lambda_min = sweep.lambdas.last().copied().unwrap_or(1.0);
    let averaged = sweep
        .steps
        .fixed()
        .unwrap_or_else(|| min_resolving_steps(t, rate, lambda_min));
    let per_lambda = sweep
        .lambdas
        .iter()
        .map(|&l| {
            let need = sweep.oversample * min_resolving_steps(t, rate, l);
            averaged * need.div_ceil(averaged).max(1)
        })
        .collect();
    StepPlan { averaged, per_lambda }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Escaped { last_time: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaRecord {
    pub lambda: f64,
    pub steps: usize,
    #[serde(flatten)]
    pub status: RecordStatus,
    /// Max over the averaged grid of `|u_lambda - u_hat|_E`.
    pub sup_error: Option<f64>,
    pub terminal_error: Option<f64>,
    pub wall_ms: Option<f64>,
    /// Max distance to the characteristic solution (scalar transport only).
    pub oracle_sup_error: Option<f64>,
    /// `sup_error` recomputed from a solve with `refine` times more steps.
    pub refined_sup_error: Option<f64>,
    /// `(t, error)` pairs on a subsample of the averaged grid.
    pub error_curve: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the log residuals.
    pub residual: f64,
}

/// Ordinary least squares of `log error` on `log lambda`.
///
/// Pairs with error at or below [`SOLVER_FLOOR`] are left out; fewer than
/// three remaining pairs cannot resolve a rate.
pub fn fit_rate(lambdas: &[f64], errors: &[f64]) -> Result<RateFit> {
    if lambdas.len() != errors.len() {
        return Err(Error::DimensionMismatch {
            expected: lambdas.len(),
            got: errors.len(),
        });
    }
    if lambdas.iter().any(|l| !(*l > 0.0)) || errors.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::InvalidArgument("lambdas must be positive and errors non-negative".into()));
    }
    let pts: Vec<(f64, f64)> = lambdas
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > SOLVER_FLOOR)
        .map(|(&l, &e)| (l.ln(), e.ln()))
        .collect();
    if pts.len() < 3 {
        let floor = errors.len() - pts.len();
        return Err(Error::RateUnresolvable(format!(
            "{} usable points ({floor} at solver floor), need 3",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::RateUnresolvable("all lambdas coincide".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(RateFit { slope, intercept, residual })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub name: String,
    pub config_fingerprint: String,
    pub problem_fingerprint: String,
    pub seed: u64,
    pub horizon: f64,
    pub steps: StepPlan,
    pub records: Vec<LambdaRecord>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub residual: Option<f64>,
    /// Why no rate was fitted, if none was.
    pub fit_note: Option<String>,
    /// Lambdas whose error sits at the solver floor.
    pub floor_lambdas: Vec<f64>,
    pub checks: CheckReports,
}

impl ConvergenceReport {
    pub fn escaped(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r.status, RecordStatus::Escaped { .. }))
            .count()
    }
}

struct Reference<'a> {
    averaged: &'a Trajectory,
    stride_unit: usize,
    curve_stride: usize,
}

fn errors_against(traj: &Trajectory, r: &Reference, p: &SemilinearProblem) -> (f64, f64, Vec<[f64; 2]>) {
    let w = p.family().weights();
    let stride = traj.steps() / r.stride_unit;
    let k = r.averaged.steps();
    let mut sup: f64 = 0.0;
    let mut curve = vec![];
    let mut terminal = 0.0;
    for (j, u_hat) in r.averaged.states().iter().enumerate() {
        let e = w.e_norm(&(&traj.states()[j * stride] - u_hat));
        sup = sup.max(e);
        if j % r.curve_stride == 0 || j == k {
            curve.push([r.averaged.times()[j], e]);
        }
        if j == k {
            terminal = e;
        }
    }
    (sup, terminal, curve)
}

/// Scalar transport with `b = f = 0` has the characteristic solution.
fn transport_oracle(setup: &Setup) -> Option<(&TorusGrid, &GridField)> {
    let (grid, coeffs) = setup.transport.as_ref()?;
    let TransportCoefficients { a, b, .. } = coeffs;
    let plain = grid.components() == 1
        && a.is_uniform()
        && matches!(b, GridField::Uniform(p) if p.modes().is_empty())
        && setup.problem.map().is_zero();
    plain.then_some((grid, a))
}

/// Solves the averaged problem once and the oscillatory problem for every
/// lambda, then measures their distance on the averaged grid.
pub fn run_sweep(cfg: &RunConfig) -> Result<ConvergenceReport> {
    let setup = cfg.build()?;
    let p = &setup.problem;
    let plan = plan_steps(p, &cfg.sweep);
    let avg = build_averaged_problem(p).to_problem()?;
    let averaged = solve_mild(&avg, plan.averaged)?;
    let reference = Reference {
        averaged: &averaged,
        stride_unit: plan.averaged,
        curve_stride: plan.averaged.div_ceil(cfg.sweep.curve_points - 1).max(1),
    };
    let u0 = p.u0().add_scalar(cfg.sweep.initial_offset);
    let oracle = transport_oracle(&setup);

    let records = cfg
        .sweep
        .lambdas
        .par_iter()
        .zip(plan.per_lambda.par_iter())
        .map(|(&lambda, &steps)| {
            let start = Instant::now();
            let q = p.with_lambda(Some(lambda))?.with_initial(u0.clone())?;
            let traj = match solve_mild(&q, steps) {
                Ok(t) => t,
                Err(Error::Escaped { last_time }) => {
                    return Ok(LambdaRecord {
                        lambda,
                        steps,
                        status: RecordStatus::Escaped { last_time },
                        sup_error: None,
                        terminal_error: None,
                        wall_ms: None,
                        oracle_sup_error: None,
                        refined_sup_error: None,
                        error_curve: vec![],
                    })
                }
                Err(e) => return Err(e),
            };
            let (sup, terminal, curve) = errors_against(&traj, &reference, p);
            let wall_ms = cfg.output.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
            let oracle_sup_error = match oracle {
                Some((grid, a)) => Some(oracle_distance(&traj, &u0, a, lambda, grid, p)?),
                None => None,
            };
            let refined_sup_error = match cfg.sweep.refine {
                Some(r) => match solve_mild(&q, steps * r) {
                    Ok(fine) => Some(errors_against(&fine, &reference, p).0),
                    Err(Error::Escaped { .. }) => None,
                    Err(e) => return Err(e),
                },
                None => None,
            };
            Ok(LambdaRecord {
                lambda,
                steps,
                status: RecordStatus::Ok,
                sup_error: Some(sup),
                terminal_error: Some(terminal),
                wall_ms,
                oracle_sup_error,
                refined_sup_error,
                error_curve: curve,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ok: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.lambda, r.sup_error?)))
        .collect();
    let floor_lambdas = ok.iter().filter(|p| p.1 <= SOLVER_FLOOR).map(|p| p.0).collect();
    let (ls, es): (Vec<f64>, Vec<f64>) = ok.into_iter().unzip();
    let (fit, fit_note) = match fit_rate(&ls, &es) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let checks = run_checks(cfg, &setup, &cfg.checks)?;
    Ok(ConvergenceReport {
        name: cfg.name.clone(),
        config_fingerprint: cfg.fingerprint(),
        problem_fingerprint: p.fingerprint(),
        seed: cfg.seed,
        horizon: p.horizon(),
        steps: plan,
        records,
        slope: fit.map(|f| f.slope),
        intercept: fit.map(|f| f.intercept),
        residual: fit.map(|f| f.residual),
        fit_note,
        floor_lambdas,
        checks,
    })
}

fn oracle_distance(
    traj: &Trajectory,
    u0: &DVector<f64>,
    a: &GridField,
    lambda: f64,
    grid: &TorusGrid,
    p: &SemilinearProblem,
) -> Result<f64> {
    let w = p.family().weights();
    let mut worst: f64 = 0.0;
    for (t, u) in traj.times().iter().zip(traj.states()) {
        let exact = exact_transport(u0, a, lambda, *t, grid)?;
        worst = worst.max(w.e_norm(&(u - exact)));
    }
    Ok(worst)
}

/// One oscillatory trajectory. Defaults: the first configured lambda and
/// `oversample` times the fewest resolving steps.
pub fn solve_config(cfg: &RunConfig, lambda: Option<f64>, steps: Option<usize>) -> Result<Trajectory> {
    let setup = cfg.build()?;
    let lambda = lambda.or_else(|| cfg.sweep.lambdas.first().copied());
    if let Some(l) = lambda {
        if !(l > 0.0 && l <= 1.0) {
            return Err(Error::InvalidArgument(format!("lambda {l} must lie in (0, 1]")));
        }
    }
    let q = setup
        .problem
        .with_lambda(lambda)?
        .with_initial(setup.problem.u0().add_scalar(cfg.sweep.initial_offset))?;
    let steps = steps
        .or(cfg.sweep.steps.fixed())
        .unwrap_or_else(|| cfg.sweep.oversample * q.min_steps().max(min_resolving_steps(q.horizon(), 0.0, 1.0)));
    solve_mild(&q, steps)
}
