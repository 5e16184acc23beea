use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{CheckSpec, RunConfig, Setup};
use crate::averaging::{average_map, cesaro_check, default_shift_grid, CesaroReport};
use crate::error::Result;
use crate::evolution::{
    certify_stability, check_linear_averaging, min_resolving_steps, perturbation_gap, CertificationGrid,
    LinearAveragingRecord, OperatorFamily, PerturbationConstants, StabilityCertificate,
};
use crate::mildsolve::{riemann_semigroup_sum, RiemannRecord};
use crate::signals::{ApMap, DecayEnvelope, Shape, StateMap, TrigPolynomial};

/// Midpoint nodes per period in the Cesàro means.
const CESARO_NODES: usize = 64;
/// Composite Simpson panels for the lemma-sum reference integral.
const LEMMA_PANELS: usize = 4096;

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckOutcome<T> {
    Completed(T),
    Failed { error: String },
}

impl<T> CheckOutcome<T> {
    fn from_result(r: Result<T>) -> Self {
        match r {
            Ok(v) => CheckOutcome::Completed(v),
            Err(e) => CheckOutcome::Failed { error: e.to_string() },
        }
    }

    pub fn completed(&self) -> Option<&T> {
        match self {
            CheckOutcome::Completed(v) => Some(v),
            CheckOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityCheck {
    pub family: String,
    pub certificate: StabilityCertificate,
    pub samples: usize,
    /// Every sampled norm lies under the certified bound.
    pub dominated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct H5Check {
    pub records: Vec<LinearAveragingRecord>,
    /// Discrepancies shrink along the lambda list (5% slack).
    pub non_increasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaSumCheck {
    pub records: Vec<RiemannRecord>,
    pub decreasing: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PerturbationSample {
    pub epsilon: f64,
    pub s: f64,
    pub t: f64,
    pub steps: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationCheck {
    pub lambda: f64,
    pub samples: Vec<PerturbationSample>,
    pub all_hold: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CheckReports {
    pub stability: Option<Vec<CheckOutcome<StabilityCheck>>>,
    pub cesaro: Option<CheckOutcome<CesaroReport>>,
    pub h5: Option<CheckOutcome<H5Check>>,
    pub lemma_sum: Option<CheckOutcome<LemmaSumCheck>>,
    pub perturbation: Option<CheckOutcome<PerturbationCheck>>,
}

impl CheckReports {
    /// Checks that errored or whose certified inequality failed. A violated
    /// Cesàro hypothesis is informative, not a failure.
    pub fn failures(&self) -> Vec<String> {
        let mut out = vec![];
        let mut note = |name: &str, ok: Option<bool>| match ok {
            Some(true) => {}
            Some(false) => out.push(format!("{name}: bound violated")),
            None => out.push(format!("{name}: failed")),
        };
        if let Some(list) = &self.stability {
            for s in list {
                note("stability", s.completed().map(|c| c.dominated));
            }
        }
        if let Some(c) = &self.cesaro {
            note("cesaro", c.completed().map(|_| true));
        }
        if let Some(c) = &self.h5 {
            note("h5", c.completed().map(|_| true));
        }
        if let Some(c) = &self.lemma_sum {
            note("lemma_sum", c.completed().map(|_| true));
        }
        if let Some(c) = &self.perturbation {
            note("perturbation", c.completed().map(|p| p.all_hold));
        }
        out
    }
}

fn lambda_min(cfg: &RunConfig) -> Option<f64> {
    cfg.sweep.lambdas.last().copied()
}

fn stability_of(fam: &OperatorFamily, label: String, horizon: f64) -> Result<StabilityCheck> {
    let cert = certify_stability(fam, horizon, &CertificationGrid::default())?;
    let dominated = [&cert.e, &cert.v]
        .iter()
        .all(|est| est.samples.iter().all(|&(tau, n)| est.dominates(tau, n)));
    Ok(StabilityCheck {
        family: label,
        samples: cert.e.samples.len(),
        certificate: cert,
        dominated,
    })
}

pub fn run_checks(cfg: &RunConfig, setup: &Setup, spec: &CheckSpec) -> Result<CheckReports> {
    let p = &setup.problem;
    let fam = p.family();
    let a_hat = fam.mean();
    let horizon = p.horizon();
    let lambdas = &cfg.sweep.lambdas;
    let mut out = CheckReports::default();

    if spec.stability {
        let osc = match lambda_min(cfg) {
            Some(l) => (fam.rescaled(l), format!("oscillatory, lambda = {l}")),
            None => (fam.clone(), "oscillatory, unscaled".to_string()),
        };
        let avg = OperatorFamily::new(
            TrigPolynomial::constant(Shape::Matrix(fam.dim()), a_hat.clone())?,
            None,
            fam.weights().clone(),
        )?;
        out.stability = Some(vec![
            CheckOutcome::from_result(stability_of(&osc.0, osc.1, horizon)),
            CheckOutcome::from_result(stability_of(&avg, "averaged".into(), horizon)),
        ]);
    }
    if spec.cesaro {
        out.cesaro = Some(CheckOutcome::from_result(cesaro_check(
            fam,
            &a_hat,
            &spec.cesaro_horizons,
            &default_shift_grid(),
            spec.cesaro_tolerance,
            CESARO_NODES,
        )));
    }
    if spec.h5 {
        let r = check_linear_averaging(fam, &a_hat, lambdas, p.u0(), horizon, spec.h5_grid_points).map(|records| {
            let non_increasing = records.windows(2).all(|w| w[1].discrepancy <= 1.05 * w[0].discrepancy);
            H5Check { records, non_increasing }
        });
        out.h5 = Some(CheckOutcome::from_result(r));
    }
    if spec.lemma_sum {
        let below_one: Vec<f64> = lambdas.iter().copied().filter(|&l| l < 1.0).collect();
        let u0 = p.u0().clone();
        let r = riemann_semigroup_sum(fam, &a_hat, move |_| u0.clone(), horizon, &below_one, LEMMA_PANELS).map(
            |records| {
                let decreasing = records.windows(2).all(|w| w[1].discrepancy <= w[0].discrepancy);
                LemmaSumCheck { records, decreasing }
            },
        );
        out.lemma_sum = Some(CheckOutcome::from_result(r));
    }
    if spec.perturbation {
        let lambda = lambda_min(cfg).unwrap_or(1.0);
        out.perturbation = Some(CheckOutcome::from_result(perturbation_suite(
            fam,
            lambda,
            horizon,
            cfg.seed,
            spec.perturbation_samples,
        )));
    }
    Ok(out)
}

struct Draw {
    epsilon: f64,
    shift: DMatrix<f64>,
    v: DVector<f64>,
    s: f64,
    t: f64,
}

/// Compares the family at `lambda` with seeded constant perturbations
/// `A(t) + epsilon G`, `G` with entries in `[-1, 1]`.
pub fn perturbation_suite(
    fam: &OperatorFamily,
    lambda: f64,
    horizon: f64,
    seed: u64,
    samples: usize,
) -> Result<PerturbationCheck> {
    let n = fam.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Draw> = (0..samples)
        .map(|_| {
            let epsilon = rng.random_range(1e-3..1e-1);
            let shift = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let s = rng.random_range(0.0..0.5 * horizon);
            let t = rng.random_range(s + 0.25 * horizon..=horizon);
            Draw { epsilon, shift, v, s, t }
        })
        .collect();
    let mu = fam.rescaled(lambda);
    let grid = CertificationGrid::with_sizes(vec![1, 2, 4, 8]);
    let cert_mu = certify_stability(&mu, horizon, &grid)?;
    let results = draws
        .par_iter()
        .map(|d| {
            let law = fam
                .law()
                .add(&TrigPolynomial::constant(Shape::Matrix(n), &d.shift * d.epsilon)?)?;
            let nu = OperatorFamily::new(law, fam.perturbation().cloned(), fam.weights().clone())?.rescaled(lambda);
            let cert_nu = certify_stability(&nu, horizon, &grid)?;
            let constants = PerturbationConstants::from_certificates(&cert_nu, &cert_mu);
            let steps = min_resolving_steps(d.t - d.s, fam.max_rate(), lambda);
            let gap = perturbation_gap(&nu, &mu, &d.v, d.s, d.t, steps, &constants)?;
            Ok(PerturbationSample {
                epsilon: d.epsilon,
                s: d.s,
                t: d.t,
                steps,
                lhs: gap.lhs,
                rhs: gap.rhs,
                holds: gap.holds(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all_hold = results.iter().all(|s| s.holds);
    Ok(PerturbationCheck { lambda, samples: results, all_hold })
}

/// Output of the `average` command.
#[derive(Debug, Clone, Serialize)]
pub struct AverageSummary {
    pub a_hat: Vec<Vec<f64>>,
    pub f_hat: Vec<String>,
    pub cesaro: CesaroReport,
}

pub fn describe_map(f: &ApMap) -> Vec<String> {
    f.terms()
        .iter()
        .map(|term| {
            let weight = term
                .weight
                .modes()
                .iter()
                .map(|m| {
                    let (c, s) = (m.cos[(0, 0)], m.sin[(0, 0)]);
                    if m.freq == 0.0 {
                        format!("{c}")
                    } else {
                        format!("{c} cos({} t) + {s} sin({} t)", m.freq, m.freq)
                    }
                })
                .collect::<Vec<_>>()
                .join(" + ");
            let envelope = match term.envelope {
                DecayEnvelope::None => String::new(),
                DecayEnvelope::Exponential { rate } => format!(" exp(-{rate} t)"),
                DecayEnvelope::Algebraic { exponent } => format!(" (1 + t)^-{exponent}"),
            };
            let map = match &term.map {
                StateMap::Identity => "u".to_string(),
                StateMap::Linear(b) => format!("B u, |B| = {}", crate::linalg::spectral_norm(b)),
                StateMap::QuadraticDiagonal => "u_i^2".to_string(),
                StateMap::BoundedSine => "sin(u_i)".to_string(),
                StateMap::Constant(c) => format!("constant, |c| = {}", c.norm()),
            };
            format!("[{weight}]{envelope} * {map}")
        })
        .collect()
}

pub fn average_summary(cfg: &RunConfig) -> Result<AverageSummary> {
    let setup = cfg.build()?;
    let fam = setup.problem.family();
    let a_hat = fam.mean();
    let spec = &cfg.checks;
    let cesaro = cesaro_check(
        fam,
        &a_hat,
        &spec.cesaro_horizons,
        &default_shift_grid(),
        spec.cesaro_tolerance,
        CESARO_NODES,
    )?;
    Ok(AverageSummary {
        a_hat: a_hat.row_iter().map(|r| r.iter().copied().collect()).collect(),
        f_hat: describe_map(&average_map(setup.problem.map())),
        cesaro,
    })
}
