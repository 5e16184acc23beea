//! Acceptance suite. Each test prints one `criterion N ... PASS|FAIL` line.
//!
//! Run alone with `cargo test -p evoavg-cli --test acceptance -- --nocapture`.

use std::f64::consts::{PI, TAU};
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use evoavg_core::averaging::{
    average_map, cesaro_check, default_shift_grid, numerical_average, CesaroVerdict, DEFAULT_NODES_PER_PERIOD,
};
use evoavg_core::evolution::{
    certify_stability, matrix_exponential, perturbation_gap, product_evolution, CertificationGrid, NormWeights,
    OperatorFamily, Perturbation, PerturbationConstants,
};
use evoavg_core::harness::{bundled, run_checks, run_sweep, CheckOutcome, CheckSpec};
use evoavg_core::hyperbolic::{discretize, exact_transport, l2_norm, GridField, TorusGrid, TransportCoefficients};
use evoavg_core::mildsolve::riemann_semigroup_sum;
use evoavg_core::{ApMap, ApTerm, DecayEnvelope, Mode, Shape, StateMap, TrigPolynomial};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SLOPE_RANGE: (f64, f64) = (0.7, 1.3);
const C1_CLOSED_FORM_REL: f64 = 0.10;
const C1_RUNTIME: Duration = Duration::from_secs(10);
const C2_REFERENCE_REL: f64 = 0.01;
const C2_REFINEMENT: usize = 16;
const C2_RUNTIME: Duration = Duration::from_secs(30);
const C3_SKEW_TOL: f64 = 1e-10;
const C3_RUNTIME: Duration = Duration::from_secs(60);
const C4_RATIO: (f64, f64) = (0.4, 0.6);
const C5_CERT_TOL: f64 = 1e-6;
const C6_PAIRS: usize = 100;
const C6_SLACK: f64 = 1e-3;
const C7_TARGET: f64 = 0.6321206;
const C7_TOL: f64 = 1e-2;
const C8_LIMIT_REL: f64 = 0.05;
const C9_DECADE_RATIO: (f64, f64) = (0.05, 0.2);
const C9_QUASI_TOL: f64 = 1e-1;

// Criteria with runtime limits are timed one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn verdict(n: u32, what: &str, pass: bool, detail: String) {
    println!("criterion {n:>2} {what}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn within(x: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&x)
}

fn scalar_family(modes: &[(f64, f64, f64)]) -> OperatorFamily {
    OperatorFamily::scalar(TrigPolynomial::scalar(modes).unwrap()).unwrap()
}

#[test]
fn criterion_01_scalar_linear_averaging() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let report = run_sweep(&bundled("scalar-linear").unwrap()).unwrap();
    let elapsed = start.elapsed();
    let mut worst: f64 = 0.0;
    for r in &report.records {
        // sup_t e^t |e^{lambda sin(t/lambda)} - 1| on a grid much finer than the oscillation
        let n = (2000.0 / r.lambda) as usize;
        let exact = (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                t.exp() * ((r.lambda * (t / r.lambda).sin()).exp() - 1.0).abs()
            })
            .fold(0.0, f64::max);
        worst = worst.max((r.sup_error.unwrap() - exact).abs() / exact);
    }
    let slope = report.slope.unwrap_or(f64::NAN);
    let pass = report.records.len() == 6
        && worst <= C1_CLOSED_FORM_REL
        && within(slope, SLOPE_RANGE)
        && elapsed < C1_RUNTIME;
    verdict(
        1,
        "scalar linear averaging",
        pass,
        format!("max rel dev {worst:.4}, slope {slope:.4}, {:.2} s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_02_nonlinear_averaging() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut cfg = bundled("scalar-nonlinear").unwrap();
    cfg.sweep.refine = Some(C2_REFINEMENT);
    let start = Instant::now();
    let report = run_sweep(&cfg).unwrap();
    let elapsed = start.elapsed();
    let sups: Vec<f64> = report.records.iter().map(|r| r.sup_error.unwrap()).collect();
    let monotone = sups.windows(2).all(|w| w[1] < w[0]);
    let worst_ref = report
        .records
        .iter()
        .map(|r| {
            let fine = r.refined_sup_error.unwrap();
            (r.sup_error.unwrap() - fine).abs() / fine
        })
        .fold(0.0, f64::max);
    let slope = report.slope.unwrap_or(f64::NAN);
    let pass = monotone && within(slope, SLOPE_RANGE) && worst_ref <= C2_REFERENCE_REL && elapsed < C2_RUNTIME;
    verdict(
        2,
        "nonlinear averaging",
        pass,
        format!(
            "monotone {monotone}, slope {slope:.4}, max rel dev from h/16 reference {worst_ref:.4}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_03_transport_benchmark() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = bundled("transport").unwrap();
    let start = Instant::now();
    let report = run_sweep(&cfg).unwrap();
    let elapsed = start.elapsed();

    let dx = 1.0 / 64.0;
    // Central differences shift the phase of sin(2 pi x) by
    // |Phi| (2 pi - sin(2 pi dx)/dx) <= lambda (2 pi)^3 dx^2 / 6, and the
    // left-rule phase Phi_h - Phi is bounded by 2 pi h.
    let mut oracle_ok = true;
    let mut worst_ratio: f64 = 0.0;
    for (r, &steps) in report.records.iter().zip(&report.steps.per_lambda) {
        let h = 1.0 / steps as f64;
        let c = (TAU.powi(3) / 6.0 + TAU) / 2f64.sqrt();
        let bound = c * (dx * dx + h);
        let got = r.oracle_sup_error.unwrap();
        worst_ratio = worst_ratio.max(got / bound);
        oracle_ok &= got <= bound;
    }

    let grid = TorusGrid::new(64, 1).unwrap();
    let unit = discretize(
        &TransportCoefficients::scalar_advection(
            TrigPolynomial::new(Shape::Matrix(1), vec![Mode::scalar(1.0, 1.0, 0.0)]).unwrap(),
        ),
        &grid,
    )
    .unwrap();
    let s = unit.at(0.0);
    let skew = (&s + s.transpose()).amax();
    let v = grid.sample(|x| (TAU * x).sin() + 0.5 * (3.0 * TAU * x).cos());
    let norm_drift = [0.1, 1.0, 7.5]
        .iter()
        .map(|&t| (l2_norm(&(matrix_exponential(&s, t).unwrap() * &v), &grid) - l2_norm(&v, &grid)).abs())
        .fold(0.0, f64::max);
    let slope = report.slope.unwrap_or(f64::NAN);
    let pass = oracle_ok
        && within(slope, SLOPE_RANGE)
        && skew <= C3_SKEW_TOL
        && norm_drift <= C3_SKEW_TOL
        && elapsed < C3_RUNTIME;
    verdict(
        3,
        "transport benchmark",
        pass,
        format!(
            "oracle error / C(dx^2 + h) <= {worst_ratio:.3}, slope {slope:.4}, |S + S^T| = {skew:e}, norm drift {norm_drift:e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
#[ignore = "unattainable as specified: the left-endpoint rule sums cos to exactly zero over a full period, so R_n(0, 2 pi) = 1 to rounding for every n"]
fn criterion_04_product_formula_convergence() {
    let fam = scalar_family(&[(1.0, 1.0, 0.0)]);
    let errors: Vec<f64> = [64, 128, 256, 512]
        .iter()
        .map(|&n| (product_evolution(&fam, 0.0, TAU, n).unwrap().matrix()[(0, 0)] - 1.0).abs())
        .collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[1] / w[0]).collect();
    let pass = ratios.iter().all(|&r| within(r, C4_RATIO));
    verdict(4, "product-formula convergence", pass, format!("errors {errors:?}, ratios {ratios:?}"));
}

#[test]
fn criterion_05_stability_certification() {
    let mut detail = vec![];
    let mut pass = true;
    let only_stability = CheckSpec { stability: true, ..CheckSpec::default() };
    for name in ["scalar-linear", "scalar-nonlinear", "transport"] {
        let cfg = bundled(name).unwrap();
        let setup = cfg.build().unwrap();
        let reports = run_checks(&cfg, &setup, &only_stability).unwrap();
        for outcome in reports.stability.unwrap() {
            match outcome {
                CheckOutcome::Completed(c) => {
                    pass &= c.dominated;
                    detail.push(format!("{name}/{}: dominated {}", c.family, c.dominated));
                }
                CheckOutcome::Failed { error } => {
                    pass = false;
                    detail.push(format!("{name}: {error}"));
                }
            }
        }
    }
    let grid = TorusGrid::new(32, 1).unwrap();
    let advection = discretize(
        &TransportCoefficients::scalar_advection(TrigPolynomial::constant(Shape::Matrix(1), DMatrix::from_element(1, 1, 1.0)).unwrap()),
        &grid,
    )
    .unwrap();
    let cert = certify_stability(&advection, 1.0, &CertificationGrid::default()).unwrap();
    let skew_ok = cert.e.m <= 1.0 + C5_CERT_TOL && cert.e.omega.abs() <= C5_CERT_TOL;
    pass &= skew_ok;
    detail.push(format!("skew advection M = {}, omega = {:e}", cert.e.m, cert.e.omega));
    verdict(5, "stability certification", pass, detail.join("; "));
}

fn random_poly(rng: &mut ChaCha8Rng, dim: usize) -> TrigPolynomial {
    let m = |rng: &mut ChaCha8Rng| DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let mut modes = vec![Mode::new(0.0, m(rng), DMatrix::zeros(dim, dim))];
    let extra = rng.random_range(0..3);
    let mut freqs = vec![];
    for _ in 0..extra {
        let f: f64 = rng.random_range(0.5..5.0);
        if freqs.iter().all(|g: &f64| (g - f).abs() > 1e-3) {
            freqs.push(f);
            modes.push(Mode::new(f, m(rng), m(rng)));
        }
    }
    TrigPolynomial::new(Shape::Matrix(dim), modes).unwrap()
}

#[test]
fn criterion_06_perturbation_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_231_106);
    let grid = CertificationGrid::with_sizes(vec![1, 2, 4, 8, 16, 32]);
    let horizon = 2.0;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for i in 0..C6_PAIRS {
        let dim = if i < C6_PAIRS / 2 { 1 } else { 2 };
        let mu_law = random_poly(&mut rng, dim);
        let nu_law = if rng.random_bool(0.5) {
            let eps = rng.random_range(1e-3..0.5);
            let shift = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0)) * eps;
            mu_law.add(&TrigPolynomial::constant(Shape::Matrix(dim), shift).unwrap()).unwrap()
        } else {
            random_poly(&mut rng, dim)
        };
        let perturbation = rng.random_bool(0.3).then(|| Perturbation {
            envelope: DecayEnvelope::Exponential { rate: rng.random_range(0.5..2.0) },
            matrix: DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0)),
        });
        let mu = OperatorFamily::new(mu_law, None, NormWeights::euclidean(dim)).unwrap();
        let nu = OperatorFamily::new(nu_law, perturbation, NormWeights::euclidean(dim)).unwrap();
        let constants = PerturbationConstants::from_certificates(
            &certify_stability(&nu, horizon, &grid).unwrap(),
            &certify_stability(&mu, horizon, &grid).unwrap(),
        );
        let s = rng.random_range(0.0..1.0);
        let t = rng.random_range(s + 0.1..=horizon);
        let n = 4 * grid.n_list.last().unwrap();
        let v = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let gap = perturbation_gap(&nu, &mu, &v, s, t, n, &constants).unwrap();
        if gap.lhs > gap.rhs * (1.0 + C6_SLACK) {
            failures += 1;
        }
        if gap.rhs > 0.0 {
            worst = worst.max(gap.lhs / gap.rhs);
        }
    }
    verdict(
        6,
        "perturbation inequality",
        failures == 0,
        format!("{C6_PAIRS} pairs, {failures} violations, max lhs/rhs {worst:.4}"),
    );
}

#[test]
fn criterion_07_riemann_sum_lemma() {
    let target = 1.0 - (-1.0f64).exp();
    assert!((target - C7_TARGET).abs() < 1e-7);
    let fam = scalar_family(&[(0.0, -1.0, 0.0), (1.0, 1.0, 0.0)]);
    let a_hat = DMatrix::from_element(1, 1, -1.0);
    // lambda = 4^-k so that t / sqrt(lambda) is a whole number of blocks.
    let lambdas: Vec<f64> = (1..=5).map(|k| 4f64.powi(-k)).collect();
    let records = riemann_semigroup_sum(&fam, &a_hat, |_| DVector::from_element(1, 1.0), 1.0, &lambdas, 4096).unwrap();
    let d: Vec<f64> = records.iter().map(|r| (r.sum[0] - target).abs()).collect();
    let decreasing = d.windows(2).all(|w| w[1] < w[0]);
    let last = *d.last().unwrap();
    let quadrature_ok = records.iter().all(|r| (r.integral[0] - target).abs() < 1e-10);
    verdict(
        7,
        "Riemann-sum lemma",
        decreasing && last < C7_TOL && quadrature_ok,
        format!("discrepancies {:?}, at lambda = 2^-10: {last:.3e}", d.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>()),
    );
}

fn cesaro_family(base: &DMatrix<f64>, b: &DMatrix<f64>, oscillating: bool) -> OperatorFamily {
    let n = base.nrows();
    let zeros = DMatrix::zeros(n, n);
    if oscillating {
        let law = TrigPolynomial::new(
            Shape::Matrix(n),
            vec![Mode::new(0.0, base.clone(), zeros.clone()), Mode::new(1.0, b.clone(), zeros)],
        )
        .unwrap();
        OperatorFamily::new(law, None, NormWeights::euclidean(n)).unwrap()
    } else {
        OperatorFamily::new(
            TrigPolynomial::constant(Shape::Matrix(n), base.clone()).unwrap(),
            Some(Perturbation { envelope: DecayEnvelope::Exponential { rate: 1.0 }, matrix: b.clone() }),
            NormWeights::euclidean(n),
        )
        .unwrap()
    }
}

#[test]
fn criterion_08_cesaro_check() {
    let a_hat = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
    let b = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 1.0, 0.0]);
    let b_norm = b.singular_values().max();
    let t_grid = [10.0, 100.0, 1000.0];
    let h_grid = default_shift_grid();

    let decaying = cesaro_check(&cesaro_family(&a_hat, &b, false), &a_hat, &t_grid, &h_grid, 1e-2, 64).unwrap();
    let bounded = decaying
        .values
        .iter()
        .zip(&t_grid)
        .all(|(row, t)| row.iter().all(|&v| v <= b_norm / t * (1.0 + 1e-12)));
    let decay_ok = decaying.verdict == CesaroVerdict::Satisfied && bounded;

    let oscillating = cesaro_check(&cesaro_family(&a_hat, &b, true), &a_hat, &t_grid, &h_grid, 1e-2, 64).unwrap();
    let target = 2.0 / PI * b_norm;
    let rel = (oscillating.estimated_limit - target).abs() / target;
    let osc_ok = oscillating.verdict == CesaroVerdict::Violated && rel <= C8_LIMIT_REL;

    // The same on the transport family, where the norm is L(H1, L2).
    let grid = TorusGrid::new(32, 1).unwrap();
    let fam = discretize(
        &TransportCoefficients::scalar_advection(
            TrigPolynomial::new(Shape::Matrix(1), vec![Mode::scalar(1.0, 1.0, 0.0)]).unwrap(),
        ),
        &grid,
    )
    .unwrap();
    let s = discretize(
        &TransportCoefficients::scalar_advection(TrigPolynomial::constant(Shape::Matrix(1), DMatrix::from_element(1, 1, 1.0)).unwrap()),
        &grid,
    )
    .unwrap()
    .at(0.0);
    let s_norm = fam.weights().op_norm_ve(&s);
    let transport = cesaro_check(&fam, &DMatrix::zeros(32, 32), &t_grid, &h_grid, 1e-2, 64).unwrap();
    let rel_t = (transport.estimated_limit - 2.0 / PI * s_norm).abs() / (2.0 / PI * s_norm);
    let transport_ok = transport.verdict == CesaroVerdict::Violated && rel_t <= C8_LIMIT_REL;

    verdict(
        8,
        "Cesàro hypothesis check",
        decay_ok && osc_ok && transport_ok,
        format!(
            "decaying: {:?}, bounded by |B|/T {bounded}; oscillating: {:?}, limit rel dev {rel:.4}; transport: {:?}, rel dev {rel_t:.4}",
            decaying.verdict, oscillating.verdict, transport.verdict
        ),
    );
}

#[test]
fn criterion_09_averaging_engine_consistency() {
    // One period of 225 puts sin(omega T / 2) at the same value for
    // T = 1e2, 1e3, 1e4, so the sup over h carries no phase noise.
    let omega = TAU / 225.0;
    let b = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.0]);
    let c = DVector::from_vec(vec![1.0, -0.5]);
    let f = ApMap::new(
        2,
        vec![
            ApTerm::new(TrigPolynomial::scalar(&[(0.0, 2.0, 0.0), (omega, 1.0, 0.0)]).unwrap(), DecayEnvelope::None, StateMap::Identity),
            ApTerm::new(
                TrigPolynomial::constant_scalar(1.0),
                DecayEnvelope::Exponential { rate: 1.0 },
                StateMap::Linear(b.clone()),
            ),
            ApTerm::new(TrigPolynomial::scalar(&[(omega, 0.0, 1.0)]).unwrap(), DecayEnvelope::None, StateMap::Constant(c.clone())),
        ],
    )
    .unwrap();
    let v = DVector::from_vec(vec![0.7, -1.2]);
    let closed = average_map(&f).eval(0.0, &v).unwrap();
    // |(1/T) \int cos| <= 2 / (omega T), |(1/T) \int e^{-tau}| <= 1 / T
    let c_const = 2.0 / omega * v.norm() + (&b * &v).norm() + 2.0 / omega * c.norm();
    let h_grid = default_shift_grid();
    let mut maxima = vec![];
    let mut bounded = true;
    for t in [1e2, 1e3, 1e4] {
        let mut worst: f64 = 0.0;
        for &h in &h_grid {
            let num = numerical_average(&f, &v, t, h, DEFAULT_NODES_PER_PERIOD).unwrap();
            let dev = (num - &closed).norm();
            bounded &= dev <= c_const / t;
            worst = worst.max(dev);
        }
        maxima.push(worst);
    }
    let ratios: Vec<f64> = maxima.windows(2).map(|w| w[1] / w[0]).collect();
    let scaling = ratios.iter().all(|&r| within(r, C9_DECADE_RATIO));

    let quasi = ApMap::new(
        1,
        vec![ApTerm::new(
            TrigPolynomial::scalar(&[(1.0, 1.0, 0.0), (2f64.sqrt(), 1.0, 0.0)]).unwrap(),
            DecayEnvelope::None,
            StateMap::Constant(DVector::from_element(1, 1.0)),
        )],
    )
    .unwrap();
    let zero = DVector::zeros(1);
    let quasi_worst = h_grid
        .iter()
        .map(|&h| numerical_average(&quasi, &zero, 1e3, h, DEFAULT_NODES_PER_PERIOD).unwrap()[0].abs())
        .fold(0.0, f64::max);
    verdict(
        9,
        "averaging engine consistency",
        bounded && scaling && quasi_worst < C9_QUASI_TOL,
        format!("within C/T {bounded}, decade ratios {ratios:.4?}, quasi-periodic max {quasi_worst:.3e}"),
    );
}

#[test]
fn criterion_10_end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/scalar-linear.toml");
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let status = Command::new(env!("CARGO_BIN_EXE_evoavg"))
            .args(["sweep", config, "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        (
            std::fs::read(out.join("scalar-linear.csv")).unwrap(),
            std::fs::read(out.join("scalar-linear.json")).unwrap(),
        )
    };
    let (csv_a, json_a) = run("a");
    let (csv_b, json_b) = run("b");
    let rows = String::from_utf8_lossy(&csv_a).lines().count() - 1;
    verdict(
        10,
        "end-to-end determinism",
        csv_a == csv_b && json_a == json_b && rows == 6,
        format!("{rows} rows, csv identical {}, json identical {}", csv_a == csv_b, json_a == json_b),
    );
}

#[test]
fn transport_oracle_reference_is_consistent() {
    // The characteristic oracle itself: a = cos, lambda = 1, t = 2 pi is the identity.
    let grid = TorusGrid::new(64, 1).unwrap();
    let u0 = grid.sample(|x| (TAU * x).sin());
    let a = GridField::Uniform(TrigPolynomial::new(Shape::Matrix(1), vec![Mode::scalar(1.0, 1.0, 0.0)]).unwrap());
    let back = exact_transport(&u0, &a, 1.0, TAU, &grid).unwrap();
    assert!((back - u0).amax() < 1e-12);
}
