//! Discrete mild solutions by frozen-coefficient exponential Euler.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evolution::{for_each_factor, matrix_exponential, min_resolving_steps, OperatorFamily};
use crate::signals::{ApMap, DecayEnvelope, StateMap, TrigPolynomial};

/// States whose norm exceeds this count as escaped.
pub const ESCAPE_THRESHOLD: f64 = 1e12;

/// `u' = A(t/lambda) u + F(t/lambda, u)`, `u(0) = u0` on `[0, horizon]`.
/// With `lambda = None` the problem is taken as written (no rescaling).
#[derive(Debug, Clone)]
pub struct SemilinearProblem {
    fam: OperatorFamily,
    map: ApMap,
    u0: DVector<f64>,
    horizon: f64,
    lambda: Option<f64>,
}

impl SemilinearProblem {
    pub fn new(
        fam: OperatorFamily,
        map: ApMap,
        u0: DVector<f64>,
        horizon: f64,
        lambda: Option<f64>,
    ) -> Result<Self> {
        let n = fam.dim();
        for got in [map.dim(), u0.len()] {
            if got != n {
                return Err(Error::DimensionMismatch { expected: n, got });
            }
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
        }
        if let Some(l) = lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidArgument(format!("lambda {l} must be positive")));
            }
        }
        if u0.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("initial state is not finite".into()));
        }
        Ok(Self {
            fam: fam.unscaled(),
            map,
            u0,
            horizon,
            lambda,
        })
    }

    pub fn family(&self) -> &OperatorFamily {
        &self.fam
    }

    pub fn map(&self) -> &ApMap {
        &self.map
    }

    pub fn u0(&self) -> &DVector<f64> {
        &self.u0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.fam.dim()
    }

    pub fn with_lambda(&self, lambda: Option<f64>) -> Result<Self> {
        Self::new(self.fam.clone(), self.map.clone(), self.u0.clone(), self.horizon, lambda)
    }

    pub fn with_initial(&self, u0: DVector<f64>) -> Result<Self> {
        Self::new(self.fam.clone(), self.map.clone(), u0, self.horizon, self.lambda)
    }

    /// The generator family as the solver sees it.
    pub fn generator(&self) -> OperatorFamily {
        match self.lambda {
            Some(l) => self.fam.rescaled(l),
            None => self.fam.clone(),
        }
    }

    pub fn nonlinearity(&self, t: f64, u: &DVector<f64>) -> DVector<f64> {
        let tau = self.lambda.map_or(t, |l| t / l);
        self.map.eval_unchecked(tau, u)
    }

    pub fn max_rate(&self) -> f64 {
        self.fam.max_rate().max(self.map.max_rate())
    }

    /// Fewest steps on `[0, horizon]` meeting the oscillation resolution rule.
    pub fn min_steps(&self) -> usize {
        match self.lambda {
            Some(l) => min_resolving_steps(self.horizon, self.max_rate(), l),
            None => 1,
        }
    }

    /// Hex digest over every number defining the problem.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut put = |x: f64| h.update(x.to_le_bytes());
        put(self.dim() as f64);
        put_poly(&mut put, self.fam.law());
        if let Some(p) = self.fam.perturbation() {
            put_envelope(&mut put, &p.envelope);
            p.matrix.iter().for_each(|&x| put(x));
        }
        put(match self.fam.weights().kind() {
            crate::evolution::WeightKind::Euclidean => -1.0,
            crate::evolution::WeightKind::H1 { points, components } => {
                (points * 1000 + components) as f64
            }
        });
        for term in self.map.terms() {
            put_poly(&mut put, &term.weight);
            put_envelope(&mut put, &term.envelope);
            match &term.map {
                StateMap::Identity => put(1.0),
                StateMap::Linear(b) => {
                    put(2.0);
                    b.iter().for_each(|&x| put(x));
                }
                StateMap::QuadraticDiagonal => put(3.0),
                StateMap::BoundedSine => put(4.0),
                StateMap::Constant(c) => {
                    put(5.0);
                    c.iter().for_each(|&x| put(x));
                }
            }
        }
        self.u0.iter().for_each(|&x| put(x));
        put(self.horizon);
        put(self.lambda.unwrap_or(-1.0));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn put_poly(put: &mut impl FnMut(f64), p: &TrigPolynomial) {
    for m in p.modes() {
        put(m.freq);
        m.cos.iter().chain(m.sin.iter()).for_each(|&x| put(x));
    }
    put(f64::NAN);
}

fn put_envelope(put: &mut impl FnMut(f64), e: &DecayEnvelope) {
    match *e {
        DecayEnvelope::None => put(0.0),
        DecayEnvelope::Exponential { rate } => {
            put(1.0);
            put(rate)
        }
        DecayEnvelope::Algebraic { exponent } => {
            put(2.0);
            put(exponent)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryMeta {
    pub fingerprint: String,
    pub step: f64,
    pub escape_threshold: f64,
}

/// States on the uniform grid `tau_k = k h`, `k = 0..=K`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    meta: TrajectoryMeta,
}

impl Trajectory {
    /// Wraps externally computed states (e.g. a closed-form solution)
    /// sampled on the uniform grid of `p` with `states.len() - 1` steps.
    pub fn from_states(p: &SemilinearProblem, states: Vec<DVector<f64>>) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::InvalidArgument("a trajectory needs at least two states".into()));
        }
        if let Some(s) = states.iter().find(|s| s.len() != p.dim()) {
            return Err(Error::DimensionMismatch {
                expected: p.dim(),
                got: s.len(),
            });
        }
        let k = states.len() - 1;
        Ok(Self {
            times: uniform_grid(p.horizon(), k),
            states,
            meta: TrajectoryMeta {
                fingerprint: p.fingerprint(),
                step: p.horizon() / k as f64,
                escape_threshold: ESCAPE_THRESHOLD,
            },
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.meta.step
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    /// Piecewise-linear interpolation; clamps outside the grid.
    pub fn interpolate(&self, t: f64) -> DVector<f64> {
        let k = self.steps();
        let x = (t / self.meta.step).clamp(0.0, k as f64);
        let i = (x.floor() as usize).min(k - 1);
        let theta = x - i as f64;
        &self.states[i] * (1.0 - theta) + &self.states[i + 1] * theta
    }

    /// Every `stride`-th state, starting at the first.
    pub fn subsample(&self, stride: usize) -> Result<Vec<&DVector<f64>>> {
        if stride == 0 || self.steps() % stride != 0 {
            return Err(Error::InvalidArgument(format!(
                "stride {stride} does not divide {} steps",
                self.steps()
            )));
        }
        Ok(self.states.iter().step_by(stride).collect())
    }

    /// CSV with header `t,u_1,...,u_n`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.states[0].len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("u_{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for (t, u) in self.times.iter().zip(&self.states) {
            let mut row = vec![t.to_string()];
            row.extend(u.iter().map(|x| x.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

pub(crate) fn uniform_grid(horizon: f64, k: usize) -> Vec<f64> {
    (0..=k)
        .map(|i| if i == k { horizon } else { horizon * (i as f64 / k as f64) })
        .collect()
}

/// `u_{k+1} = exp(h A(tau_k)) (u_k + h F(tau_k, u_k))` with `h = T / K`.
pub fn solve_mild(p: &SemilinearProblem, steps: usize) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    if p.lambda.is_some() {
        let min_steps = p.min_steps();
        if steps < min_steps {
            return Err(Error::UnresolvedOscillation { min_steps });
        }
    }
    let h = p.horizon / steps as f64;
    let times = uniform_grid(p.horizon, steps);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(p.u0.clone());
    let gen = p.generator();
    let mut u = p.u0.clone();
    for_each_factor(&gen, 0.0, h, steps, |k, e| {
        let tau = times[k];
        let mut x = p.nonlinearity(tau, &u);
        x *= h;
        x += &u;
        u = e * x;
        if !u.iter().all(|v| v.is_finite()) || u.norm() > ESCAPE_THRESHOLD {
            return Err(Error::Escaped { last_time: tau });
        }
        states.push(u.clone());
        Ok(())
    })?;
    Ok(Trajectory {
        times,
        states,
        meta: TrajectoryMeta {
            fingerprint: p.fingerprint(),
            step: h,
            escape_threshold: ESCAPE_THRESHOLD,
        },
    })
}

/// Residual of the variation-of-constants identity along `traj`:
/// `max_k |u_k - R(tau_k, 0) u0 - sum_j w_j R(tau_k, sigma_j) F(sigma_j, u(sigma_j))|_E`.
///
/// The reference partition has `n_ref` steps rounded up to a multiple of
/// the trajectory's steps; `sigma_j` are its midpoints and `u(sigma_j)` is
/// interpolated linearly from the trajectory.
pub fn mild_defect(traj: &Trajectory, p: &SemilinearProblem, n_ref: usize) -> Result<f64> {
    if traj.meta.fingerprint != p.fingerprint() {
        return Err(Error::FingerprintMismatch);
    }
    let k = traj.steps();
    let ratio = n_ref.div_ceil(k).max(1);
    let n = ratio * k;
    let delta = p.horizon / n as f64;
    let gen = p.generator();
    let w = gen.weights_arc();

    let mut y = p.u0.clone();
    let mut defect: f64 = 0.0;
    let mut start = 0;
    const CHUNK: usize = 256;
    while start < n {
        let end = (start + CHUNK).min(n);
        let factors: Vec<(DMatrix<f64>, DMatrix<f64>)> = (start..end)
            .into_par_iter()
            .map(|j| {
                let t = j as f64 * delta;
                Ok((
                    matrix_exponential(&gen.at(t), delta)?,
                    matrix_exponential(&gen.at(t + 0.5 * delta), 0.5 * delta)?,
                ))
            })
            .collect::<Result<_>>()?;
        for (off, (full, half)) in factors.iter().enumerate() {
            let j = start + off;
            let sigma = (j as f64 + 0.5) * delta;
            let f = p.nonlinearity(sigma, &traj.interpolate(sigma));
            y = full * &y + half * f * delta;
            if (j + 1) % ratio == 0 {
                let idx = (j + 1) / ratio;
                defect = defect.max(w.e_norm(&(&traj.states[idx] - &y)));
            }
        }
        start = end;
    }
    Ok(defect)
}

#[derive(Debug, Clone, Serialize)]
pub struct RiemannRecord {
    pub lambda: f64,
    /// `lambda T_n` with `T_n = lambda^{-1/2}`.
    pub block: f64,
    pub blocks: usize,
    pub sum: Vec<f64>,
    pub integral: Vec<f64>,
    pub discrepancy: f64,
}

/// Operator Riemann sums
/// `lambda T_n sum_{k < k_n} R^lambda(k_n lambda T_n, k lambda T_n) w(k lambda T_n)`
/// against `\int_0^t exp((t - s) a_hat) w(s) ds`, with `T_n = lambda^{-1/2}`
/// and `k_n = floor(t / (lambda T_n))`.
///
/// `fam` is the unscaled family; each `lambda` view is built here. The
/// reference integral uses composite Simpson with `quad_intervals` panels.
pub fn riemann_semigroup_sum(
    fam: &OperatorFamily,
    a_hat: &DMatrix<f64>,
    w: impl Fn(f64) -> DVector<f64>,
    t: f64,
    lambdas: &[f64],
    quad_intervals: usize,
) -> Result<Vec<RiemannRecord>> {
    let dim = fam.dim();
    if a_hat.shape() != (dim, dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: a_hat.nrows(),
        });
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("t = {t} must be positive")));
    }
    let weights = fam.weights_arc();
    let integral = semigroup_convolution(a_hat, &w, t, quad_intervals.max(2))?;

    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} must lie in (0, 1)")));
        }
        let block = lambda * lambda.powf(-0.5);
        let blocks = (t / block + 1e-9).floor() as usize;
        if blocks == 0 {
            return Err(Error::DegeneratePartition { t, block });
        }
        let sub = min_resolving_steps(block, fam.max_rate(), lambda);
        let h = block / sub as f64;
        let view = fam.rescaled(lambda);
        let mut acc = DVector::zeros(dim);
        for_each_factor(&view, 0.0, h, blocks * sub, |j, f| {
            if j % sub == 0 {
                acc.axpy(block, &w((j / sub) as f64 * block), 1.0);
            }
            acc = f * &acc;
            Ok(())
        })?;
        let discrepancy = weights.e_norm(&(&acc - &integral));
        out.push(RiemannRecord {
            lambda,
            block,
            blocks,
            sum: acc.iter().copied().collect(),
            integral: integral.iter().copied().collect(),
            discrepancy,
        });
    }
    Ok(out)
}

fn semigroup_convolution(
    a_hat: &DMatrix<f64>,
    w: &impl Fn(f64) -> DVector<f64>,
    t: f64,
    intervals: usize,
) -> Result<DVector<f64>> {
    let n = intervals + intervals % 2;
    let ds = t / n as f64;
    let step = matrix_exponential(a_hat, ds)?;
    let dim = a_hat.nrows();
    // Walk s from t down to 0 so that prop = exp((t - s) a_hat).
    let mut prop = DMatrix::identity(dim, dim);
    let mut acc = DVector::zeros(dim);
    for j in (0..=n).rev() {
        let coef = if j == 0 || j == n {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += &prop * w(j as f64 * ds) * coef;
        if j > 0 {
            prop = &step * prop;
        }
    }
    Ok(acc * (ds / 3.0))
}
