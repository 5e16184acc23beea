//! First-order symmetric hyperbolic systems `u_t = a(x,t) u_x + b(x,t) u + f(x,t)`
//! on the periodic unit torus, discretized in space by symmetrized central
//! differences.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::evolution::{NormWeights, OperatorFamily, WeightKind};
use crate::signals::{ApMap, ApTerm, DecayEnvelope, Mode, Shape, StateMap, TrigPolynomial};

/// `points` nodes `x_i = i / points` on `[0, 1)`, `components` unknowns per
/// node. State index of `(i, c)` is `i * components + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    points: usize,
    components: usize,
}

impl TorusGrid {
    pub fn new(points: usize, components: usize) -> Result<Self> {
        if points < 8 {
            return Err(Error::InvalidArgument(format!("torus needs at least 8 points, got {points}")));
        }
        if components == 0 {
            return Err(Error::InvalidArgument("torus needs at least one component".into()));
        }
        Ok(Self { points, components })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.points as f64
    }

    pub fn dim(&self) -> usize {
        self.points * self.components
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.points as isize) as usize
    }

    /// Samples a scalar profile at the nodes (one component).
    pub fn sample(&self, g: impl Fn(f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.points, (0..self.points).map(|i| g(self.node(i))))
    }
}

/// A time signal that is either the same at every node or given per node.
#[derive(Debug, Clone, PartialEq)]
pub enum GridField {
    Uniform(TrigPolynomial),
    PerPoint(Vec<TrigPolynomial>),
}

impl GridField {
    pub fn at_point(&self, i: usize) -> &TrigPolynomial {
        match self {
            GridField::Uniform(p) => p,
            GridField::PerPoint(ps) => &ps[i],
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, GridField::Uniform(_))
    }

    fn check(&self, grid: &TorusGrid, shape: Shape, what: &str) -> Result<()> {
        let bad_shape = |p: &TrigPolynomial| p.shape() != shape;
        match self {
            GridField::Uniform(p) if bad_shape(p) => {
                Err(Error::InvalidArgument(format!("{what} has shape {:?}, expected {shape:?}", p.shape())))
            }
            GridField::PerPoint(ps) if ps.len() != grid.points => Err(Error::DimensionMismatch {
                expected: grid.points,
                got: ps.len(),
            }),
            GridField::PerPoint(ps) if ps.iter().any(bad_shape) => {
                Err(Error::InvalidArgument(format!("{what} has a sample of the wrong shape")))
            }
            _ => Ok(()),
        }
    }

    fn frequencies(&self, into: &mut BTreeSet<u64>) {
        let mut add = |p: &TrigPolynomial| into.extend(p.modes().iter().map(|m| m.freq.to_bits()));
        match self {
            GridField::Uniform(p) => add(p),
            GridField::PerPoint(ps) => ps.iter().for_each(add),
        }
    }

    /// Replaces every signal by its mean.
    pub fn averaged(&self) -> Self {
        let avg = |p: &TrigPolynomial| TrigPolynomial::constant(p.shape(), p.mean()).expect("finite mean");
        match self {
            GridField::Uniform(p) => GridField::Uniform(avg(p)),
            GridField::PerPoint(ps) => GridField::PerPoint(ps.iter().map(avg).collect()),
        }
    }
}

fn coefficients_at(p: &TrigPolynomial, freq: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    p.modes()
        .iter()
        .find(|m| m.freq == freq)
        .map(|m| (m.cos.clone(), m.sin.clone()))
        .unwrap_or_else(|| (p.shape().zeros(), p.shape().zeros()))
}

/// `a`, `b`: `M x M` signals; `f`: length-`M` vector signals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportCoefficients {
    pub a: GridField,
    pub b: GridField,
    pub f: GridField,
}

impl TransportCoefficients {
    pub fn zero(components: usize) -> Self {
        Self {
            a: GridField::Uniform(TrigPolynomial::zero(Shape::Matrix(components))),
            b: GridField::Uniform(TrigPolynomial::zero(Shape::Matrix(components))),
            f: GridField::Uniform(TrigPolynomial::zero(Shape::Vector(components))),
        }
    }

    /// Scalar advection `u_t = a(t) u_x` with `b = f = 0`.
    pub fn scalar_advection(a: TrigPolynomial) -> Self {
        Self { a: GridField::Uniform(a), ..Self::zero(1) }
    }

    pub fn averaged(&self) -> Self {
        Self {
            a: self.a.averaged(),
            b: self.b.averaged(),
            f: self.f.averaged(),
        }
    }

    fn check(&self, grid: &TorusGrid) -> Result<()> {
        let m = grid.components;
        self.a.check(grid, Shape::Matrix(m), "advection coefficient")?;
        self.b.check(grid, Shape::Matrix(m), "reaction coefficient")?;
        self.f.check(grid, Shape::Vector(m), "forcing")
    }
}

fn check_symmetric(p: &TrigPolynomial) -> Result<()> {
    for mode in p.modes() {
        for c in [&mode.cos, &mode.sin] {
            let scale = c.amax().max(1.0);
            if (c - c.transpose()).amax() > 1e-12 * scale {
                return Err(Error::HyperbolicityViolated(format!(
                    "advection coefficient at frequency {} is not symmetric",
                    mode.freq
                )));
            }
        }
    }
    Ok(())
}

fn assemble(grid: &TorusGrid, a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (np, m) = (grid.points, grid.components);
    let mut out = DMatrix::zeros(grid.dim(), grid.dim());
    let q = 0.25 / grid.spacing();
    for i in 0..np {
        let up = grid.wrap(i as isize + 1);
        let down = grid.wrap(i as isize - 1);
        let fwd = (&a[i] + &a[up]) * q;
        let bwd = (&a[i] + &a[down]) * -q;
        out.view_mut((i * m, up * m), (m, m)).add_assign(&fwd);
        out.view_mut((i * m, down * m), (m, m)).add_assign(&bwd);
        out.view_mut((i * m, i * m), (m, m)).add_assign(&b[i]);
    }
    out
}

trait AddAssignView {
    fn add_assign(&mut self, other: &DMatrix<f64>);
}

impl AddAssignView for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign(&mut self, other: &DMatrix<f64>) {
        *self += other;
    }
}

/// `A(t) = S(a(., t)) + b(., t)` with `S = (a D_c + D_c a) / 2`, measured in
/// the discrete `L2` / `H1` pair.
pub fn discretize(coeffs: &TransportCoefficients, grid: &TorusGrid) -> Result<OperatorFamily> {
    coeffs.check(grid)?;
    for i in 0..grid.points {
        check_symmetric(coeffs.a.at_point(i))?;
        if coeffs.a.is_uniform() {
            break;
        }
    }
    let mut freqs = BTreeSet::new();
    coeffs.a.frequencies(&mut freqs);
    coeffs.b.frequencies(&mut freqs);
    let mut modes = Vec::with_capacity(freqs.len());
    for bits in freqs {
        let freq = f64::from_bits(bits);
        let (mut a_cos, mut a_sin, mut b_cos, mut b_sin) = (vec![], vec![], vec![], vec![]);
        for i in 0..grid.points {
            let (c, s) = coefficients_at(coeffs.a.at_point(i), freq);
            a_cos.push(c);
            a_sin.push(s);
            let (c, s) = coefficients_at(coeffs.b.at_point(i), freq);
            b_cos.push(c);
            b_sin.push(s);
        }
        modes.push(Mode::new(freq, assemble(grid, &a_cos, &b_cos), assemble(grid, &a_sin, &b_sin)));
    }
    let law = TrigPolynomial::new(Shape::Matrix(grid.dim()), modes)?;
    OperatorFamily::new(law, None, H1Weights::new(*grid).norm_weights()?)
}

/// The forcing `f(., t)` sampled on the grid, as a state-independent map.
pub fn forcing_as_map(coeffs: &TransportCoefficients, grid: &TorusGrid) -> Result<ApMap> {
    coeffs.check(grid)?;
    let mut freqs = BTreeSet::new();
    coeffs.f.frequencies(&mut freqs);
    let m = grid.components;
    let mut terms = Vec::new();
    for bits in freqs {
        let freq = f64::from_bits(bits);
        let mut cos = DVector::zeros(grid.dim());
        let mut sin = DVector::zeros(grid.dim());
        for i in 0..grid.points {
            let (c, s) = coefficients_at(coeffs.f.at_point(i), freq);
            cos.rows_mut(i * m, m).copy_from(&c.column(0));
            sin.rows_mut(i * m, m).copy_from(&s.column(0));
        }
        if cos.amax() > 0.0 {
            let w = TrigPolynomial::scalar(&[(freq, 1.0, 0.0)])?;
            terms.push(ApTerm::new(w, DecayEnvelope::None, StateMap::Constant(cos)));
        }
        if sin.amax() > 0.0 {
            let w = TrigPolynomial::scalar(&[(freq, 0.0, 1.0)])?;
            terms.push(ApTerm::new(w, DecayEnvelope::None, StateMap::Constant(sin)));
        }
    }
    ApMap::new(grid.dim(), terms)
}

/// `|v|_V^2 = sum_i (|v_i|^2 + |(v_{i+1} - v_i) / dx|^2) dx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct H1Weights {
    grid: TorusGrid,
}

impl H1Weights {
    pub fn new(grid: TorusGrid) -> Self {
        Self { grid }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let g = self.grid;
        let (n, m, dx) = (g.dim(), g.components, g.spacing());
        let mut diff = DMatrix::zeros(n, n);
        for i in 0..g.points {
            let up = g.wrap(i as isize + 1);
            for c in 0..m {
                diff[(i * m + c, up * m + c)] += 1.0 / dx;
                diff[(i * m + c, i * m + c)] -= 1.0 / dx;
            }
        }
        (DMatrix::identity(n, n) + diff.transpose() * &diff) * dx
    }

    pub fn norm_weights(&self) -> Result<NormWeights> {
        NormWeights::from_gram(
            WeightKind::H1 { points: self.grid.points, components: self.grid.components },
            self.grid.spacing().sqrt(),
            self.gram(),
        )
    }
}

pub fn h1_norm(v: &DVector<f64>, w: &H1Weights) -> Result<f64> {
    let g = w.grid;
    if v.len() != g.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), got: v.len() });
    }
    let (m, dx) = (g.components, g.spacing());
    let mut sum = 0.0;
    for i in 0..g.points {
        let up = g.wrap(i as isize + 1);
        for c in 0..m {
            let (x, y) = (v[i * m + c], v[up * m + c]);
            sum += (x * x + ((y - x) / dx).powi(2)) * dx;
        }
    }
    Ok(sum.sqrt())
}

/// Discrete `L2` norm `(sum |v_i|^2 dx)^{1/2}`.
pub fn l2_norm(v: &DVector<f64>, grid: &TorusGrid) -> f64 {
    v.norm() * grid.spacing().sqrt()
}

/// Trigonometric interpolant of a periodic grid function, evaluated at `x`.
pub fn trig_interpolate(values: &DVector<f64>, xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let n = values.len();
    let half = n / 2;
    let mut alpha = vec![0.0; half + 1];
    let mut beta = vec![0.0; half + 1];
    for k in 0..=half {
        for (j, &u) in values.iter().enumerate() {
            let phase = TAU * ((k * j) % n) as f64 / n as f64;
            alpha[k] += u * phase.cos();
            beta[k] += u * phase.sin();
        }
        let nyquist = n % 2 == 0 && k == half;
        let scale = if k == 0 || nyquist { 1.0 } else { 2.0 } / n as f64;
        alpha[k] *= scale;
        beta[k] = if nyquist { 0.0 } else { beta[k] * scale };
    }
    xs.map(|x| {
        (0..=half)
            .map(|k| {
                let phase = TAU * k as f64 * x;
                alpha[k] * phase.cos() + beta[k] * phase.sin()
            })
            .sum()
    })
    .collect()
}

/// `Phi(t) = \int_0^t a(s / lambda) ds` for a scalar signal.
pub fn characteristic_shift(a: &TrigPolynomial, lambda: f64, t: f64) -> f64 {
    lambda * a.integral_scalar(0.0, t / lambda)
}

/// Solution of `u_t = a(t / lambda) u_x` on the torus: `u0(x + Phi(t))`.
pub fn exact_transport(
    u0: &DVector<f64>,
    a: &GridField,
    lambda: f64,
    t: f64,
    grid: &TorusGrid,
) -> Result<DVector<f64>> {
    if grid.components != 1 {
        return Err(Error::Unsupported("exact transport needs a single component".into()));
    }
    let a = match a {
        GridField::Uniform(p) if p.shape() == Shape::Matrix(1) || p.shape() == Shape::Scalar => p,
        GridField::Uniform(_) => return Err(Error::InvalidArgument("advection must be scalar".into())),
        GridField::PerPoint(_) => {
            return Err(Error::Unsupported("exact transport needs spatially constant advection".into()))
        }
    };
    if u0.len() != grid.points {
        return Err(Error::DimensionMismatch { expected: grid.points, got: u0.len() });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    let phi = characteristic_shift(a, lambda, t);
    let xs = (0..grid.points).map(|i| grid.node(i) + phi);
    Ok(DVector::from_vec(trig_interpolate(u0, xs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{certify_stability, matrix_exponential, CertificationGrid};
    use crate::mildsolve::{solve_mild, SemilinearProblem};
    use crate::averaging::{average_map, average_operator_family};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar(modes: &[(f64, f64, f64)]) -> TrigPolynomial {
        TrigPolynomial::new(
            Shape::Matrix(1),
            TrigPolynomial::scalar(modes).unwrap().modes().to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TorusGrid::new(7, 1).is_err());
        assert!(TorusGrid::new(8, 0).is_err());
        let g = TorusGrid::new(16, 3).unwrap();
        assert_eq!(g.dim(), 48);
        assert_eq!(g.wrap(-1), 15);
        assert_eq!(g.wrap(16), 0);
    }

    #[test]
    fn zero_and_decay_examples() {
        let g = TorusGrid::new(8, 2).unwrap();
        let fam = discretize(&TransportCoefficients::zero(2), &g).unwrap();
        assert_eq!(fam.at(0.3), DMatrix::zeros(16, 16));
        assert!(forcing_as_map(&TransportCoefficients::zero(2), &g).unwrap().is_zero());

        let c = TransportCoefficients {
            b: GridField::Uniform(TrigPolynomial::constant(Shape::Matrix(2), -DMatrix::identity(2, 2)).unwrap()),
            ..TransportCoefficients::zero(2)
        };
        let fam = discretize(&c, &g).unwrap();
        assert_eq!(fam.at(1.0), -DMatrix::identity(16, 16));
        let e = matrix_exponential(&fam.at(0.0), 2.0).unwrap();
        assert_abs_diff_eq!(fam.weights().op_norm_e(&e), (-2f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn unit_advection_is_skew_and_stable() {
        let g = TorusGrid::new(32, 1).unwrap();
        let fam = discretize(&TransportCoefficients::scalar_advection(scalar(&[(0.0, 1.0, 0.0)])), &g).unwrap();
        let s = fam.at(0.0);
        assert_eq!(&s + s.transpose(), DMatrix::zeros(32, 32));
        assert_eq!(s[(0, 1)], 16.0);
        assert_eq!(s[(0, 31)], -16.0);
        let cert = certify_stability(&fam, 1.0, &CertificationGrid::default()).unwrap();
        assert!((cert.e.m - 1.0).abs() < 1e-6, "{:?}", cert.e);
        assert!(cert.e.omega.abs() < 1e-6);
    }

    #[test]
    fn non_symmetric_advection_is_rejected() {
        let g = TorusGrid::new(8, 2).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let c = TransportCoefficients {
            a: GridField::Uniform(TrigPolynomial::constant(Shape::Matrix(2), a).unwrap()),
            ..TransportCoefficients::zero(2)
        };
        assert!(matches!(discretize(&c, &g), Err(Error::HyperbolicityViolated(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let g = TorusGrid::new(8, 1).unwrap();
        let c = TransportCoefficients {
            a: GridField::PerPoint(vec![scalar(&[(0.0, 1.0, 0.0)]); 7]),
            ..TransportCoefficients::zero(1)
        };
        assert!(matches!(discretize(&c, &g), Err(Error::DimensionMismatch { .. })));
        let c = TransportCoefficients::zero(2);
        assert!(discretize(&c, &g).is_err());
    }

    #[test]
    fn forcing_examples() {
        let g = TorusGrid::new(8, 1).unwrap();
        let profile = g.sample(|x| (TAU * x).cos());
        let per_point = |modes: &dyn Fn(f64) -> Vec<(f64, f64, f64)>| {
            GridField::PerPoint(
                profile
                    .iter()
                    .map(|&p| TrigPolynomial::new(Shape::Vector(1), TrigPolynomial::scalar(&modes(p)).unwrap().modes().to_vec()).unwrap())
                    .collect(),
            )
        };
        let sin_forcing = TransportCoefficients { f: per_point(&|p| vec![(1.0, 0.0, p)]), ..TransportCoefficients::zero(1) };
        let map = forcing_as_map(&sin_forcing, &g).unwrap();
        let u = DVector::zeros(8);
        assert_abs_diff_eq!(map.eval(0.5 * std::f64::consts::PI, &u).unwrap(), profile.clone(), epsilon = 1e-15);
        assert!(average_map(&map).is_zero());

        let shifted = TransportCoefficients { f: per_point(&|p| vec![(0.0, p, 0.0), (1.0, p, 0.0)]), ..TransportCoefficients::zero(1) };
        let avg = average_map(&forcing_as_map(&shifted, &g).unwrap());
        assert_eq!(avg.eval(3.0, &u).unwrap(), profile);
    }

    #[test]
    fn h1_norm_examples() {
        for n in [8, 16, 33] {
            let g = TorusGrid::new(n, 1).unwrap();
            let w = H1Weights::new(g);
            assert_eq!(h1_norm(&DVector::zeros(n), &w).unwrap(), 0.0);
            assert_abs_diff_eq!(h1_norm(&DVector::from_element(n, 1.0), &w).unwrap(), 1.0, epsilon = 1e-14);
        }
        let g = TorusGrid::new(16, 1).unwrap();
        let mut spike = DVector::zeros(16);
        spike[5] = 1.0;
        let norm = h1_norm(&spike, &H1Weights::new(g)).unwrap();
        assert_abs_diff_eq!(norm * norm, 32.0625, epsilon = 1e-12);
        assert_abs_diff_eq!(norm, 32.0625f64.sqrt(), epsilon = 1e-12);
        assert!(h1_norm(&DVector::zeros(15), &H1Weights::new(g)).is_err());
    }

    #[test]
    fn cholesky_weights_reproduce_quadratic_form() {
        let g = TorusGrid::new(12, 2).unwrap();
        let w = H1Weights::new(g);
        let nw = w.norm_weights().unwrap();
        let v = DVector::from_fn(24, |i, _| ((i * 7) % 5) as f64 - 1.5);
        assert_abs_diff_eq!(nw.v_norm(&v), h1_norm(&v, &w).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(nw.e_norm(&v), l2_norm(&v, &g), epsilon = 1e-14);
    }

    #[test]
    fn exact_transport_examples() {
        let g = TorusGrid::new(32, 1).unwrap();
        let u0 = g.sample(|x| (TAU * x).sin() + 0.3 * (3.0 * TAU * x).cos());
        let zero = GridField::Uniform(scalar(&[]));
        assert_abs_diff_eq!(exact_transport(&u0, &zero, 1.0, 5.0, &g).unwrap(), u0.clone(), epsilon = 1e-13);
        let one = GridField::Uniform(scalar(&[(0.0, 1.0, 0.0)]));
        let shifted = exact_transport(&u0, &one, 1.0, 0.5, &g).unwrap();
        for i in 0..32 {
            assert_abs_diff_eq!(shifted[i], u0[(i + 16) % 32], epsilon = 1e-13);
        }
        let cos = GridField::Uniform(scalar(&[(1.0, 1.0, 0.0)]));
        assert_abs_diff_eq!(exact_transport(&u0, &cos, 1.0, TAU, &g).unwrap(), u0, epsilon = 1e-13);

        let varying = GridField::PerPoint(vec![scalar(&[(0.0, 1.0, 0.0)]); 32]);
        assert!(matches!(exact_transport(&u0, &varying, 1.0, 1.0, &g), Err(Error::Unsupported(_))));
        let two = TorusGrid::new(32, 2).unwrap();
        assert!(matches!(exact_transport(&u0, &one, 1.0, 1.0, &two), Err(Error::Unsupported(_))));
    }

    #[test]
    fn interpolation_reproduces_trig_polynomials_off_grid() {
        let g = TorusGrid::new(16, 1).unwrap();
        let f = |x: f64| 0.5 + (TAU * x).sin() - 0.2 * (5.0 * TAU * x).cos() + 0.1 * (8.0 * TAU * x).cos();
        let xs = [0.013, 0.4, 0.77];
        let got = trig_interpolate(&g.sample(f), xs.iter().copied());
        // The Nyquist mode is only seen through its cosine, which is exact here.
        for (x, y) in xs.iter().zip(got) {
            assert_abs_diff_eq!(y, f(*x), epsilon = 1e-12);
        }
    }

    #[test]
    fn semidiscrete_transport_is_second_order_in_space() {
        let a = scalar(&[(0.0, 1.0, 0.0)]);
        let mut errors = vec![];
        for n in [16, 32, 64] {
            let g = TorusGrid::new(n, 1).unwrap();
            let fam = discretize(&TransportCoefficients::scalar_advection(a.clone()), &g).unwrap();
            let u0 = g.sample(|x| (TAU * x).sin());
            let p = SemilinearProblem::new(fam, ApMap::zero(n), u0.clone(), 0.5, None).unwrap();
            let traj = solve_mild(&p, 50).unwrap();
            let exact = exact_transport(&u0, &GridField::Uniform(a.clone()), 1.0, 0.5, &g).unwrap();
            errors.push((traj.last() - exact).amax());
        }
        for w in errors.windows(2) {
            let r = w[1] / w[0];
            assert!((0.2..0.3).contains(&r), "{errors:?}");
        }
    }

    #[test]
    fn oscillating_transport_is_first_order_in_time() {
        let a = scalar(&[(1.0, 1.0, 0.0)]);
        let g = TorusGrid::new(32, 1).unwrap();
        let fam = discretize(&TransportCoefficients::scalar_advection(a.clone()), &g).unwrap();
        let u0 = g.sample(|x| (TAU * x).sin());
        let p = SemilinearProblem::new(fam, ApMap::zero(32), u0.clone(), 1.0, None).unwrap();
        // Commuting generators: the semidiscrete flow is exp(Phi(t) S).
        let unit = discretize(&TransportCoefficients::scalar_advection(scalar(&[(0.0, 1.0, 0.0)])), &g).unwrap().at(0.0);
        let oracle = matrix_exponential(&unit, characteristic_shift(&a, 1.0, 1.0)).unwrap() * &u0;
        let errs: Vec<f64> = [64, 128, 256].iter().map(|&k| (solve_mild(&p, k).unwrap().last() - &oracle).amax()).collect();
        for w in errs.windows(2) {
            let r = w[1] / w[0];
            assert!((0.4..0.6).contains(&r), "{errs:?}");
        }
    }

    #[test]
    fn averaging_commutes_with_discretization() {
        let g = TorusGrid::new(8, 2).unwrap();
        let sym = |x: f64, y: f64| DMatrix::from_row_slice(2, 2, &[x, y, y, -x]);
        let a = GridField::PerPoint(
            (0..8)
                .map(|i| {
                    let x = g.node(i);
                    TrigPolynomial::new(
                        Shape::Matrix(2),
                        vec![
                            Mode::new(0.0, sym(1.0 + x, 0.5), DMatrix::zeros(2, 2)),
                            Mode::new(1.0, sym(0.3, x), sym(x * x, -1.0)),
                            Mode::new(2f64.sqrt(), sym(0.0, 0.25), DMatrix::zeros(2, 2)),
                        ],
                    )
                    .unwrap()
                })
                .collect(),
        );
        let b = GridField::Uniform(
            TrigPolynomial::new(
                Shape::Matrix(2),
                vec![
                    Mode::new(0.0, DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.0, -0.5]), DMatrix::zeros(2, 2)),
                    Mode::new(3.0, DMatrix::identity(2, 2), DMatrix::zeros(2, 2)),
                ],
            )
            .unwrap(),
        );
        let c = TransportCoefficients { a, b, ..TransportCoefficients::zero(2) };
        let fam = discretize(&c, &g).unwrap();
        let avg = discretize(&c.averaged(), &g).unwrap();
        assert_eq!(avg.at(0.0), average_operator_family(&fam));
        assert_eq!(avg.at(0.0), average_operator_family(&fam.rescaled(0.125)));
    }

    proptest! {
        #[test]
        fn advection_preserves_discrete_l2(
            c in -3.0f64..3.0,
            t in 0.0f64..2.0,
            coeffs in prop::collection::vec(-1.0f64..1.0, 16),
        ) {
            let g = TorusGrid::new(16, 1).unwrap();
            let fam = discretize(&TransportCoefficients::scalar_advection(scalar(&[(0.0, c, 0.0)])), &g).unwrap();
            let s = fam.at(0.0);
            prop_assert_eq!(&s + s.transpose(), DMatrix::zeros(16, 16));
            let v = DVector::from_vec(coeffs);
            let w = matrix_exponential(&s, t).unwrap() * &v;
            prop_assert!((l2_norm(&w, &g) - l2_norm(&v, &g)).abs() <= 1e-10 * (1.0 + l2_norm(&v, &g)));
        }

        #[test]
        fn e_norm_is_dominated_by_v_norm(coeffs in prop::collection::vec(-5.0f64..5.0, 20)) {
            let g = TorusGrid::new(10, 2).unwrap();
            let v = DVector::from_vec(coeffs);
            prop_assert!(l2_norm(&v, &g) <= h1_norm(&v, &H1Weights::new(g)).unwrap() * (1.0 + 1e-14));
        }
    }
}
