//! Almost-periodic time dependence as finite trigonometric polynomials,
//! decay envelopes, and the state-map catalog for nonlinearities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;

/// Tensor shape shared by every coefficient of a [`TrigPolynomial`].
/// Vectors are stored as `m x 1` matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize),
}

impl Shape {
    pub fn dims(self) -> (usize, usize) {
        match self {
            Shape::Scalar => (1, 1),
            Shape::Vector(m) => (m, 1),
            Shape::Matrix(m) => (m, m),
        }
    }

    pub fn zeros(self) -> DMatrix<f64> {
        let (r, c) = self.dims();
        DMatrix::zeros(r, c)
    }
}

/// One frequency component `cos * cos(freq t) + sin * sin(freq t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub freq: f64,
    pub cos: DMatrix<f64>,
    pub sin: DMatrix<f64>,
}

impl Mode {
    pub fn new(freq: f64, cos: DMatrix<f64>, sin: DMatrix<f64>) -> Self {
        Self { freq, cos, sin }
    }

    pub fn scalar(freq: f64, cos: f64, sin: f64) -> Self {
        Self::new(
            freq,
            DMatrix::from_element(1, 1, cos),
            DMatrix::from_element(1, 1, sin),
        )
    }
}

/// A finite sum of modes with pairwise distinct non-negative frequencies.
///
/// Modes are kept sorted by frequency so that two polynomials built from
/// the same data in a different order compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPolynomial {
    shape: Shape,
    modes: Vec<Mode>,
}

impl TrigPolynomial {
    pub fn new(shape: Shape, mut modes: Vec<Mode>) -> Result<Self> {
        let dims = shape.dims();
        for m in &modes {
            if !(m.freq.is_finite() && m.freq >= 0.0) {
                return Err(Error::InvalidSignal(format!(
                    "frequency {} must be finite and non-negative",
                    m.freq
                )));
            }
            if m.cos.shape() != dims || m.sin.shape() != dims {
                return Err(Error::InvalidSignal(format!(
                    "coefficient shape {:?}/{:?} does not match {:?}",
                    m.cos.shape(),
                    m.sin.shape(),
                    dims
                )));
            }
            if m.cos.iter().chain(m.sin.iter()).any(|x| !x.is_finite()) {
                return Err(Error::InvalidSignal("non-finite coefficient".into()));
            }
            if m.freq == 0.0 && m.sin.iter().any(|&x| x != 0.0) {
                return Err(Error::InvalidSignal(
                    "the frequency-0 mode must have a zero sine coefficient".into(),
                ));
            }
        }
        modes.sort_by(|a, b| a.freq.total_cmp(&b.freq));
        if modes.windows(2).any(|w| w[0].freq == w[1].freq) {
            return Err(Error::InvalidSignal("duplicate frequency".into()));
        }
        Ok(Self { shape, modes })
    }

    pub fn zero(shape: Shape) -> Self {
        Self {
            shape,
            modes: Vec::new(),
        }
    }

    pub fn constant(shape: Shape, value: DMatrix<f64>) -> Result<Self> {
        let sin = shape.zeros();
        Self::new(shape, vec![Mode::new(0.0, value, sin)])
    }

    pub fn constant_scalar(c: f64) -> Self {
        Self {
            shape: Shape::Scalar,
            modes: vec![Mode::scalar(0.0, c, 0.0)],
        }
    }

    /// Scalar polynomial from `(freq, cos, sin)` triples.
    pub fn scalar(modes: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(
            Shape::Scalar,
            modes
                .iter()
                .map(|&(f, c, s)| Mode::scalar(f, c, s))
                .collect(),
        )
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        let mut out = self.shape.zeros();
        for m in &self.modes {
            if m.freq == 0.0 {
                out += &m.cos;
            } else {
                let (s, c) = (m.freq * t).sin_cos();
                out.zip_zip_apply(&m.cos, &m.sin, |o, a, b| *o += a * c + b * s);
            }
        }
        out
    }

    /// Value of a scalar-shaped polynomial. For other shapes this returns
    /// the `(0, 0)` entry.
    pub fn eval_scalar(&self, t: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                if m.freq == 0.0 {
                    m.cos[(0, 0)]
                } else {
                    let (s, c) = (m.freq * t).sin_cos();
                    m.cos[(0, 0)] * c + m.sin[(0, 0)] * s
                }
            })
            .sum()
    }

    /// Long-time mean: the frequency-0 cosine coefficient.
    pub fn mean(&self) -> DMatrix<f64> {
        self.modes
            .iter()
            .find(|m| m.freq == 0.0)
            .map(|m| m.cos.clone())
            .unwrap_or_else(|| self.shape.zeros())
    }

    /// Entrywise `sum |cos| + |sin|`, a bound on `|eval(t)|` for every t.
    pub fn amplitude_bound(&self) -> DMatrix<f64> {
        let mut out = self.shape.zeros();
        for m in &self.modes {
            out.zip_zip_apply(&m.cos, &m.sin, |o, a, b| *o += a.abs() + b.abs());
        }
        out
    }

    pub fn max_frequency(&self) -> f64 {
        self.modes.last().map_or(0.0, |m| m.freq)
    }

    pub fn is_constant(&self) -> bool {
        self.modes.iter().all(|m| m.freq == 0.0)
    }

    /// `t -> p(factor * t)`.
    pub fn time_scaled(&self, factor: f64) -> Self {
        Self {
            shape: self.shape,
            modes: self
                .modes
                .iter()
                .map(|m| Mode::new(m.freq * factor, m.cos.clone(), m.sin.clone()))
                .collect(),
        }
    }

    /// Applies a linear map to every coefficient. The caller is responsible
    /// for `f` being linear; the frequency structure is carried over unchanged.
    pub fn map_linear(
        &self,
        shape: Shape,
        f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(
            shape,
            self.modes
                .iter()
                .map(|m| Mode::new(m.freq, f(&m.cos), f(&m.sin)))
                .collect(),
        )
    }

    /// Sum of two polynomials of the same shape, merging equal frequencies.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::InvalidSignal("shape mismatch in sum".into()));
        }
        let mut modes = self.modes.clone();
        for m in &other.modes {
            match modes.iter_mut().find(|x| x.freq == m.freq) {
                Some(x) => {
                    x.cos += &m.cos;
                    x.sin += &m.sin;
                }
                None => modes.push(m.clone()),
            }
        }
        Self::new(self.shape, modes)
    }

    /// Exact `\int_a^b p(s) ds` for the `(0, 0)` entry.
    pub fn integral_scalar(&self, a: f64, b: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let (c, s) = (m.cos[(0, 0)], m.sin[(0, 0)]);
                if m.freq == 0.0 {
                    c * (b - a)
                } else {
                    let w = m.freq;
                    c * ((w * b).sin() - (w * a).sin()) / w
                        - s * ((w * b).cos() - (w * a).cos()) / w
                }
            })
            .sum()
    }
}

/// Decaying multiplier attached to a nonlinearity term or a generator
/// perturbation. Values lie in `(0, 1]` and never increase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DecayEnvelope {
    #[default]
    None,
    Exponential { rate: f64 },
    Algebraic { exponent: f64 },
}

impl DecayEnvelope {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DecayEnvelope::None => Ok(()),
            DecayEnvelope::Exponential { rate: p } | DecayEnvelope::Algebraic { exponent: p } => {
                if p.is_finite() && p > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidSignal(format!(
                        "decay parameter {p} must be positive"
                    )))
                }
            }
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            DecayEnvelope::None => 1.0,
            DecayEnvelope::Exponential { rate } => (-rate * t).exp(),
            DecayEnvelope::Algebraic { exponent } => (1.0 + t).powf(-exponent),
        }
    }

    pub fn decays(&self) -> bool {
        !matches!(self, DecayEnvelope::None)
    }

    /// Inverse time scale of the envelope's variation, used for step
    /// resolution alongside frequencies.
    pub fn rate(&self) -> f64 {
        match *self {
            DecayEnvelope::None => 0.0,
            DecayEnvelope::Exponential { rate } => rate,
            DecayEnvelope::Algebraic { exponent } => exponent,
        }
    }
}

/// Closed catalog of state maps, each with an analytic local Lipschitz constant.
#[derive(Debug, Clone, PartialEq)]
pub enum StateMap {
    Identity,
    Linear(DMatrix<f64>),
    QuadraticDiagonal,
    BoundedSine,
    Constant(DVector<f64>),
}

impl StateMap {
    fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            StateMap::Identity => u.clone(),
            StateMap::Linear(b) => b * u,
            StateMap::QuadraticDiagonal => u.map(|x| x * x),
            StateMap::BoundedSine => u.map(f64::sin),
            StateMap::Constant(c) => c.clone(),
        }
    }

    /// Lipschitz constant on the Euclidean ball of radius `radius`.
    pub fn lipschitz(&self, radius: f64) -> f64 {
        match self {
            StateMap::Identity | StateMap::BoundedSine => 1.0,
            StateMap::Linear(b) => spectral_norm(b),
            StateMap::QuadraticDiagonal => 2.0 * radius,
            StateMap::Constant(_) => 0.0,
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        let got = match self {
            StateMap::Linear(b) if b.nrows() != dim || b.ncols() != dim => {
                if b.nrows() != dim {
                    b.nrows()
                } else {
                    b.ncols()
                }
            }
            StateMap::Constant(c) if c.len() != dim => c.len(),
            _ => return Ok(()),
        };
        Err(Error::DimensionMismatch { expected: dim, got })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApTerm {
    pub weight: TrigPolynomial,
    pub envelope: DecayEnvelope,
    pub map: StateMap,
}

impl ApTerm {
    pub fn new(weight: TrigPolynomial, envelope: DecayEnvelope, map: StateMap) -> Self {
        Self {
            weight,
            envelope,
            map,
        }
    }

    fn scale(&self, t: f64) -> f64 {
        self.weight.eval_scalar(t) * self.envelope.value(t)
    }
}

/// `F(t, u) = sum_k weight_k(t) * envelope_k(t) * map_k(u)` on `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApMap {
    dim: usize,
    terms: Vec<ApTerm>,
}

impl ApMap {
    pub fn new(dim: usize, terms: Vec<ApTerm>) -> Result<Self> {
        for term in &terms {
            if term.weight.shape() != Shape::Scalar {
                return Err(Error::InvalidSignal("term weights must be scalar".into()));
            }
            term.envelope.validate()?;
            term.map.check_dim(dim)?;
        }
        Ok(Self { dim, terms })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[ApTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, t: f64, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: u.len(),
            });
        }
        Ok(self.eval_unchecked(t, u))
    }

    pub(crate) fn eval_unchecked(&self, t: f64, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for term in &self.terms {
            let w = term.scale(t);
            if w != 0.0 {
                out.axpy(w, &term.map.apply(u), 1.0);
            }
        }
        out
    }

    /// Highest frequency or decay rate among the weights; sets the time
    /// scale that a step size has to resolve.
    pub fn max_rate(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.weight.max_frequency().max(t.envelope.rate()))
            .fold(0.0, f64::max)
    }

    pub fn is_autonomous(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.weight.is_constant() && !t.envelope.decays())
    }

    /// Lipschitz constant of `u -> F(t, u)` on the ball of radius `radius`,
    /// uniform in `t`.
    pub fn lipschitz(&self, radius: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.weight.amplitude_bound()[(0, 0)] * t.map.lipschitz(radius))
            .sum()
    }

    pub fn has_quadratic(&self) -> bool {
        self.terms
            .iter()
            .any(|t| matches!(t.map, StateMap::QuadraticDiagonal))
    }

    /// Sampled lower estimate of the smallest `c` with
    /// `|F(t, u)| <= c (1 + |u|)`.
    ///
    /// States are probed along the coordinate axes (both signs) and the
    /// two diagonals at each radius.
    pub fn estimate_growth(&self, radii: &[f64], times: &[f64]) -> Result<f64> {
        if radii.is_empty() || times.is_empty() {
            return Err(Error::InvalidArgument("empty sample set".into()));
        }
        if self.has_quadratic() {
            return Err(Error::GrowthNotCertifiable(
                "quadratic terms violate sublinear growth".into(),
            ));
        }
        let directions = probe_directions(self.dim);
        let mut c: f64 = 0.0;
        for &r in radii {
            for d in &directions {
                let u = d * r;
                let denom = 1.0 + u.norm();
                for &t in times {
                    c = c.max(self.eval_unchecked(t, &u).norm() / denom);
                }
            }
        }
        Ok(c)
    }
}

fn probe_directions(dim: usize) -> Vec<DVector<f64>> {
    let mut dirs = Vec::with_capacity(2 * dim + 2);
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut e = DVector::zeros(dim);
            e[i] = sign;
            dirs.push(e);
        }
    }
    if dim > 1 {
        let s = 1.0 / (dim as f64).sqrt();
        dirs.push(DVector::from_element(dim, s));
        dirs.push(DVector::from_fn(dim, |i, _| if i % 2 == 0 { s } else { -s }));
    }
    dirs
}
