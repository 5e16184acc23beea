use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::signals::{DecayEnvelope, Shape, TrigPolynomial};

/// Which pair of norms a family is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// `E = V = R^n` with the Euclidean norm.
    Euclidean,
    /// Periodic grid of `points` nodes and `components` unknowns per node;
    /// `E` is the scaled discrete L2 norm and `V` the discrete H1 norm.
    H1 { points: usize, components: usize },
}

/// Factor matrices realizing the `E` and `V` norms:
/// `|v|_E = e_scale |v|_2` and `|v|_V = |W v|_2`.
#[derive(Debug, Clone)]
pub struct NormWeights {
    kind: WeightKind,
    dim: usize,
    e_scale: f64,
    v_factor: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl PartialEq for NormWeights {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.dim == other.dim
    }
}

impl NormWeights {
    pub fn euclidean(dim: usize) -> Self {
        Self {
            kind: WeightKind::Euclidean,
            dim,
            e_scale: 1.0,
            v_factor: None,
        }
    }

    /// Builds weights from an explicit `V` Gram matrix `G` (so that
    /// `|v|_V^2 = v^T G v`) and a scalar `E` scale.
    pub fn from_gram(kind: WeightKind, e_scale: f64, gram: DMatrix<f64>) -> Result<Self> {
        let dim = gram.nrows();
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("V Gram matrix is not positive definite".into()))?;
        let w = chol.l().transpose();
        let w_inv = w
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("singular V factor".into()))?;
        Ok(Self {
            kind,
            dim,
            e_scale,
            v_factor: Some((w, w_inv)),
        })
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn e_scale(&self) -> f64 {
        self.e_scale
    }

    pub fn e_norm(&self, v: &DVector<f64>) -> f64 {
        self.e_scale * v.norm()
    }

    pub fn v_norm(&self, v: &DVector<f64>) -> f64 {
        match &self.v_factor {
            None => v.norm(),
            Some((w, _)) => (w * v).norm(),
        }
    }

    /// Operator norm in `L(E, E)`; the scalar weight cancels.
    pub fn op_norm_e(&self, m: &DMatrix<f64>) -> f64 {
        spectral_norm(m)
    }

    /// Operator norm in `L(V, V)`.
    pub fn op_norm_v(&self, m: &DMatrix<f64>) -> f64 {
        match &self.v_factor {
            None => spectral_norm(m),
            Some((w, w_inv)) => spectral_norm(&(w * m * w_inv)),
        }
    }

    /// Operator norm in `L(V, E)`, i.e. `|W_E D W_V^{-1}|_2`.
    pub fn op_norm_ve(&self, m: &DMatrix<f64>) -> f64 {
        match &self.v_factor {
            None => self.e_scale * spectral_norm(m),
            Some((_, w_inv)) => self.e_scale * spectral_norm(&(m * w_inv)),
        }
    }
}

/// Decay-weighted constant perturbation `d(t) B` of a generator family.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub envelope: DecayEnvelope,
    pub matrix: DMatrix<f64>,
}

/// `A(t) = P(t) + d(t) B`, optionally viewed at rescaled time `t / lambda`.
#[derive(Debug, Clone)]
pub struct OperatorFamily {
    dim: usize,
    law: TrigPolynomial,
    perturbation: Option<Perturbation>,
    weights: Arc<NormWeights>,
    rescale: Option<f64>,
}

impl OperatorFamily {
    pub fn new(
        law: TrigPolynomial,
        perturbation: Option<Perturbation>,
        weights: NormWeights,
    ) -> Result<Self> {
        let dim = match law.shape() {
            Shape::Matrix(n) => n,
            Shape::Scalar => 1,
            Shape::Vector(_) => {
                return Err(Error::InvalidSignal("generator law must be matrix-valued".into()))
            }
        };
        if let Some(p) = &perturbation {
            p.envelope.validate()?;
            if p.matrix.shape() != (dim, dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.matrix.nrows(),
                });
            }
        }
        if weights.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: weights.dim(),
            });
        }
        Ok(Self {
            dim,
            law,
            perturbation,
            weights: Arc::new(weights),
            rescale: None,
        })
    }

    pub fn constant(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(
            TrigPolynomial::constant(Shape::Matrix(n), a)?,
            None,
            NormWeights::euclidean(n),
        )
    }

    /// Scalar family `a(t)` acting on `R^1`.
    pub fn scalar(a: TrigPolynomial) -> Result<Self> {
        let law = a.map_linear(Shape::Matrix(1), |c| c.clone())?;
        Self::new(law, None, NormWeights::euclidean(1))
    }

    pub fn with_weights(mut self, weights: NormWeights) -> Result<Self> {
        if weights.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: weights.dim(),
            });
        }
        self.weights = Arc::new(weights);
        Ok(self)
    }

    /// The view `t -> A(t / lambda)`. Rescaling replaces any previous one.
    pub fn rescaled(&self, lambda: f64) -> Self {
        Self {
            rescale: Some(lambda),
            ..self.clone()
        }
    }

    pub fn unscaled(&self) -> Self {
        Self {
            rescale: None,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn law(&self) -> &TrigPolynomial {
        &self.law
    }

    pub fn perturbation(&self) -> Option<&Perturbation> {
        self.perturbation.as_ref()
    }

    pub fn weights(&self) -> &NormWeights {
        &self.weights
    }

    pub(crate) fn weights_arc(&self) -> Arc<NormWeights> {
        Arc::clone(&self.weights)
    }

    pub fn rescale(&self) -> Option<f64> {
        self.rescale
    }

    fn local_time(&self, t: f64) -> f64 {
        match self.rescale {
            Some(l) => t / l,
            None => t,
        }
    }

    pub fn at(&self, t: f64) -> DMatrix<f64> {
        let tau = self.local_time(t);
        let mut a = self.law.eval(tau);
        if let Some(p) = &self.perturbation {
            a += &p.matrix * p.envelope.value(tau);
        }
        a
    }

    pub fn is_autonomous(&self) -> bool {
        self.law.is_constant()
            && self
                .perturbation
                .as_ref()
                .is_none_or(|p| !p.envelope.decays())
    }

    /// Largest frequency or decay rate of the unscaled law.
    pub fn max_rate(&self) -> f64 {
        let p = self
            .perturbation
            .as_ref()
            .map_or(0.0, |p| p.envelope.rate());
        self.law.max_frequency().max(p)
    }

    /// Largest step that resolves the fastest oscillation of this view:
    /// ten substeps per unit of `lambda / rate`. Unscaled families use
    /// `lambda = 1`.
    pub fn resolving_step(&self) -> f64 {
        resolving_step(self.max_rate(), self.rescale.unwrap_or(1.0))
    }

    /// Long-time mean of `A`: the frequency-0 coefficient, plus `B` when its
    /// envelope does not decay.
    pub fn mean(&self) -> DMatrix<f64> {
        let mut m = self.law.mean();
        if let Some(p) = &self.perturbation {
            if !p.envelope.decays() {
                m += &p.matrix;
            }
        }
        m
    }

    /// When `A(t) - a_hat = s(t) B0` for a single matrix `B0`, returns the
    /// scalar law `s` as a polynomial, the envelope weight of the
    /// perturbation part, and `B0`.
    pub(crate) fn rank_one_deviation(
        &self,
        a_hat: &DMatrix<f64>,
    ) -> Option<(TrigPolynomial, Option<(DecayEnvelope, f64)>, DMatrix<f64>)> {
        let mut parts: Vec<DMatrix<f64>> = Vec::new();
        for m in self.law.modes() {
            if m.freq == 0.0 {
                parts.push(&m.cos - a_hat);
            } else {
                parts.push(m.cos.clone());
                parts.push(m.sin.clone());
            }
        }
        if self.law.modes().iter().all(|m| m.freq != 0.0) {
            parts.push(-a_hat.clone());
        }
        if let Some(p) = &self.perturbation {
            parts.push(p.matrix.clone());
        }
        let base = parts.iter().find(|m| m.norm() > 0.0)?.clone();
        let bb = base.dot(&base);
        let coeff = |m: &DMatrix<f64>| -> Option<f64> {
            let c = m.dot(&base) / bb;
            let resid = (m - &base * c).norm();
            (resid <= 1e-12 * (1.0 + m.norm())).then_some(c)
        };
        let mut scalar_modes = Vec::new();
        let mut has_zero = false;
        for m in self.law.modes() {
            if m.freq == 0.0 {
                has_zero = true;
                scalar_modes.push((0.0, coeff(&(&m.cos - a_hat))?, 0.0));
            } else {
                scalar_modes.push((m.freq, coeff(&m.cos)?, coeff(&m.sin)?));
            }
        }
        if !has_zero {
            scalar_modes.push((0.0, coeff(&(-a_hat))?, 0.0));
        }
        let s = TrigPolynomial::scalar(&scalar_modes).ok()?;
        let pert = match &self.perturbation {
            Some(p) => Some((p.envelope, coeff(&p.matrix)?)),
            None => None,
        };
        Some((s, pert, base))
    }
}

pub fn resolving_step(rate: f64, lambda: f64) -> f64 {
    lambda / (10.0 * rate.max(1.0))
}

/// Smallest step count on an interval of length `duration` whose step
/// satisfies [`resolving_step`].
pub fn min_resolving_steps(duration: f64, rate: f64, lambda: f64) -> usize {
    let h = resolving_step(rate, lambda);
    // Guard against 10.000000000001 style rounding up.
    let k = duration / h;
    let r = k.round();
    if (k - r).abs() <= 1e-9 * r.max(1.0) {
        (r as usize).max(1)
    } else {
        (k.ceil() as usize).max(1)
    }
}
