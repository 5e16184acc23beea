use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evolution::{NormWeights, OperatorFamily, Perturbation};
use crate::hyperbolic::{discretize, forcing_as_map, GridField, TorusGrid, TransportCoefficients};
use crate::mildsolve::SemilinearProblem;
use crate::signals::{ApMap, ApTerm, DecayEnvelope, Mode, Shape, StateMap, TrigPolynomial};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "EVOAVG_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub checks: CheckSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Ode(OdeSpec),
    Transport(TransportSpec),
}

/// `u' = A(t) u + F(t, u)` in `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSpec {
    pub dim: usize,
    pub horizon: f64,
    pub initial: Vec<f64>,
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub nonlinearity: Vec<TermSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub modes: Vec<MatrixModeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
}

/// A number stands for that multiple of the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixValue {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixValue {
    fn to_matrix(&self, dim: usize, what: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixValue::Scalar(s) => Ok(DMatrix::identity(dim, dim) * *s),
            MatrixValue::Rows(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::Config(format!("{what} must be a {dim}x{dim} matrix")));
                }
                Ok(DMatrix::from_row_iterator(dim, dim, rows.iter().flatten().copied()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixModeSpec {
    pub freq: f64,
    pub cos: MatrixValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sin: Option<MatrixValue>,
}

fn matrix_poly(modes: &[MatrixModeSpec], dim: usize, what: &str) -> Result<TrigPolynomial> {
    let modes = modes
        .iter()
        .map(|m| {
            let sin = match &m.sin {
                Some(s) => s.to_matrix(dim, what)?,
                None => DMatrix::zeros(dim, dim),
            };
            Ok(Mode::new(m.freq, m.cos.to_matrix(dim, what)?, sin))
        })
        .collect::<Result<Vec<_>>>()?;
    TrigPolynomial::new(Shape::Matrix(dim), modes).map_err(|e| Error::Config(format!("{what}: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvelopeSpec {
    None,
    Exponential { rate: f64 },
    Algebraic { exponent: f64 },
}

impl EnvelopeSpec {
    fn to_envelope(self) -> Result<DecayEnvelope> {
        let env = match self {
            EnvelopeSpec::None => DecayEnvelope::None,
            EnvelopeSpec::Exponential { rate } => DecayEnvelope::Exponential { rate },
            EnvelopeSpec::Algebraic { exponent } => DecayEnvelope::Algebraic { exponent },
        };
        env.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(env)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub envelope: EnvelopeSpec,
    pub matrix: MatrixValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarModeSpec {
    pub freq: f64,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Identity,
    Linear,
    QuadraticDiagonal,
    BoundedSine,
    Constant,
}

/// One `weight(t) envelope(t) map(u)` term of the nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub map: MapKind,
    pub weight: Vec<ScalarModeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
}

impl TermSpec {
    fn to_term(&self, dim: usize) -> Result<ApTerm> {
        let modes: Vec<_> = self.weight.iter().map(|m| (m.freq, m.cos, m.sin)).collect();
        let weight = TrigPolynomial::scalar(&modes).map_err(|e| Error::Config(format!("weight: {e}")))?;
        let envelope = self.envelope.unwrap_or(EnvelopeSpec::None).to_envelope()?;
        let extra = |present: bool, key: &str| {
            if present {
                Err(Error::Config(format!("map {:?} takes no `{key}`", self.map)))
            } else {
                Ok(())
            }
        };
        let map = match self.map {
            MapKind::Linear => {
                extra(self.vector.is_some(), "vector")?;
                let m = self
                    .matrix
                    .as_ref()
                    .ok_or_else(|| Error::Config("linear map needs `matrix`".into()))?;
                StateMap::Linear(m.to_matrix(dim, "linear map")?)
            }
            MapKind::Constant => {
                extra(self.matrix.is_some(), "matrix")?;
                let v = self
                    .vector
                    .as_ref()
                    .ok_or_else(|| Error::Config("constant map needs `vector`".into()))?;
                if v.len() != dim {
                    return Err(Error::Config(format!("constant vector must have length {dim}")));
                }
                StateMap::Constant(DVector::from_column_slice(v))
            }
            kind => {
                extra(self.matrix.is_some(), "matrix")?;
                extra(self.vector.is_some(), "vector")?;
                match kind {
                    MapKind::Identity => StateMap::Identity,
                    MapKind::QuadraticDiagonal => StateMap::QuadraticDiagonal,
                    _ => StateMap::BoundedSine,
                }
            }
        };
        Ok(ApTerm::new(weight, envelope, map))
    }
}

/// `u_t = a(t) u_x + b(t) u + f(x, t)` on the periodic unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSpec {
    pub horizon: f64,
    pub grid: GridSpec,
    pub advection: Vec<MatrixModeSpec>,
    #[serde(default)]
    pub reaction: Vec<MatrixModeSpec>,
    #[serde(default)]
    pub forcing: Vec<ForcingSpec>,
    pub initial: Vec<WaveSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub points: usize,
    #[serde(default = "one")]
    pub components: usize,
}

fn one() -> usize {
    1
}

/// `cos * cos(2 pi wave x) + sin * sin(2 pi wave x)` in one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSpec {
    #[serde(default)]
    pub component: usize,
    pub wave: u32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl WaveSpec {
    fn value(&self, x: f64) -> f64 {
        let p = TAU * self.wave as f64 * x;
        self.cos * p.cos() + self.sin * p.sin()
    }
}

/// `(cos cos(freq t) + sin sin(freq t)) g(x)` in one component, with `g`
/// the sum of the profile waves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingSpec {
    pub freq: f64,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
    #[serde(default)]
    pub component: usize,
    pub profile: Vec<WaveSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepsSpec {
    Fixed(usize),
    Named(String),
}

impl Default for StepsSpec {
    fn default() -> Self {
        StepsSpec::Named("auto".into())
    }
}

impl StepsSpec {
    pub fn fixed(&self) -> Option<usize> {
        match self {
            StepsSpec::Fixed(k) => Some(*k),
            StepsSpec::Named(_) => None,
        }
    }
}

pub fn default_lambdas() -> Vec<f64> {
    (3..=8).map(|k| 2f64.powi(-k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    /// Steps of the averaged solve; oscillatory solves use a multiple.
    #[serde(default)]
    pub steps: StepsSpec,
    /// Extra refinement of every oscillatory solve beyond the resolution rule.
    #[serde(default = "one")]
    pub oversample: usize,
    /// Added to every component of the oscillatory initial state.
    #[serde(default)]
    pub initial_offset: f64,
    /// When set, each oscillatory solve is repeated with this many times
    /// more steps and its error recorded alongside.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<usize>,
    #[serde(default = "default_curve_points")]
    pub curve_points: usize,
}

fn default_curve_points() -> usize {
    65
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            lambdas: default_lambdas(),
            steps: StepsSpec::default(),
            oversample: 1,
            initial_offset: 0.0,
            refine: None,
            curve_points: default_curve_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    #[serde(default)]
    pub stability: bool,
    #[serde(default)]
    pub cesaro: bool,
    #[serde(default)]
    pub h5: bool,
    #[serde(default)]
    pub lemma_sum: bool,
    #[serde(default)]
    pub perturbation: bool,
    #[serde(default = "default_cesaro_tolerance")]
    pub cesaro_tolerance: f64,
    #[serde(default = "default_cesaro_horizons")]
    pub cesaro_horizons: Vec<f64>,
    #[serde(default = "default_h5_points")]
    pub h5_grid_points: usize,
    #[serde(default = "default_perturbation_samples")]
    pub perturbation_samples: usize,
}

fn default_cesaro_tolerance() -> f64 {
    1e-2
}

fn default_cesaro_horizons() -> Vec<f64> {
    vec![10.0, 100.0, 1000.0]
}

fn default_h5_points() -> usize {
    11
}

fn default_perturbation_samples() -> usize {
    8
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            stability: false,
            cesaro: false,
            h5: false,
            lemma_sum: false,
            perturbation: false,
            cesaro_tolerance: default_cesaro_tolerance(),
            cesaro_horizons: default_cesaro_horizons(),
            h5_grid_points: default_h5_points(),
            perturbation_samples: default_perturbation_samples(),
        }
    }
}

impl CheckSpec {
    pub fn all(&self) -> Self {
        Self {
            stability: true,
            cesaro: true,
            h5: true,
            lemma_sum: true,
            perturbation: true,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_json")]
    pub json: String,
    #[serde(default = "default_trajectory")]
    pub trajectory: String,
    #[serde(default = "default_checks_json")]
    pub checks: String,
    /// Record wall-clock times; reports are then no longer reproducible.
    #[serde(default)]
    pub timing: bool,
}

fn default_csv() -> String {
    "sweep.csv".into()
}

fn default_json() -> String {
    "sweep.json".into()
}

fn default_trajectory() -> String {
    "trajectory.csv".into()
}

fn default_checks_json() -> String {
    "checks.json".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            csv: default_csv(),
            json: default_json(),
            trajectory: default_trajectory(),
            checks: default_checks_json(),
            timing: false,
        }
    }
}

impl OutputSpec {
    /// Config value, else the environment default, else the working directory.
    pub fn resolved_dir(&self) -> PathBuf {
        self.dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

/// The assembled problem plus what the transport oracle needs.
#[derive(Debug, Clone)]
pub struct Setup {
    pub problem: SemilinearProblem,
    pub transport: Option<(TorusGrid, TransportCoefficients)>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn horizon(&self) -> f64 {
        match &self.problem {
            ProblemSpec::Ode(o) => o.horizon,
            ProblemSpec::Transport(t) => t.horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let l = &self.sweep.lambdas;
        if l.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) {
            return bad("lambdas must lie in (0, 1]".into());
        }
        if l.windows(2).any(|w| w[1] >= w[0]) {
            return bad("lambdas must be strictly descending".into());
        }
        let t = self.horizon();
        if !(t > 0.0 && t.is_finite()) {
            return bad(format!("horizon {t} must be positive"));
        }
        match &self.sweep.steps {
            StepsSpec::Named(s) if s != "auto" => return bad(format!("steps must be \"auto\" or a count, got {s:?}")),
            StepsSpec::Fixed(0) => return bad("steps must be positive".into()),
            _ => {}
        }
        if self.sweep.oversample == 0 || self.sweep.refine == Some(0) {
            return bad("oversample and refine must be positive".into());
        }
        if self.sweep.curve_points < 2 {
            return bad("curve_points must be at least 2".into());
        }
        if !self.sweep.initial_offset.is_finite() {
            return bad("initial_offset must be finite".into());
        }
        let c = &self.checks;
        if !(c.cesaro_tolerance > 0.0) || c.cesaro_horizons.is_empty() {
            return bad("cesaro check needs a positive tolerance and horizons".into());
        }
        if c.cesaro_horizons.iter().any(|h| !(*h > 0.0)) || c.cesaro_horizons.windows(2).any(|w| w[1] <= w[0]) {
            return bad("cesaro horizons must be positive and increasing".into());
        }
        if c.h5_grid_points < 2 {
            return bad("h5_grid_points must be at least 2".into());
        }
        // Assembly catches shape and signal errors.
        self.build().map(|_| ())
    }

    pub fn build(&self) -> Result<Setup> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        match &self.problem {
            ProblemSpec::Ode(o) => {
                if o.dim == 0 {
                    return Err(Error::Config("dim must be positive".into()));
                }
                if o.initial.len() != o.dim {
                    return Err(Error::Config(format!("initial must have length {}", o.dim)));
                }
                let law = matrix_poly(&o.generator.modes, o.dim, "generator")?;
                let perturbation = match &o.generator.perturbation {
                    Some(p) => Some(Perturbation {
                        envelope: p.envelope.to_envelope()?,
                        matrix: p.matrix.to_matrix(o.dim, "perturbation")?,
                    }),
                    None => None,
                };
                let fam = OperatorFamily::new(law, perturbation, NormWeights::euclidean(o.dim)).map_err(cfg_err)?;
                let terms = o.nonlinearity.iter().map(|t| t.to_term(o.dim)).collect::<Result<Vec<_>>>()?;
                let map = ApMap::new(o.dim, terms).map_err(cfg_err)?;
                let u0 = DVector::from_column_slice(&o.initial);
                let problem = SemilinearProblem::new(fam, map, u0, o.horizon, None).map_err(cfg_err)?;
                Ok(Setup { problem, transport: None })
            }
            ProblemSpec::Transport(t) => {
                let grid = TorusGrid::new(t.grid.points, t.grid.components).map_err(cfg_err)?;
                let m = grid.components();
                let comp_ok = |c: usize| {
                    if c < m {
                        Ok(())
                    } else {
                        Err(Error::Config(format!("component {c} out of range for {m} components")))
                    }
                };
                let a = matrix_poly(&t.advection, m, "advection")?;
                let b = matrix_poly(&t.reaction, m, "reaction")?;
                let f = if t.forcing.is_empty() {
                    GridField::Uniform(TrigPolynomial::zero(Shape::Vector(m)))
                } else {
                    let mut per_point = Vec::with_capacity(grid.points());
                    for i in 0..grid.points() {
                        let x = grid.node(i);
                        let mut acc = TrigPolynomial::zero(Shape::Vector(m));
                        for fs in &t.forcing {
                            comp_ok(fs.component)?;
                            let g: f64 = fs
                                .profile
                                .iter()
                                .map(|w| w.value(x))
                                .sum();
                            let mut cos = DMatrix::zeros(m, 1);
                            let mut sin = DMatrix::zeros(m, 1);
                            cos[fs.component] = fs.cos * g;
                            sin[fs.component] = fs.sin * g;
                            let p = TrigPolynomial::new(Shape::Vector(m), vec![Mode::new(fs.freq, cos, sin)])
                                .map_err(|e| Error::Config(format!("forcing: {e}")))?;
                            acc = acc.add(&p).map_err(cfg_err)?;
                        }
                        per_point.push(acc);
                    }
                    GridField::PerPoint(per_point)
                };
                let coeffs = TransportCoefficients {
                    a: GridField::Uniform(a),
                    b: GridField::Uniform(b),
                    f,
                };
                let fam = discretize(&coeffs, &grid).map_err(cfg_err)?;
                let map = forcing_as_map(&coeffs, &grid).map_err(cfg_err)?;
                let mut u0 = DVector::zeros(grid.dim());
                for w in &t.initial {
                    comp_ok(w.component)?;
                    for i in 0..grid.points() {
                        u0[i * m + w.component] += w.value(grid.node(i));
                    }
                }
                let problem = SemilinearProblem::new(fam, map, u0, t.horizon, None).map_err(cfg_err)?;
                Ok(Setup { problem, transport: Some((grid, coeffs)) })
            }
        }
    }

    /// Digest of everything that determines the computed numbers.
    pub fn fingerprint(&self) -> String {
        let payload = serde_json::to_string(&(&self.seed, &self.problem, &self.sweep, &self.checks))
            .expect("config serializes");
        let digest = Sha256::digest(payload.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
