//! Averaging of semilinear evolution equations `u' = A(t/lambda) u + F(t/lambda, u)`.
//!
//! The crate builds evolution systems by the frozen-coefficient product
//! formula, solves mild-solution integral equations with an exponential
//! Euler scheme, computes averaged generators and nonlinearities, and
//! measures how fast oscillatory solutions approach the averaged one as
//! `lambda -> 0`.

pub mod averaging;
pub mod error;
pub mod evolution;
pub mod harness;
pub mod hyperbolic;
pub mod linalg;
pub mod mildsolve;
pub mod signals;

pub use error::{Error, Result};
pub use evolution::{
    certify_stability, matrix_exponential, product_evolution, EvolutionOperatorApprox,
    NormWeights, OperatorFamily, StabilityCertificate, StabilityEstimate,
};
pub use signals::{ApMap, ApTerm, DecayEnvelope, Mode, Shape, StateMap, TrigPolynomial};
