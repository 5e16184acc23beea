//! Linear evolution systems built from frozen-coefficient products,
//! with growth-bound certification and the averaging checks on them.

mod checks;
mod expm;
mod family;
mod product;
mod stability;

pub use checks::{
    check_linear_averaging, perturbation_gap, LinearAveragingRecord, PerturbationConstants,
    PerturbationGap,
};
pub use expm::matrix_exponential;
pub use family::{
    min_resolving_steps, resolving_step, NormWeights, OperatorFamily, Perturbation, WeightKind,
};
pub use product::{apply_evolution, product_evolution, EvolutionOperatorApprox};
pub use stability::{
    certify_stability, CertificationGrid, StabilityCertificate, StabilityEstimate, CERT_EPS,
};

pub(crate) use product::for_each_factor;
