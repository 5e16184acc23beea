//! Config-driven lambda sweeps, rate fits, hypothesis checks and reports.

mod checks;
mod config;
mod report;
mod sweep;

pub use checks::{
    average_summary, describe_map, perturbation_suite, run_checks, AverageSummary, CheckOutcome, CheckReports,
    H5Check, LemmaSumCheck, PerturbationCheck, PerturbationSample, StabilityCheck,
};
pub use config::{
    default_lambdas, CheckSpec, EnvelopeSpec, ForcingSpec, GeneratorSpec, GridSpec, MapKind, MatrixModeSpec,
    MatrixValue, OdeSpec, OutputSpec, PerturbationSpec, ProblemSpec, RunConfig, ScalarModeSpec, Setup, StepsSpec,
    SweepSpec, TermSpec, TransportSpec, WaveSpec, OUT_DIR_ENV,
};
pub use report::{emit_report, to_json, write_file, write_json, write_report_csv, CSV_HEADER};
pub use sweep::{
    fit_rate, plan_steps, run_sweep, solve_config, ConvergenceReport, LambdaRecord, RateFit, RecordStatus, StepPlan,
    SOLVER_FLOOR,
};

/// The benchmark configs shipped with the repository, by name.
pub const BUNDLED: [(&str, &str); 3] = [
    ("scalar-linear", include_str!("../../../../configs/scalar-linear.toml")),
    ("scalar-nonlinear", include_str!("../../../../configs/scalar-nonlinear.toml")),
    ("transport", include_str!("../../../../configs/transport.toml")),
];

pub fn bundled(name: &str) -> Option<RunConfig> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| RunConfig::from_toml_str(text).expect("bundled configs are valid"))
}
