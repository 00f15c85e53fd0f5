//! Stability experiments for potentials and maps under perturbations of the
//! target, with the auxiliary one-dimensional inequalities.

pub mod checks1d;
pub mod experiments;
pub mod theory;

pub use experiments::{
    ambrosio_gigli_check, p_lambda_concavity_check, perturbation_family, run_map_stability,
    run_potential_stability, run_stability, FamilyKind, FamilySpec, Provenance, StabilityKind,
    StabilityOptions, StabilityRecord, StabilityReport, CSV_HEADER,
};
pub use theory::{fit_power_law, h_beta_sup, theta_maps, theta_potentials, ExponentFit};
