//! Hamiltonian flows, action variables, circle-invariance and reduction of
//! systems built from rotation-invariant blocks.

mod action;
mod experiment;
mod integrate;
mod reduce;

use thiserror::Error;

use crate::expr::ExprError;
use crate::singularity::SingularityError;
use crate::symplectic::SymplecticError;

pub use action::{action_variable_1dof, ActionConfig, ActionReport};
pub use experiment::{
    degenerate_rigidity_experiment, revalidate, Evidence, EvidenceCheck, ExperimentConfig, ExperimentReport, Revalidated,
    Revalidation, Verdict,
};
pub use integrate::{conserved_along_flow, symplectic_integrate, ConservationReport, Trajectory};
pub use reduce::{
    radial_profile, s1_invariance_check, s1_reduce, FittedFunction, InvarianceReport, ProfileConfig, RadialProfile,
    ReduceConfig, ReducedSystem, S1Config,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Symplectic(#[from] SymplecticError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Singularity(#[from] SingularityError),
    #[error("invalid integration request: {0}")]
    InvalidStep(String),
    #[error("implicit midpoint iteration diverged at step {step} (t = {t}); reduce dt")]
    FixedPointDivergence { step: usize, t: f64 },
    #[error("level curve did not close within {steps} steps")]
    NonCompactLevel { steps: usize },
    #[error("level {level} is critical or too close to a critical value (|grad f| = {gradient:.3e})")]
    CriticalLevel { level: f64, gradient: f64 },
    #[error("no point of the level {level} found along the ray")]
    LevelNotFound { level: f64 },
    #[error("function is not a radial profile: validation residual {residual:.3e} exceeds {bound:.3e}")]
    NotInvariant { residual: f64, bound: f64 },
    #[error("component {component} is not invariant under rotations of block {block} (residual {residual:.3e})")]
    NotReducible { component: usize, block: usize, residual: f64 },
}
