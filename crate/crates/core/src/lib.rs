//! Certificates of enriched weak contractivity for Lipschitz operators under
//! diagonally weighted ℓ∞ norms, together with the step-size plans they imply
//! for the Krasnoselskij iteration and the forward-step method.
//!
//! The crate is organized bottom-up:
//!
//! - [`matnorm`]: dense matrices, weights, majorants, weighted norms and the
//!   Perron root of nonnegative matrices.
//! - [`operators`] and [`envelope`]: operator models and finite descriptions
//!   of their Jacobian sets.
//! - [`certify`]: feasibility certificates, weight search and rate optimization.
//! - [`iterate`]: Krasnoselskij and forward-step engines with traces.
//! - [`consensus`]: nonlinear consensus on digraphs.
//! - [`catalog`]: fixed reference instances used by the experiments.

// negated comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod certify;
pub mod consensus;
pub mod envelope;
pub mod error;
pub mod iterate;
pub mod matnorm;
pub mod operators;

pub use certify::{
    check_contractive, check_ewc, check_order_preserving, check_strong_monotone,
    check_subhomogeneous, check_weak_contractive, find_weight, krasnoselskij_plan, min_b,
    monotone_baseline_plan, optimize_rate, EwcCertificate, PlanSource, StepSizePlan, WeightMode,
};
pub use envelope::JacobianEnvelope;
pub use error::{Error, Result};
pub use iterate::{forward_step, krasnoselskij, IterationConfig, IterationTrace};
pub use matnorm::{Matrix, PerronResult, PositiveWeight};
pub use operators::{Activation, AffineOp, DiagNonlinAffineOp, Operator, OperatorModel};
