//! Qubit-probe homodyning of bosonic fields.
//!
//! A two-level probe is coupled to one or two field modes through a
//! Jaynes-Cummings-type interaction, its population is recorded as a function
//! of the dimensionless interaction time, and field moments (quadratures,
//! photon number, squeezing, two-mode correlations) are read off from
//! derivatives of that record at zero time.

// Parameter guards use the negated-comparison form on purpose: `!(x > 0.0)`
// rejects NaN along with the out-of-range values, `x <= 0.0` does not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod extraction;
pub mod evolution;
pub mod interactions;
pub mod opsalg;
pub mod oracle;
pub mod sampling;
pub mod scenario;
pub mod states;

pub use error::{QpError, Result};
