//! Mean-field analysis of wide random feedforward networks.
//!
//! Signal propagation through a deep net with iid Gaussian weights is
//! governed, at infinite width, by scalar recursions for the per-layer
//! activation variance and the correlation between two inputs. This crate
//! computes those recursion maps by Gaussian quadrature for a family of
//! saturating activations, locates critical initializations where the
//! correlation map has unit slope, evaluates closed-form bounds on the
//! behavior at criticality, and cross-checks everything against explicit
//! finite-width Monte Carlo simulation.

pub mod activation;
pub mod bounds;
pub mod error;
pub mod maps;
pub mod quadrature;
pub mod report;
pub mod sim;
pub mod spectrum;

pub use activation::{ActKind, Activation};
pub use error::{MfError, Result};
