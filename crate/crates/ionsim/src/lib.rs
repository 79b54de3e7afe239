//! Radial-mode physics of cold ion chains in a linear trap.
//!
//! The crate covers the path from classical crystal structure to few-body
//! quantum dynamics around the linear→zigzag transition:
//!
//! - [`units`]: constants, species, and the dimensionless unit system;
//! - [`crystal`]: equilibrium configurations, stability, structural thresholds;
//! - [`modes`]: quartic Taylor expansion, transverse normal modes, and the
//!   soft-mode (Landau) reduction;
//! - [`gaussian`]: harmonic ground-state covariances and single-site
//!   entanglement entropy, with the two- and three-ion closed forms;
//! - [`doublewell`]: 1D spectra, tunneling, localized states, sweeps and
//!   driven dynamics in the soft-mode double well;
//! - [`fewbody`]: the full three-ion quantum solver (quartic couplings
//!   included) and the decoupled soft-mode model;
//! - [`cli`]: config-driven experiment runner behind the `ionsim` binary.

pub mod crystal;
pub mod doublewell;
pub mod fewbody;
pub mod gaussian;
pub mod modes;
pub mod units;
pub mod cli;
