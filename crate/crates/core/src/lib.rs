//! Continuous-time ensemble Kalman inversion (EKI) for linear inverse problems,
//! with Tikhonov regularisation, variance inflation and data subsampling driven
//! by a continuous-time Markov index process.
//!
//! The crate is organised bottom-up:
//!
//! * [`problem`] – linear problems, data partitions, ensembles and their moments.
//! * [`regularization`] – Tikhonov-augmented operators and potentials.
//! * [`index_process`] – the subset index process (single and batch mode).
//! * [`dynamics`] – right-hand sides of the EKI flow variants.
//! * [`integrator`] – adaptive Dormand–Prince integration across index jumps.
//! * [`heat`] – the 1D heat-equation source problem and Karhunen–Loève sampling.
//! * [`reference`] – constrained Tikhonov reference solutions.
//! * [`diagnostics`] – errors, collapse, eigenvalue bounds and rate fits.
//! * [`runner`] – experiment configuration, presets and Monte-Carlo campaigns.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons also reject NaN

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod heat;
pub mod index_process;
pub mod integrator;
pub mod linalg;
pub mod problem;
pub mod reference;
pub mod regularization;
pub mod runner;

pub use error::{Error, Result};
