//! Numerical laboratory for one-particle channels carved out of a confined,
//! second-quantized Schrödinger field.
//!
//! The pipeline runs bottom-up:
//!
//! * [`lattice`] discretizes the confined one-body problem into normal modes
//!   and two-body matrix elements,
//! * [`fock`] enumerates a truncated Fock space, builds ladder operators and
//!   assembles the many-body Hamiltonian,
//! * [`channel`] builds unfed/fed channel states and reduces Fock-space
//!   observables and projection measures to the one-particle level,
//! * [`evolver`] propagates exactly and measures how far the extracted channel
//!   matrix drifts from the free phase law,
//! * [`gibbs`] fits generalized Gibbs states, evaluates Kubo correlations and
//!   builds the feeding matrix that seeds a channel.
//!
//! Units are ħ = m = 1 throughout.

pub mod cache;
pub mod channel;
pub mod config;
pub mod error;
pub mod evolver;
pub mod experiment;
pub mod fock;
pub mod gibbs;
pub mod lattice;
pub mod linalg;
pub mod output;
pub mod system;

pub use error::{Error, Result};

pub use num_complex::Complex64;
