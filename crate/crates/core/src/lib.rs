//! Numerical laboratory for the renormalisation-group analysis of the
//! continuous-time weakly self-avoiding walk: lattice Green functions,
//! finite-range covariance decompositions, block/polymer geometry, a symbolic
//! boson/fermion form algebra with exact Gaussian integration, perturbative
//! flow equations, and an end-to-end critical two-point pipeline.

pub mod critical;
pub mod forms;
pub mod frd;
pub mod geometry;
pub mod lattice;
pub mod norms;
pub mod rg;
pub mod spectral;
pub mod walk;
