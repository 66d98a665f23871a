//! Numerical laboratory for a degenerate parabolic eigenproblem posed on the
//! Gaussian-weighted upper half space.
//!
//! The crate studies self-similar profiles of an extension problem for a
//! nonlocal heat operator with an inverse-square (Hardy) boundary potential.
//! After the parabolic rescaling the profiles live in the space `L` of
//! functions on the upper half space `R^{N+1}_+` that are square integrable
//! against the weight `y^{1-2s} exp(-|z|^2/4)`, and the generator is an
//! Ornstein-Uhlenbeck type operator whose spectrum is built from two pieces:
//!
//! * an angular eigenproblem on the upper half sphere with the weight
//!   `theta_{N+1}^{1-2s}` and a Robin-type coupling of strength `mu` on the
//!   equator ([`spherical_spectrum`]);
//! * explicit radial factors `|z|^{-alpha} P(|z|^2/4)` with `P` a Kummer-type
//!   polynomial ([`ou_spectrum`], [`special_functions`]).
//!
//! On top of the spectrum the crate integrates the coefficient dynamics of a
//! perturbed backward evolution, tracks its Almgren-type frequency function,
//! and extracts vanishing orders and blow-up profiles ([`evolution`]).
//! Weighted Gaussian integrals are evaluated with Golub-Welsch quadrature
//! rules built on a symmetric tridiagonal eigensolver ([`quadrature`]), and
//! [`model`] holds the admissible parameter set `(N, s, mu)` together with
//! the perturbation family. The [`cli`] module wires everything into the
//! `hardyheat` binary.

pub mod cli;
pub mod evolution;
mod linalg;
pub mod model;
pub mod ou_spectrum;
pub mod quadrature;
pub mod special_functions;
pub mod spherical_spectrum;
