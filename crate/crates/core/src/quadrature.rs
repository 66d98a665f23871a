//! Gaussian quadrature for the weighted integrals of the laboratory.
//!
//! Rules come in two families, both built by the Golub-Welsch procedure
//! from the three-term recurrence of the orthogonal polynomials: Jacobi
//! weights `(1-x)^alpha (1+x)^beta` on (-1,1) for angular factors, and
//! generalized Laguerre weights `t^a e^{-t}` on (0,inf) for the radial
//! Gaussian factors after the substitution `t = r^2/4`. Trace integrals
//! with perturbation factors, which break the pure Laguerre structure,
//! use graded composite Gauss-Legendre panels with an analytic tail bound.

use std::fmt;

use crate::linalg::{self, LinalgError};
use crate::model::ModelParams;
use crate::special_functions::{gamma_fn, SpecialFunctionError};

/// Default rule order for both weight families.
pub const DEFAULT_RULE_ORDER: usize = 64;

/// Panel count of the graded composite rule in trace integrals.
const TRACE_PANELS: usize = 40;

/// Errors from rule construction and the weighted integrators.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadratureError {
    /// The tridiagonal eigensolver exceeded its iteration cap.
    Convergence { index: usize },
    /// A rule or integral parameter lies outside the supported domain.
    InvalidParameter { what: &'static str, value: f64 },
    /// The declared singularity strength is not integrable.
    NonIntegrableSingularity { power: f64 },
    /// A gamma evaluation for the weight normalization failed.
    Gamma(SpecialFunctionError),
}

impl fmt::Display for QuadratureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuadratureError::Convergence { index } => {
                write!(f, "eigensolver did not converge at index {index}")
            }
            QuadratureError::InvalidParameter { what, value } => {
                write!(f, "invalid quadrature parameter {what} = {value}")
            }
            QuadratureError::NonIntegrableSingularity { power } => {
                write!(f, "integrand power {power} at the origin is not integrable")
            }
            QuadratureError::Gamma(e) => write!(f, "gamma evaluation failed: {e}"),
        }
    }
}

impl std::error::Error for QuadratureError {}

impl From<SpecialFunctionError> for QuadratureError {
    fn from(e: SpecialFunctionError) -> Self {
        QuadratureError::Gamma(e)
    }
}

impl From<LinalgError> for QuadratureError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Convergence { index } => QuadratureError::Convergence { index },
            LinalgError::NotPositiveDefinite { index } => QuadratureError::Convergence { index },
        }
    }
}

/// Weight function a rule integrates against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightKind {
    /// (1-x)^alpha (1+x)^beta on (-1,1).
    Jacobi { alpha: f64, beta: f64 },
    /// t^a e^{-t} on (0,inf).
    GeneralizedLaguerre { a: f64 },
}

/// Nodes and positive weights of a Gaussian rule, exact for polynomials
/// up to degree 2*order - 1 against the weight.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub weight_kind: WeightKind,
    pub order: usize,
}

impl QuadratureRule {
    /// Weighted sum over the nodes: approximates the integral of
    /// `f` times the weight function over the support interval.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Eigenvalues of a symmetric tridiagonal matrix, sorted ascending, with
/// the first component of each normalized eigenvector. These are exactly
/// the ingredients of the Golub-Welsch construction.
pub fn symtridiag_eigen(
    diagonal: &[f64],
    offdiagonal: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), QuadratureError> {
    assert_eq!(
        offdiagonal.len() + 1,
        diagonal.len(),
        "off-diagonal must be one entry shorter than the diagonal"
    );
    Ok(linalg::tridiagonal_eigen_first_components(diagonal, offdiagonal)?)
}

/// Gauss-Jacobi rule for the weight (1-x)^alpha (1+x)^beta on (-1,1).
pub fn gauss_jacobi_rule(order: usize, alpha: f64, beta: f64) -> Result<QuadratureRule, QuadratureError> {
    if order < 1 {
        return Err(QuadratureError::InvalidParameter {
            what: "jacobi order (must be at least 1)",
            value: order as f64,
        });
    }
    if alpha <= -1.0 {
        return Err(QuadratureError::InvalidParameter {
            what: "jacobi alpha (must exceed -1)",
            value: alpha,
        });
    }
    if beta <= -1.0 {
        return Err(QuadratureError::InvalidParameter {
            what: "jacobi beta (must exceed -1)",
            value: beta,
        });
    }
    let ab = alpha + beta;
    let mut diag = vec![0.0; order];
    diag[0] = (beta - alpha) / (ab + 2.0);
    for (k, d) in diag.iter_mut().enumerate().skip(1) {
        let kf = k as f64;
        *d = (beta * beta - alpha * alpha) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0));
    }
    let mut off = vec![0.0; order.saturating_sub(1)];
    for (k, o) in off.iter_mut().enumerate() {
        let kf = (k + 1) as f64;
        let sq = if k == 0 {
            4.0 * (alpha + 1.0) * (beta + 1.0) / ((ab + 2.0) * (ab + 2.0) * (ab + 3.0))
        } else {
            let den = 2.0 * kf + ab;
            4.0 * kf * (kf + alpha) * (kf + beta) * (kf + ab)
                / (den * den * (den + 1.0) * (den - 1.0))
        };
        *o = sq.sqrt();
    }
    let mu0 = 2f64.powf(ab + 1.0) * gamma_fn(alpha + 1.0)? * gamma_fn(beta + 1.0)?
        / gamma_fn(ab + 2.0)?;
    let (nodes, first) = symtridiag_eigen(&diag, &off)?;
    let weights = first.iter().map(|f| mu0 * f * f).collect();
    Ok(QuadratureRule {
        nodes,
        weights,
        weight_kind: WeightKind::Jacobi { alpha, beta },
        order,
    })
}

/// Gauss rule for the generalized Laguerre weight t^a e^{-t} on (0,inf).
pub fn gauss_laguerre_rule(order: usize, a: f64) -> Result<QuadratureRule, QuadratureError> {
    if order < 1 {
        return Err(QuadratureError::InvalidParameter {
            what: "laguerre order (must be at least 1)",
            value: order as f64,
        });
    }
    if a <= -1.0 {
        return Err(QuadratureError::InvalidParameter {
            what: "laguerre exponent (must exceed -1)",
            value: a,
        });
    }
    let diag: Vec<f64> = (0..order).map(|k| 2.0 * k as f64 + a + 1.0).collect();
    let off: Vec<f64> = (1..order)
        .map(|k| {
            let kf = k as f64;
            (kf * (kf + a)).sqrt()
        })
        .collect();
    let mu0 = gamma_fn(a + 1.0)?;
    let (nodes, first) = symtridiag_eigen(&diag, &off)?;
    let weights = first.iter().map(|f| mu0 * f * f).collect();
    Ok(QuadratureRule {
        nodes,
        weights,
        weight_kind: WeightKind::GeneralizedLaguerre { a },
        order,
    })
}

/// Weighted Gaussian integral over the upper half space of a separated
/// integrand `|z|^{-2 sigma} F(|z|^2/4) psi(z/|z|)` against
/// `y^{1-2s} e^{-|z|^2/4}`, with the angular factor pre-integrated by the
/// caller into `angular_value`.
///
/// In polar coordinates the radial factor becomes
/// `2^{N+1-2s-2 sigma} t^{(N-2s)/2 - sigma} e^{-t}` under `t = r^2/4`, so
/// the value is the generalized Gauss-Laguerre sum times the prefactor
/// and the angular factor. Exact whenever F is a polynomial of degree at
/// most 2*order - 1.
pub fn halfspace_gaussian_integral<F: Fn(f64) -> f64>(
    radial: F,
    angular_value: f64,
    params: &ModelParams,
    sigma: f64,
    order: usize,
) -> Result<f64, QuadratureError> {
    let a = params.half_deficit() - sigma;
    if a <= -1.0 {
        return Err(QuadratureError::InvalidParameter {
            what: "effective laguerre exponent (N-2s)/2 - sigma (must exceed -1)",
            value: a,
        });
    }
    let rule = gauss_laguerre_rule(order, a)?;
    let sum = rule.integrate(radial);
    let exponent = params.n_dim as f64 + 1.0 - 2.0 * params.s - 2.0 * sigma;
    Ok(2f64.powf(exponent) * sum * angular_value)
}

/// Trace integral `|S^{N-1}| int_0^inf radial(r) r^{N-1} e^{-r^2/4} dr`
/// by graded composite Gauss-Legendre on [0,R] plus an analytic tail
/// bound; R grows until the tail estimate drops below 1e-14 of the
/// partial sum.
///
/// `singular_power` declares the growth of `radial(r) r^{N-1}` at the
/// origin; values at or below -1 are rejected as non-integrable. Panels
/// accumulate toward 0 as `(i/P)^grading` to absorb that singularity.
pub fn trace_gaussian_integral<F: Fn(f64) -> f64>(
    radial: F,
    params: &ModelParams,
    singular_power: f64,
    order: usize,
    grading: f64,
) -> Result<f64, QuadratureError> {
    if singular_power <= -1.0 {
        return Err(QuadratureError::NonIntegrableSingularity {
            power: singular_power,
        });
    }
    if grading < 1.0 {
        return Err(QuadratureError::InvalidParameter {
            what: "grading exponent (must be at least 1)",
            value: grading,
        });
    }
    let n = params.n_dim as f64;
    let legendre = gauss_jacobi_rule(order, 0.0, 0.0)?;
    let integrand = |r: f64| radial(r) * r.powf(n - 1.0) * (-r * r / 4.0).exp();
    let sphere_area = 2.0 * std::f64::consts::PI.powf(n / 2.0) / gamma_fn(n / 2.0)?;
    let mut radius = 16.0;
    loop {
        let mut total = 0.0;
        for p in 0..TRACE_PANELS {
            let lo = radius * (p as f64 / TRACE_PANELS as f64).powf(grading);
            let hi = radius * ((p as f64 + 1.0) / TRACE_PANELS as f64).powf(grading);
            let mid = 0.5 * (hi + lo);
            let half = 0.5 * (hi - lo);
            total += half * legendre.integrate(|x| integrand(mid + half * x));
        }
        // beyond R the integrand is dominated by its Gaussian factor once
        // R^2/4 outruns the polynomial degree, so the remainder is below
        // the largest probed value times 4/R
        let probe = integrand(radius)
            .abs()
            .max(integrand(1.05 * radius).abs())
            .max(integrand(1.1 * radius).abs());
        let tail = probe * 4.0 / radius;
        if tail <= 1e-14 * total.abs().max(f64::MIN_POSITIVE) || radius >= 96.0 {
            return Ok(sphere_area * total);
        }
        radius *= 1.5;
    }
}
