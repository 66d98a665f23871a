//! Spectrum and eigenbasis of the weighted Ornstein-Uhlenbeck operator.
//!
//! Each angular mode (nu_j, f_j) of the half-sphere problem spawns a
//! ladder of eigenfunctions
//!
//! ```text
//!   Y_{n,j}(z) = |z|^{-alpha_j} P_{j,n}(|z|^2/4) f_j(phi) (harmonic),
//!   alpha_j = (N-2s)/2 - sqrt(((N-2s)/2)^2 + nu_j),
//!   gamma_{n,j} = n - alpha_j/2,
//! ```
//!
//! where P_{j,n} is the degree-n generalized Laguerre polynomial
//! normalized to P(0)=1. This module builds the truncated table,
//! normalizes it in the Gaussian space, and verifies the claimed
//! orthonormality, eigenvalue identities, coercivity, and functional
//! inequalities by quadrature. Every bilinear quantity on the span
//! separates into an exactly-integrable radial Laguerre factor and a
//! discrete angular bilinear from the sector matrices.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::linalg::{self, LinalgError};
use crate::model::ModelParams;
use crate::quadrature::{
    gauss_laguerre_rule, halfspace_gaussian_integral, QuadratureError, QuadratureRule,
    DEFAULT_RULE_ORDER,
};
use crate::special_functions::{gamma_fn, p_poly, p_poly_deriv, SpecialFunctionError};
use crate::spherical_spectrum::{
    assemble_sector, AngularMode, SectorProblem, SpectrumError, TridiagonalMatrix,
};

/// Absolute tolerance under which two eigenvalues gamma share a group.
pub const GAMMA_TIE_TOLERANCE: f64 = 1e-8;

/// Errors from table construction and the quadrature checks.
#[derive(Debug, Clone, PartialEq)]
pub enum OUSpectrumError {
    /// A parameter left its admissible range.
    Domain { what: &'static str, value: f64 },
    /// Evaluation at the origin of a mode that is unbounded there.
    SingularOrigin,
    /// Two basis elements of one sector carry different meshes.
    MeshMismatch,
    /// A gamma evaluation failed.
    Gamma(SpecialFunctionError),
    /// A quadrature rule could not be built.
    Quadrature(QuadratureError),
    /// Reassembling sector forms failed.
    Sector(SpectrumError),
    /// The dense eigensolver did not converge.
    Convergence { index: usize },
}

impl fmt::Display for OUSpectrumError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OUSpectrumError::Domain { what, value } => {
                write!(f, "parameter out of range: {what} = {value}")
            }
            OUSpectrumError::SingularOrigin => {
                write!(f, "eigenfunction with positive exponent is unbounded at the origin")
            }
            OUSpectrumError::MeshMismatch => {
                write!(f, "basis elements of one sector carry different meshes")
            }
            OUSpectrumError::Gamma(e) => write!(f, "gamma evaluation failed: {e}"),
            OUSpectrumError::Quadrature(e) => write!(f, "quadrature failed: {e}"),
            OUSpectrumError::Sector(e) => write!(f, "sector assembly failed: {e}"),
            OUSpectrumError::Convergence { index } => {
                write!(f, "eigensolver did not converge at index {index}")
            }
        }
    }
}

impl std::error::Error for OUSpectrumError {}

impl From<SpecialFunctionError> for OUSpectrumError {
    fn from(e: SpecialFunctionError) -> Self {
        OUSpectrumError::Gamma(e)
    }
}

impl From<QuadratureError> for OUSpectrumError {
    fn from(e: QuadratureError) -> Self {
        OUSpectrumError::Quadrature(e)
    }
}

impl From<SpectrumError> for OUSpectrumError {
    fn from(e: SpectrumError) -> Self {
        OUSpectrumError::Sector(e)
    }
}

impl From<LinalgError> for OUSpectrumError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Convergence { index } => OUSpectrumError::Convergence { index },
            LinalgError::NotPositiveDefinite { index } => OUSpectrumError::Convergence { index },
        }
    }
}

/// One normalized eigenfunction of the weighted operator.
#[derive(Debug, Clone)]
pub struct OUBasisElement {
    /// Radial polynomial degree.
    pub n: u32,
    /// Angular index, the global rank of the underlying mode.
    pub j: usize,
    /// Radial exponent, `(N-2s)/2 - a_j`.
    pub alpha_j: f64,
    /// Laguerre parameter, `sqrt(((N-2s)/2)^2 + nu_j)`.
    pub a_j: f64,
    /// Eigenvalue, `n - alpha_j/2`.
    pub gamma: f64,
    /// Gaussian-space norm of the unnormalized eigenfunction.
    pub norm_const: f64,
    /// The angular mode this element is built on.
    pub angular: AngularMode,
}

/// Truncated eigenbasis, sorted ascending by eigenvalue and grouped
/// into tie classes.
#[derive(Debug, Clone)]
pub struct SpectrumTable {
    pub elements: Vec<OUBasisElement>,
    /// Partition of element indices into eigenvalue classes.
    pub groups: Vec<Vec<usize>>,
    pub params: ModelParams,
}

/// Flat JSON record of one basis element.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisRecord {
    pub n: u32,
    pub j: usize,
    pub l: u32,
    pub nu: f64,
    pub alpha: f64,
    pub a: f64,
    pub gamma: f64,
    pub norm_const: f64,
    pub equator_trace: f64,
}

impl SpectrumTable {
    pub fn records(&self) -> Vec<BasisRecord> {
        self.elements
            .iter()
            .map(|e| BasisRecord {
                n: e.n,
                j: e.j,
                l: e.angular.l,
                nu: e.angular.nu,
                alpha: e.alpha_j,
                a: e.a_j,
                gamma: e.gamma,
                norm_const: e.norm_const,
                equator_trace: e.angular.equator_trace,
            })
            .collect()
    }
}

/// Radial exponent of the mode with angular eigenvalue `nu`.
pub fn alpha_exponent(nu: f64, params: &ModelParams) -> Result<f64, OUSpectrumError> {
    let half = params.half_deficit();
    let radicand = half * half + nu;
    if radicand <= 0.0 {
        return Err(OUSpectrumError::Domain {
            what: "angular eigenvalue at or below -((N-2s)/2)^2",
            value: nu,
        });
    }
    Ok(half - radicand.sqrt())
}

/// Gaussian-space norm of the unnormalized eigenfunction: the closed
/// form `[2^{N+1-2s-2 alpha} binom(n+a,n)^{-2} Gamma(n+a+1)/n!]^{1/2}`,
/// evaluated through the cancellation-free product
/// `2^{N+1-2s-2 alpha} Gamma(a+1) prod_{i=1..n} i/(a+i)`.
pub fn normalization_constant(
    n: u32,
    a_j: f64,
    alpha_j: f64,
    params: &ModelParams,
) -> Result<f64, OUSpectrumError> {
    if a_j <= -1.0 {
        return Err(OUSpectrumError::Domain {
            what: "laguerre parameter must exceed -1",
            value: a_j,
        });
    }
    let exponent = params.n_dim as f64 + 1.0 - 2.0 * params.s - 2.0 * alpha_j;
    let mut product = gamma_fn(a_j + 1.0)?;
    for i in 1..=n {
        product *= i as f64 / (a_j + i as f64);
    }
    Ok((2f64.powf(exponent) * product).sqrt())
}

/// Builds the truncated table over all pairs (n, mode) with n <= n_max,
/// sorted ascending by eigenvalue and grouped by the tie tolerance.
pub fn build_spectrum(
    modes: &[AngularMode],
    n_max: u32,
    params: &ModelParams,
) -> Result<SpectrumTable, OUSpectrumError> {
    assert!(!modes.is_empty(), "at least one angular mode is required");
    let mut elements = Vec::with_capacity(modes.len() * (n_max as usize + 1));
    for mode in modes {
        let alpha_j = alpha_exponent(mode.nu, params)?;
        let a_j = params.half_deficit() - alpha_j;
        for n in 0..=n_max {
            let norm_const = normalization_constant(n, a_j, alpha_j, params)?;
            elements.push(OUBasisElement {
                n,
                j: mode.index_k,
                alpha_j,
                a_j,
                gamma: n as f64 - alpha_j / 2.0,
                norm_const,
                angular: mode.clone(),
            });
        }
    }
    elements.sort_by(|p, q| {
        p.gamma
            .total_cmp(&q.gamma)
            .then(p.j.cmp(&q.j))
            .then(p.n.cmp(&q.n))
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, element) in elements.iter().enumerate() {
        match groups.last_mut() {
            Some(group)
                if (element.gamma - elements[group[0]].gamma).abs() <= GAMMA_TIE_TOLERANCE =>
            {
                group.push(i);
            }
            _ => groups.push(vec![i]),
        }
    }
    Ok(SpectrumTable {
        elements,
        groups,
        params: params.clone(),
    })
}

/// Kummer denominator parameter of the radial polynomial: a_j + 1.
fn radial_b_param(element: &OUBasisElement) -> f64 {
    element.a_j + 1.0
}

/// Value of the normalized eigenfunction at radius r and polar angle
/// phi within the mode's sector (the unit-normalized harmonic factor
/// is not included). The angular profile is interpolated linearly on
/// its mesh.
pub fn eval_eigenfunction(
    element: &OUBasisElement,
    r: f64,
    phi: f64,
) -> Result<f64, OUSpectrumError> {
    if r < 0.0 {
        return Err(OUSpectrumError::Domain {
            what: "radius must be nonnegative",
            value: r,
        });
    }
    if r == 0.0 && element.alpha_j > 0.0 {
        return Err(OUSpectrumError::SingularOrigin);
    }
    let mesh = &element.angular.mesh;
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&phi) {
        return Err(OUSpectrumError::Domain {
            what: "polar angle must lie in [0, pi/2]",
            value: phi,
        });
    }
    let f_phi = interpolate(mesh, &element.angular.f_values, phi);
    let radial = if r == 0.0 && element.alpha_j == 0.0 {
        p_poly(element.n, radial_b_param(element), 0.0)
    } else {
        r.powf(-element.alpha_j) * p_poly(element.n, radial_b_param(element), r * r / 4.0)
    };
    Ok(radial * f_phi / element.norm_const)
}

fn interpolate(mesh: &[f64], values: &[f64], phi: f64) -> f64 {
    let seg = match mesh.binary_search_by(|m| m.total_cmp(&phi)) {
        Ok(i) => return values[i],
        Err(i) => i.clamp(1, mesh.len() - 1),
    };
    let (lo, hi) = (mesh[seg - 1], mesh[seg]);
    let t = (phi - lo) / (hi - lo);
    values[seg - 1] * (1.0 - t) + values[seg] * t
}

/// Discrete angular forms of one sector: the mass matrix and the
/// coupling-free stiffness (gradient plus harmonic potential).
struct SectorData {
    mesh: Vec<f64>,
    mass: TridiagonalMatrix,
    stiffness_free: TridiagonalMatrix,
    free: usize,
}

/// Cache of sector forms keyed by harmonic degree.
struct SectorForms {
    params_free: ModelParams,
    map: BTreeMap<u32, SectorData>,
}

impl SectorForms {
    fn new(params: &ModelParams) -> Result<Self, OUSpectrumError> {
        let params_free = ModelParams::new(params.n_dim, params.s, 0.0, Some(params.mu_margin))
            .map_err(|_| OUSpectrumError::Domain {
                what: "model parameters rejected at mu = 0",
                value: 0.0,
            })?;
        Ok(SectorForms {
            params_free,
            map: BTreeMap::new(),
        })
    }

    fn get(&mut self, mode: &AngularMode) -> Result<&SectorData, OUSpectrumError> {
        if let Some(existing) = self.map.get(&mode.l) {
            if existing.mesh != mode.mesh {
                return Err(OUSpectrumError::MeshMismatch);
            }
        } else {
            let problem =
                SectorProblem::new(self.params_free.clone(), mode.l, mode.mesh.clone())?;
            let (stiffness_free, mass) = assemble_sector(&problem)?;
            let free = stiffness_free.dim();
            self.map.insert(
                mode.l,
                SectorData {
                    mesh: mode.mesh.clone(),
                    mass,
                    stiffness_free,
                    free,
                },
            );
        }
        Ok(&self.map[&mode.l])
    }

    /// Angular mass and stiffness bilinears of two same-sector modes.
    fn angular_bilinears(
        &mut self,
        a: &AngularMode,
        b: &AngularMode,
    ) -> Result<(f64, f64), OUSpectrumError> {
        let data = self.get(a)?;
        if b.mesh != data.mesh {
            return Err(OUSpectrumError::MeshMismatch);
        }
        let fa = &a.f_values[..data.free];
        let fb = &b.f_values[..data.free];
        Ok((data.mass.bilinear(fa, fb), data.stiffness_free.bilinear(fa, fb)))
    }
}

/// The six Gaussian bilinear forms on the span of a table, as dense
/// symmetric matrices in the normalized basis.
#[derive(Debug, Clone)]
pub struct GaussianForms {
    /// Plain weighted mass (the Gram matrix of the basis).
    pub mass: Vec<Vec<f64>>,
    /// Full weighted Dirichlet form of the gradient.
    pub gradient: Vec<Vec<f64>>,
    /// Mass against the singular weight `|z|^{-2}`.
    pub hardy: Vec<Vec<f64>>,
    /// Mass against the growing weight `|z|^2`.
    pub moment: Vec<Vec<f64>>,
    /// Boundary trace mass against `|x|^{-2s}`.
    pub trace_hardy: Vec<Vec<f64>>,
    /// Plain boundary trace mass.
    pub trace_plain: Vec<Vec<f64>>,
}

/// Quadratic form c^T M c.
pub fn quadratic_form(matrix: &[Vec<f64>], c: &[f64]) -> f64 {
    matrix
        .iter()
        .zip(c)
        .map(|(row, &ci)| ci * row.iter().zip(c).map(|(&m, &cj)| m * cj).sum::<f64>())
        .sum()
}

/// Laguerre rules shared by every radial integral of one mode pair.
struct RadialRules {
    mass: QuadratureRule,
    moment: QuadratureRule,
    shifted: QuadratureRule,
    trace_plain: QuadratureRule,
}

/// Radial weighted integral in the separated convention: the weight
/// `|z|^{-2 sigma}` against the Gaussian produces the prefactor
/// `2^{N+1-2s-2 sigma}` on the Laguerre sum, exactly as in
/// [`halfspace_gaussian_integral`].
fn radial_integral<F: Fn(f64) -> f64>(
    rule: &QuadratureRule,
    sigma: f64,
    params: &ModelParams,
    f: F,
) -> f64 {
    let exponent = params.n_dim as f64 + 1.0 - 2.0 * params.s - 2.0 * sigma;
    2f64.powf(exponent) * rule.integrate(f)
}

/// Assembles all six forms over the table span by quadrature.
pub fn assemble_gaussian_forms(
    table: &SpectrumTable,
    order: usize,
) -> Result<GaussianForms, OUSpectrumError> {
    let params = &table.params;
    let n_els = table.elements.len();
    let mut sectors = SectorForms::new(params)?;
    let mut rules: BTreeMap<(usize, usize), RadialRules> = BTreeMap::new();
    let zero = vec![vec![0.0; n_els]; n_els];
    let mut forms = GaussianForms {
        mass: zero.clone(),
        gradient: zero.clone(),
        hardy: zero.clone(),
        moment: zero.clone(),
        trace_hardy: zero.clone(),
        trace_plain: zero,
    };
    for ia in 0..n_els {
        for ib in ia..n_els {
            let (ea, eb) = (&table.elements[ia], &table.elements[ib]);
            if ea.angular.l != eb.angular.l {
                continue;
            }
            let key = (ea.j.min(eb.j), ea.j.max(eb.j));
            if !rules.contains_key(&key) {
                let alpha_bar = (ea.alpha_j + eb.alpha_j) / 2.0;
                let base = params.half_deficit() - alpha_bar;
                rules.insert(
                    key,
                    RadialRules {
                        mass: gauss_laguerre_rule(order, base)?,
                        moment: gauss_laguerre_rule(order, base + 1.0)?,
                        shifted: gauss_laguerre_rule(order, base - 1.0)?,
                        trace_plain: gauss_laguerre_rule(order, base - 1.0 + params.s)?,
                    },
                );
            }
            let pair_rules = &rules[&key];
            let alpha_bar = (ea.alpha_j + eb.alpha_j) / 2.0;
            let (b_a, b_b) = (radial_b_param(ea), radial_b_param(eb));
            let (na, nb) = (ea.n, eb.n);
            let pp = |t: f64| p_poly(na, b_a, t) * p_poly(nb, b_b, t);
            let qq = |t: f64| {
                let qa = 2.0 * t * p_poly_deriv(na, b_a, t) - ea.alpha_j * p_poly(na, b_a, t);
                let qb = 2.0 * t * p_poly_deriv(nb, b_b, t) - eb.alpha_j * p_poly(nb, b_b, t);
                qa * qb
            };
            let (ang_mass, ang_stiff) = sectors.angular_bilinears(&ea.angular, &eb.angular)?;
            let scale = 1.0 / (ea.norm_const * eb.norm_const);
            let i_mass = radial_integral(&pair_rules.mass, alpha_bar, params, pp);
            let i_moment = radial_integral(&pair_rules.moment, alpha_bar - 1.0, params, pp);
            let i_shift = radial_integral(&pair_rules.shifted, alpha_bar + 1.0, params, pp);
            let i_grad = radial_integral(&pair_rules.shifted, alpha_bar + 1.0, params, qq);
            let i_trace = radial_integral(
                &pair_rules.trace_plain,
                alpha_bar + 1.0 - params.s,
                params,
                pp,
            );
            let trace_ab = ea.angular.equator_trace * eb.angular.equator_trace;
            let set = |m: &mut Vec<Vec<f64>>, v: f64| {
                m[ia][ib] = v * scale;
                m[ib][ia] = v * scale;
            };
            set(&mut forms.mass, i_mass * ang_mass);
            set(&mut forms.gradient, i_grad * ang_mass + i_shift * ang_stiff);
            set(&mut forms.hardy, i_shift * ang_mass);
            set(&mut forms.moment, i_moment * ang_mass);
            set(&mut forms.trace_hardy, i_shift * trace_ab);
            set(&mut forms.trace_plain, i_trace * trace_ab);
        }
    }
    Ok(forms)
}

/// Largest deviation of the quadrature Gram matrix from the identity.
pub fn gram_check(table: &SpectrumTable, order: usize) -> Result<f64, OUSpectrumError> {
    let params = &table.params;
    let mut sectors = SectorForms::new(params)?;
    let n_els = table.elements.len();
    let mut worst = 0.0f64;
    for ia in 0..n_els {
        for ib in ia..n_els {
            let (ea, eb) = (&table.elements[ia], &table.elements[ib]);
            let expected = if ia == ib { 1.0 } else { 0.0 };
            let entry = if ea.angular.l != eb.angular.l {
                0.0
            } else {
                let (ang_mass, _) = sectors.angular_bilinears(&ea.angular, &eb.angular)?;
                let value = halfspace_gaussian_integral(
                    |t| {
                        p_poly(ea.n, radial_b_param(ea), t)
                            * p_poly(eb.n, radial_b_param(eb), t)
                    },
                    ang_mass,
                    params,
                    (ea.alpha_j + eb.alpha_j) / 2.0,
                    order,
                )?;
                value / (ea.norm_const * eb.norm_const)
            };
            worst = worst.max((entry - expected).abs());
        }
    }
    Ok(worst)
}

/// Largest relative defect of the weak eigenvalue identity of one
/// element against a family of test elements: the Dirichlet form minus
/// the coupling trace term must equal gamma times the Gaussian mass.
pub fn eigen_residual_check(
    element: &OUBasisElement,
    tests: &[OUBasisElement],
    params: &ModelParams,
    order: usize,
) -> Result<f64, OUSpectrumError> {
    let mut sectors = SectorForms::new(params)?;
    let mut worst = 0.0f64;
    for test in tests {
        if element.angular.l != test.angular.l {
            continue;
        }
        let alpha_bar = (element.alpha_j + test.alpha_j) / 2.0;
        let base = params.half_deficit() - alpha_bar;
        let rule_mass = gauss_laguerre_rule(order, base)?;
        let rule_shift = gauss_laguerre_rule(order, base - 1.0)?;
        let (b_a, b_b) = (radial_b_param(element), radial_b_param(test));
        let pp = |t: f64| p_poly(element.n, b_a, t) * p_poly(test.n, b_b, t);
        let qq = |t: f64| {
            let qa = 2.0 * t * p_poly_deriv(element.n, b_a, t)
                - element.alpha_j * p_poly(element.n, b_a, t);
            let qb =
                2.0 * t * p_poly_deriv(test.n, b_b, t) - test.alpha_j * p_poly(test.n, b_b, t);
            qa * qb
        };
        let (ang_mass, ang_stiff) = sectors.angular_bilinears(&element.angular, &test.angular)?;
        let scale = 1.0 / (element.norm_const * test.norm_const);
        let i_mass = radial_integral(&rule_mass, alpha_bar, params, pp);
        let i_shift = radial_integral(&rule_shift, alpha_bar + 1.0, params, pp);
        let i_grad = radial_integral(&rule_shift, alpha_bar + 1.0, params, qq);
        let trace_ab = element.angular.equator_trace * test.angular.equator_trace;
        let energy = (i_grad * ang_mass + i_shift * ang_stiff) * scale;
        let coupling = params.mu * i_shift * trace_ab * scale;
        let mass = i_mass * ang_mass * scale;
        let residual = (energy - coupling - element.gamma * mass).abs();
        worst = worst.max(residual);
    }
    Ok(worst)
}

/// Lower bound on the equivalence constant between the coupled
/// quadratic form and the full Gaussian H norm, as the smallest
/// generalized Rayleigh quotient on the table span. The numerator is
/// diagonal by the eigenvalue identity; the denominator is assembled
/// by quadrature.
pub fn coercivity_estimate(
    table: &SpectrumTable,
    params: &ModelParams,
) -> Result<f64, OUSpectrumError> {
    assert!(!table.elements.is_empty(), "table must be nonempty");
    let forms = assemble_gaussian_forms(table, DEFAULT_RULE_ORDER)?;
    let n_els = table.elements.len();
    let shift = (params.n_dim as f64 + 2.0 - 2.0 * params.s) / 4.0;
    let mut numerator = vec![vec![0.0; n_els]; n_els];
    for (i, element) in table.elements.iter().enumerate() {
        numerator[i][i] = element.gamma + shift;
    }
    let mut denominator = forms.gradient.clone();
    for i in 0..n_els {
        for j in 0..n_els {
            denominator[i][j] += shift * forms.mass[i][j];
        }
    }
    let (values, _) = linalg::generalized_dense_eigen(&numerator, &denominator)?;
    let c_est = values[0];
    if c_est <= 0.0 {
        return Err(OUSpectrumError::Domain {
            what: "coercivity estimate must be positive",
            value: c_est,
        });
    }
    Ok(c_est)
}

/// Slacks and ratios of the Gaussian functional inequalities for one
/// coefficient vector on the table span.
#[derive(Debug, Clone, Copy)]
pub struct InequalitySlacks {
    /// RHS - LHS of the weighted Hardy inequality.
    pub hardy_extended: f64,
    /// Its right-hand side, for relative comparisons.
    pub hardy_extended_rhs: f64,
    /// RHS - LHS of the fractional Hardy trace inequality.
    pub hardy_fractional: f64,
    /// Its right-hand side.
    pub hardy_fractional_rhs: f64,
    /// (trace mass) / (gradient + mass), an empirical trace constant.
    pub trace_ratio: f64,
}

/// Evaluates the three functional inequalities for the combination
/// with coefficients `c` in the normalized basis.
pub fn inequality_slacks(
    forms: &GaussianForms,
    params: &ModelParams,
    c: &[f64],
) -> InequalitySlacks {
    let mass = quadratic_form(&forms.mass, c);
    let gradient = quadratic_form(&forms.gradient, c);
    let hardy = quadratic_form(&forms.hardy, c);
    let moment = quadratic_form(&forms.moment, c);
    let trace_hardy = quadratic_form(&forms.trace_hardy, c);
    let trace_plain = quadratic_form(&forms.trace_plain, c);
    let deficit = params.n_dim as f64 - 2.0 * params.s;
    let dim_shift = params.n_dim as f64 + 2.0 - 2.0 * params.s;

    let hardy_extended_rhs = 4.0 / (deficit * deficit) * gradient + dim_shift / (deficit * deficit) * mass;
    let hardy_extended_lhs = hardy + moment / (4.0 * deficit * deficit);
    let hardy_fractional_rhs = gradient + dim_shift / 4.0 * mass;
    let hardy_fractional_lhs = params.coupling_threshold() * trace_hardy + moment / 16.0;
    InequalitySlacks {
        hardy_extended: hardy_extended_rhs - hardy_extended_lhs,
        hardy_extended_rhs,
        hardy_fractional: hardy_fractional_rhs - hardy_fractional_lhs,
        hardy_fractional_rhs,
        trace_ratio: trace_plain / (gradient + mass),
    }
}
