//! Eigenvalues on the weighted upper half sphere.
//!
//! The half-sphere problem with weight `theta^{1-2s}` and a coupling
//! boundary condition on the equator separates over spherical harmonics.
//! Each harmonic degree l leaves a one-dimensional Sturm-Liouville
//! problem in the polar angle phi measured from the equator,
//!
//! ```text
//!   -(w f')' + lambda_l w f / cos^2(phi) = nu w f   on (0, pi/2),
//!   w(phi) = (sin phi)^{1-2s} (cos phi)^{N-1},
//!   lim_{phi->0} w f' = -mu f(0),
//! ```
//!
//! with `lambda_l = l(l+N-2)`. This module discretizes each sector with
//! continuous piecewise-linear elements on a mesh graded toward the
//! equator, assembles the weighted forms with per-element Gaussian
//! quadrature that treats the `(sin phi)^{1-2s}` endpoint factor by a
//! matching Gauss-Jacobi weight, and solves the resulting generalized
//! tridiagonal eigenproblem.

use std::fmt;

use crate::linalg::{self, LinalgError};
use crate::model::ModelParams;
use crate::quadrature::{gauss_jacobi_rule, QuadratureError, QuadratureRule};

/// Gauss points per element, enough to keep assembly error far below
/// the piecewise-linear discretization error.
const ELEMENT_QUAD_POINTS: usize = 16;

/// Minimum number of mesh intervals a sector problem accepts.
pub const MIN_ELEMENTS: usize = 16;

/// Errors from sector assembly and eigenvalue extraction.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumError {
    /// The mesh violates a structural requirement.
    InvalidMesh { what: &'static str },
    /// More eigenpairs were requested than the discretization carries.
    InvalidCount { requested: usize, available: usize },
    /// A weighted element integral came out non-finite.
    Assembly { what: &'static str },
    /// Building an element quadrature rule failed.
    Quadrature(QuadratureError),
    /// The eigensolver did not converge.
    Convergence { index: usize },
}

impl fmt::Display for SpectrumError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectrumError::InvalidMesh { what } => write!(f, "invalid mesh: {what}"),
            SpectrumError::InvalidCount {
                requested,
                available,
            } => write!(
                f,
                "requested {requested} modes but the discretization has {available}"
            ),
            SpectrumError::Assembly { what } => write!(f, "assembly failed: {what}"),
            SpectrumError::Quadrature(e) => write!(f, "element quadrature failed: {e}"),
            SpectrumError::Convergence { index } => {
                write!(f, "eigensolver did not converge at index {index}")
            }
        }
    }
}

impl std::error::Error for SpectrumError {}

impl From<QuadratureError> for SpectrumError {
    fn from(e: QuadratureError) -> Self {
        SpectrumError::Quadrature(e)
    }
}

impl From<LinalgError> for SpectrumError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Convergence { index } => SpectrumError::Convergence { index },
            LinalgError::NotPositiveDefinite { index } => SpectrumError::Convergence { index },
        }
    }
}

/// Symmetric tridiagonal matrix in diagonal/off-diagonal storage, the
/// natural shape of the piecewise-linear sector forms.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalMatrix {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl TridiagonalMatrix {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Matrix-vector product.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.diag.len());
        let n = x.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = self.diag[i] * x[i];
            if i > 0 {
                y[i] += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                y[i] += self.off[i] * x[i + 1];
            }
        }
        y
    }

    /// Bilinear form x^T M y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.apply(y).iter().zip(x).map(|(my, &xi)| xi * my).sum()
    }
}

/// One harmonic sector of the half-sphere eigenproblem.
#[derive(Debug, Clone)]
pub struct SectorProblem {
    pub params: ModelParams,
    pub l: u32,
    pub mesh: Vec<f64>,
    pub lambda_l: f64,
}

/// Mesh on [0, pi/2] graded toward the equator endpoint, where the
/// eigenfunctions pick up a phi^{2s} correction.
pub fn graded_mesh(elements: usize, s: f64) -> Vec<f64> {
    let exponent = 1.0 / (2.0 * s).min(1.0);
    (0..=elements)
        .map(|i| std::f64::consts::FRAC_PI_2 * (i as f64 / elements as f64).powf(exponent))
        .collect()
}

impl SectorProblem {
    /// Sector with an explicit mesh; validates the mesh invariants.
    pub fn new(params: ModelParams, l: u32, mesh: Vec<f64>) -> Result<Self, SpectrumError> {
        if mesh.len() < MIN_ELEMENTS + 1 {
            return Err(SpectrumError::InvalidMesh {
                what: "fewer than 16 intervals",
            });
        }
        if mesh[0] != 0.0 {
            return Err(SpectrumError::InvalidMesh {
                what: "mesh must start at 0",
            });
        }
        if (mesh[mesh.len() - 1] - std::f64::consts::FRAC_PI_2).abs() > 1e-12 {
            return Err(SpectrumError::InvalidMesh {
                what: "mesh must end at pi/2",
            });
        }
        if mesh.windows(2).any(|p| p[0] >= p[1]) {
            return Err(SpectrumError::InvalidMesh {
                what: "mesh nodes must be strictly increasing",
            });
        }
        let n = params.n_dim as f64;
        let lambda_l = l as f64 * (l as f64 + n - 2.0);
        Ok(SectorProblem {
            params,
            l,
            mesh,
            lambda_l,
        })
    }

    /// Sector on the default graded mesh with the given element count.
    pub fn graded(params: ModelParams, l: u32, elements: usize) -> Result<Self, SpectrumError> {
        let mesh = graded_mesh(elements, params.s);
        SectorProblem::new(params, l, mesh)
    }

    /// Free nodes of the sector: degree l >= 1 forces f(pi/2) = 0, so
    /// the last node drops out of the unknowns.
    fn free_nodes(&self) -> usize {
        if self.l == 0 {
            self.mesh.len()
        } else {
            self.mesh.len() - 1
        }
    }
}

/// One solved mode of the half-sphere problem.
#[derive(Debug, Clone)]
pub struct AngularMode {
    /// Rank within the merged spectrum (1-based); sector-local rank
    /// until [`merge_sector_spectra`] reassigns it.
    pub index_k: usize,
    pub l: u32,
    pub nu: f64,
    /// Nodal values of the polar profile f on the full sector mesh.
    pub f_values: Vec<f64>,
    /// Mesh the nodal values live on.
    pub mesh: Vec<f64>,
    /// f(0), the value on the equator, nonnegative by sign convention.
    pub equator_trace: f64,
    /// Weighted L2 norm of the mode; unity by construction.
    pub sphere_norm: f64,
}

/// Equator trace of a solved mode.
pub fn equator_trace(mode: &AngularMode) -> f64 {
    mode.equator_trace
}

/// Stiffness and mass forms of a sector, including the rank-one
/// coupling term -mu at the equator corner of the stiffness matrix.
pub fn assemble_sector(
    problem: &SectorProblem,
) -> Result<(TridiagonalMatrix, TridiagonalMatrix), SpectrumError> {
    let (mut a, b) = assemble_without_coupling(problem)?;
    a.diag[0] -= problem.params.mu;
    Ok((a, b))
}

/// Assembles the mu-free forms: weighted gradient plus harmonic
/// potential in A, weighted mass in B.
fn assemble_without_coupling(
    problem: &SectorProblem,
) -> Result<(TridiagonalMatrix, TridiagonalMatrix), SpectrumError> {
    let params = &problem.params;
    let n = params.n_dim as f64;
    let weight_pow = 1.0 - 2.0 * params.s;
    let mesh = &problem.mesh;
    let elements = mesh.len() - 1;
    let free = problem.free_nodes();

    // the first element owns the (sin phi)^{1-2s} endpoint factor; a
    // Gauss-Jacobi rule with matching weight integrates it exactly,
    // leaving only the smooth remainder to the polynomial part
    let endpoint_rule = gauss_jacobi_rule(ELEMENT_QUAD_POINTS, 0.0, weight_pow)?;
    let interior_rule = gauss_jacobi_rule(ELEMENT_QUAD_POINTS, 0.0, 0.0)?;

    let mut a = TridiagonalMatrix {
        diag: vec![0.0; free],
        off: vec![0.0; free.saturating_sub(1)],
    };
    let mut b = TridiagonalMatrix {
        diag: vec![0.0; free],
        off: vec![0.0; free.saturating_sub(1)],
    };

    let scatter = |m: &mut TridiagonalMatrix, e: usize, local: [f64; 3]| {
        let [ll, lr, rr] = local;
        m.diag[e] += ll;
        if e + 1 < free {
            m.off[e] += lr;
            m.diag[e + 1] += rr;
        }
    };

    for e in 0..elements {
        let (lo, hi) = (mesh[e], mesh[e + 1]);
        let h = hi - lo;
        let mut mass = [0.0; 3];
        let mut stiff = [0.0; 3];
        let quad_points = element_points(e, lo, h, weight_pow, n, &endpoint_rule, &interior_rule);
        for (phi, wq) in quad_points {
            let n_left = (hi - phi) / h;
            let n_right = (phi - lo) / h;
            mass[0] += wq * n_left * n_left;
            mass[1] += wq * n_left * n_right;
            mass[2] += wq * n_right * n_right;
            let grad = wq / (h * h);
            stiff[0] += grad;
            stiff[1] -= grad;
            stiff[2] += grad;
            if problem.lambda_l != 0.0 {
                let cos = phi.cos();
                let pot = wq * problem.lambda_l / (cos * cos);
                stiff[0] += pot * n_left * n_left;
                stiff[1] += pot * n_left * n_right;
                stiff[2] += pot * n_right * n_right;
            }
        }
        scatter(&mut b, e, mass);
        scatter(&mut a, e, stiff);
    }

    let finite = |m: &TridiagonalMatrix| {
        m.diag.iter().chain(&m.off).all(|v| v.is_finite())
    };
    if !finite(&a) || !finite(&b) {
        return Err(SpectrumError::Assembly {
            what: "weighted element integral is non-finite",
        });
    }
    Ok((a, b))
}

/// Quadrature points and weights for one element, with the full sector
/// weight w(phi) folded into the returned weights.
fn element_points(
    e: usize,
    lo: f64,
    h: f64,
    weight_pow: f64,
    n: f64,
    endpoint_rule: &QuadratureRule,
    interior_rule: &QuadratureRule,
) -> Vec<(f64, f64)> {
    if e == 0 {
        // (sin phi)^{1-2s} = phi^{1-2s} (sin phi / phi)^{1-2s}; the
        // power maps onto the Jacobi factor (1+x)^{1-2s} under
        // phi = (h/2)(1+x), worth an extra Jacobian power of h/2
        let jacobian = (h / 2.0).powf(weight_pow + 1.0);
        endpoint_rule
            .nodes
            .iter()
            .zip(&endpoint_rule.weights)
            .map(|(&x, &w)| {
                let phi = 0.5 * h * (1.0 + x);
                let smooth = (phi.sin() / phi).powf(weight_pow) * phi.cos().powf(n - 1.0);
                (phi, jacobian * w * smooth)
            })
            .collect()
    } else {
        interior_rule
            .nodes
            .iter()
            .zip(&interior_rule.weights)
            .map(|(&x, &w)| {
                let phi = lo + 0.5 * h * (1.0 + x);
                let full = phi.sin().powf(weight_pow) * phi.cos().powf(n - 1.0);
                (phi, 0.5 * h * w * full)
            })
            .collect()
    }
}

/// Lowest `count` eigenpairs of the sector, mass-normalized and sorted
/// ascending, with the equator trace read off the first nodal value.
pub fn solve_sector(
    problem: &SectorProblem,
    count: usize,
) -> Result<Vec<AngularMode>, SpectrumError> {
    assert!(count >= 1, "count must be at least 1");
    let (a, b) = assemble_sector(problem)?;
    let free = problem.free_nodes();
    if count > free {
        return Err(SpectrumError::InvalidCount {
            requested: count,
            available: free,
        });
    }
    let (values, vectors) = linalg::generalized_tridiagonal_eigen(&a.diag, &a.off, &b.diag, &b.off)?;
    let mut modes = Vec::with_capacity(count);
    for k in 0..count {
        let mut f_values = vectors[k].clone();
        if problem.l >= 1 {
            f_values.push(0.0);
        }
        if sign_reference(&f_values) < 0.0 {
            for v in &mut f_values {
                *v = -*v;
            }
        }
        let sphere_norm = b.bilinear(&f_values[..free], &f_values[..free]);
        modes.push(AngularMode {
            index_k: k + 1,
            l: problem.l,
            nu: values[k],
            equator_trace: f_values[0],
            f_values,
            mesh: problem.mesh.clone(),
            sphere_norm,
        });
    }
    Ok(modes)
}

/// Sign the convention fixes: the equator value when nonzero, else the
/// first nodal value that rises above roundoff.
fn sign_reference(f_values: &[f64]) -> f64 {
    if f_values[0] != 0.0 {
        return f_values[0];
    }
    let scale = f_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    f_values
        .iter()
        .find(|v| v.abs() > 1e-12 * scale)
        .copied()
        .unwrap_or(1.0)
}

/// Merges per-sector spectra into one globally ranked list, sorted by
/// eigenvalue with ties broken by sector degree.
pub fn merge_sector_spectra(sectors: Vec<Vec<AngularMode>>) -> Vec<AngularMode> {
    let mut all: Vec<AngularMode> = sectors.into_iter().flatten().collect();
    all.sort_by(|p, q| p.nu.total_cmp(&q.nu).then(p.l.cmp(&q.l)));
    for (i, mode) in all.iter_mut().enumerate() {
        mode.index_k = i + 1;
    }
    all
}

/// Slack of the equator trace inequality for a profile in one sector:
/// the weighted energy plus `((N-2s)/2)^2` times the weighted mass,
/// minus `kappa_s Lambda_{N,s}` times the squared equator trace. The
/// inequality asserts this is nonnegative for every profile.
pub fn sphere_trace_inequality_check(
    problem: &SectorProblem,
    f_values: &[f64],
) -> Result<f64, SpectrumError> {
    if f_values.len() != problem.mesh.len() {
        return Err(SpectrumError::InvalidMesh {
            what: "profile values must match the mesh nodes",
        });
    }
    if problem.l >= 1 && f_values[problem.mesh.len() - 1] != 0.0 {
        return Err(SpectrumError::InvalidMesh {
            what: "degree >= 1 profiles must vanish at pi/2",
        });
    }
    let (a0, b) = assemble_without_coupling(problem)?;
    let free = problem.free_nodes();
    let x = &f_values[..free];
    let half_deficit = problem.params.half_deficit();
    let rhs = half_deficit * half_deficit * b.bilinear(x, x) + a0.bilinear(x, x);
    let lhs = f_values[0] * f_values[0];
    Ok(rhs - problem.params.coupling_threshold() * lhs)
}
