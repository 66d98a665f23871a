//! Model parameters, derived constants, the Gaussian kernel and the
//! concrete perturbation family.
//!
//! The central object is [`ModelParams`]: dimension N, order s in (0,1)
//! and the Hardy coupling mu, together with the derived constants
//! `kappa_s = Gamma(1-s) / (2^{2s-1} Gamma(s))` and
//! `lambda_ns = 2^{2s} Gamma^2((N+2s)/4) / Gamma^2((N-2s)/4)`. Admissible
//! couplings satisfy `mu <= kappa_s * lambda_ns - mu_margin`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::special_functions::{gamma_fn, SpecialFunctionError};

/// Errors from parameter construction and perturbation evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    /// A scalar argument lies outside its mathematical domain.
    Domain { what: &'static str, value: f64 },
    /// Construction would violate the parameter invariants.
    Invalid { violations: Vec<String> },
    /// The singular perturbation term was evaluated at r = 0.
    SingularOrigin,
    /// A gamma evaluation inside the closed forms failed.
    Gamma(SpecialFunctionError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Domain { what, value } => {
                write!(f, "parameter {what} = {value} outside its domain")
            }
            ModelError::Invalid { violations } => {
                write!(f, "invalid model parameters: {}", violations.join("; "))
            }
            ModelError::SingularOrigin => {
                write!(f, "perturbation with a singular term evaluated at r = 0")
            }
            ModelError::Gamma(e) => write!(f, "gamma evaluation failed: {e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<SpecialFunctionError> for ModelError {
    fn from(e: SpecialFunctionError) -> Self {
        ModelError::Gamma(e)
    }
}

/// Relative size of the default admissibility margin below the coupling
/// threshold `kappa_s * lambda_ns`.
const DEFAULT_MARGIN_RATIO: f64 = 1e-6;

/// Dimension, order, coupling and the derived constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelParamsInput")]
pub struct ModelParams {
    /// Spatial dimension N (the extension lives in N+1 dimensions).
    #[serde(rename = "N")]
    pub n_dim: u32,
    /// Order s of the operator, in (0,1).
    pub s: f64,
    /// Hardy coupling mu.
    pub mu: f64,
    /// Derived constant Gamma(1-s) / (2^{2s-1} Gamma(s)).
    pub kappa_s: f64,
    /// Derived constant 2^{2s} Gamma^2((N+2s)/4) / Gamma^2((N-2s)/4).
    pub lambda_ns: f64,
    /// Safety gap: mu must stay at least this far below kappa_s*lambda_ns.
    pub mu_margin: f64,
}

/// JSON shape accepted for [`ModelParams`]: the derived constants are
/// always recomputed, never read.
#[derive(Debug, Deserialize)]
struct ModelParamsInput {
    #[serde(rename = "N")]
    n_dim: u32,
    s: f64,
    mu: f64,
    #[serde(default)]
    mu_margin: Option<f64>,
}

impl TryFrom<ModelParamsInput> for ModelParams {
    type Error = ModelError;

    fn try_from(input: ModelParamsInput) -> Result<Self, ModelError> {
        ModelParams::new(input.n_dim, input.s, input.mu, input.mu_margin)
    }
}

impl ModelParams {
    /// Builds the parameter set, computing the derived constants and
    /// enforcing every invariant. `mu_margin = None` selects the default
    /// margin of 1e-6 times the coupling threshold.
    pub fn new(n_dim: u32, s: f64, mu: f64, mu_margin: Option<f64>) -> Result<Self, ModelError> {
        let (kappa_s, lambda_ns) = compute_constants(n_dim, s)?;
        let mu_margin = mu_margin.unwrap_or(DEFAULT_MARGIN_RATIO * kappa_s * lambda_ns);
        let params = ModelParams {
            n_dim,
            s,
            mu,
            kappa_s,
            lambda_ns,
            mu_margin,
        };
        let report = validate_params(&params);
        if report.is_valid() {
            Ok(params)
        } else {
            Err(ModelError::Invalid {
                violations: report.violations,
            })
        }
    }

    /// (N - 2s) / 2, the homogeneity exponent that recurs in the spectrum.
    pub fn half_deficit(&self) -> f64 {
        (self.n_dim as f64 - 2.0 * self.s) / 2.0
    }

    /// Largest admissible coupling kappa_s * lambda_ns.
    pub fn coupling_threshold(&self) -> f64 {
        self.kappa_s * self.lambda_ns
    }
}

/// The closed-form constants (kappa_s, lambda_ns).
pub fn compute_constants(n_dim: u32, s: f64) -> Result<(f64, f64), ModelError> {
    if !(s > 0.0 && s < 1.0) {
        return Err(ModelError::Domain {
            what: "s (must lie in (0,1))",
            value: s,
        });
    }
    let n = n_dim as f64;
    if n_dim < 1 || n <= 2.0 * s {
        return Err(ModelError::Domain {
            what: "N (must satisfy N >= 1 and N > 2s)",
            value: n,
        });
    }
    let kappa_s = gamma_fn(1.0 - s)? / (2f64.powf(2.0 * s - 1.0) * gamma_fn(s)?);
    let ratio = gamma_fn((n + 2.0 * s) / 4.0)? / gamma_fn((n - 2.0 * s) / 4.0)?;
    let lambda_ns = 2f64.powf(2.0 * s) * ratio * ratio;
    Ok((kappa_s, lambda_ns))
}

/// Outcome of re-checking the [`ModelParams`] invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Human-readable description of each violated condition.
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every invariant of `params`, including that the stored derived
/// constants still match their closed forms.
pub fn validate_params(params: &ModelParams) -> ValidationReport {
    let mut violations = Vec::new();
    let n = params.n_dim as f64;
    if params.n_dim < 1 {
        violations.push("N must be at least 1".to_string());
    }
    if !(params.s > 0.0 && params.s < 1.0) {
        violations.push(format!("s = {} must lie in (0,1)", params.s));
    }
    if n <= 2.0 * params.s {
        violations.push(format!("N = {} must exceed 2s = {}", n, 2.0 * params.s));
    }
    if !(params.mu_margin > 0.0) {
        violations.push(format!("mu_margin = {} must be positive", params.mu_margin));
    }
    if violations.is_empty() {
        match compute_constants(params.n_dim, params.s) {
            Ok((kappa_s, lambda_ns)) => {
                let kappa_err = (params.kappa_s - kappa_s).abs() / kappa_s.abs();
                if !(kappa_err <= 1e-13) {
                    violations.push(format!(
                        "kappa_s = {} deviates from its closed form {} by {kappa_err:.3e}",
                        params.kappa_s, kappa_s,
                    ));
                }
                let lambda_err = (params.lambda_ns - lambda_ns).abs() / lambda_ns.abs();
                if !(lambda_err <= 1e-13) {
                    violations.push(format!(
                        "lambda_ns = {} deviates from its closed form {} by {lambda_err:.3e}",
                        params.lambda_ns, lambda_ns,
                    ));
                }
                let threshold = kappa_s * lambda_ns;
                if !(params.mu <= threshold - params.mu_margin) {
                    violations.push(format!(
                        "mu = {} exceeds the admissible bound {} - margin {}",
                        params.mu, threshold, params.mu_margin,
                    ));
                }
            }
            Err(e) => violations.push(format!("derived constants not computable: {e}")),
        }
    }
    ValidationReport { violations }
}

/// The concrete radial perturbation family
/// `h(x,t) = (1 + time_slope * t) * (A * r^{-2s+eps} + B) * exp(-r^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Coefficient A of the singular term r^{-2s+eps}.
    #[serde(rename = "amplitude_A")]
    pub amplitude_a: f64,
    /// Coefficient B of the bounded term.
    #[serde(rename = "amplitude_B")]
    pub amplitude_b: f64,
    /// Singularity offset eps, in (0, 2s).
    pub epsilon: f64,
    /// Slope b of the affine time factor (1 + b t).
    pub time_slope: f64,
    /// Constant of the pointwise bound |h| <= C_g (1 + r^{-2s+eps}).
    #[serde(rename = "C_g")]
    pub c_g: f64,
}

/// Value of the perturbation at radius `r` and time `t`.
///
/// The order s enters through the exponent -2s + eps, so the model
/// parameters accompany the perturbation description.
pub fn perturbation_eval(
    spec: &PerturbationSpec,
    params: &ModelParams,
    r: f64,
    t: f64,
) -> Result<f64, ModelError> {
    if r < 0.0 {
        return Err(ModelError::Domain {
            what: "r (radius must be nonnegative)",
            value: r,
        });
    }
    let singular = if spec.amplitude_a == 0.0 {
        0.0
    } else {
        if r == 0.0 {
            return Err(ModelError::SingularOrigin);
        }
        spec.amplitude_a * r.powf(-2.0 * params.s + spec.epsilon)
    };
    Ok((1.0 + spec.time_slope * t) * (singular + spec.amplitude_b) * (-r * r).exp())
}

/// Verifies the subhomogeneous bound `|h(r,t)| <= C_g (1 + r^{-2s+eps})`
/// on a sample grid. Returns whether the bound holds everywhere and the
/// largest ratio |h| / bound encountered.
pub fn check_subhomogeneous_bound(
    spec: &PerturbationSpec,
    params: &ModelParams,
    grid: &[(f64, f64)],
) -> Result<(bool, f64), ModelError> {
    assert!(!grid.is_empty(), "sample grid must be nonempty");
    let mut max_ratio = 0.0f64;
    for &(r, t) in grid {
        if r <= 0.0 {
            return Err(ModelError::Domain {
                what: "grid radius (must be positive)",
                value: r,
            });
        }
        let h = perturbation_eval(spec, params, r, t)?;
        let bound = spec.c_g * (1.0 + r.powf(-2.0 * params.s + spec.epsilon));
        max_ratio = max_ratio.max(h.abs() / bound);
    }
    Ok((max_ratio <= 1.0, max_ratio))
}

/// The backward heat kernel weight
/// `G_s(z,t) = t^{-(N+2-2s)/2} exp(-|z|^2 / (4t))` on the upper half
/// space, with `G(z) = G_s(z,1)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianKernel {
    /// Decay exponent (N + 2 - 2s) / 2 of the time prefactor.
    exponent: f64,
}

impl GaussianKernel {
    pub fn new(params: &ModelParams) -> Self {
        GaussianKernel {
            exponent: (params.n_dim as f64 + 2.0 - 2.0 * params.s) / 2.0,
        }
    }

    /// G_s(z,t) for z in the (N+1)-dimensional half space and t > 0.
    pub fn value(&self, z: &[f64], t: f64) -> f64 {
        let sq: f64 = z.iter().map(|v| v * v).sum();
        t.powf(-self.exponent) * (-sq / (4.0 * t)).exp()
    }

    /// The analytic gradient -(z / 2t) G_s(z,t).
    pub fn gradient(&self, z: &[f64], t: f64) -> Vec<f64> {
        let g = self.value(z, t);
        z.iter().map(|v| -v / (2.0 * t) * g).collect()
    }

    /// G(z) = G_s(z,1) = exp(-|z|^2/4), the weight of the Gaussian spaces.
    pub fn unit_time_value(&self, z: &[f64]) -> f64 {
        self.value(z, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // reference values computed with mpmath 1.3.0 at 50 decimal digits
    const LAMBDA_2_HALF: f64 = 0.22847329052223181269;
    const LAMBDA_3_HALF: f64 = 0.63661977236758134308;
    const LAMBDA_4_HALF: f64 = 1.0942198076132383194;
    const KAPPA_03: f64 = 0.57254045856831171190;
    const KAPPA_07: f64 = 1.7466014585250248811;
    const PERTURBATION_EXAMPLE: f64 = 4.2200690519722167943e-7;

    fn base_params() -> ModelParams {
        ModelParams::new(3, 0.5, 0.0, None).unwrap()
    }

    #[test]
    fn constants_match_closed_forms() {
        let (kappa, lambda) = compute_constants(3, 0.5).unwrap();
        assert_relative_eq!(kappa, 1.0, max_relative = 1e-14);
        assert_relative_eq!(lambda, LAMBDA_3_HALF, max_relative = 1e-13);
        let (_, lambda2) = compute_constants(2, 0.5).unwrap();
        assert_relative_eq!(lambda2, LAMBDA_2_HALF, max_relative = 1e-13);
        let (_, lambda4) = compute_constants(4, 0.5).unwrap();
        assert_relative_eq!(lambda4, LAMBDA_4_HALF, max_relative = 1e-13);
        let (kappa03, _) = compute_constants(3, 0.3).unwrap();
        assert_relative_eq!(kappa03, KAPPA_03, max_relative = 1e-13);
        let (kappa07, _) = compute_constants(3, 0.7).unwrap();
        assert_relative_eq!(kappa07, KAPPA_07, max_relative = 1e-13);
    }

    #[test]
    fn constants_reject_bad_domains() {
        assert!(matches!(
            compute_constants(1, 0.6),
            Err(ModelError::Domain { .. })
        ));
        assert!(matches!(
            compute_constants(3, 0.0),
            Err(ModelError::Domain { .. })
        ));
        assert!(matches!(
            compute_constants(3, 1.0),
            Err(ModelError::Domain { .. })
        ));
    }

    #[test]
    fn validation_accepts_baseline() {
        let report = validate_params(&base_params());
        assert!(report.is_valid(), "unexpected violations: {:?}", report.violations);
    }

    #[test]
    fn validation_rejects_coupling_at_the_threshold() {
        let valid = base_params();
        let at_boundary = ModelParams {
            mu: valid.coupling_threshold(),
            ..valid
        };
        let report = validate_params(&at_boundary);
        assert!(!report.is_valid());
        assert!(report.violations.iter().any(|v| v.contains("mu")));
        assert!(ModelParams::new(1, 0.6, 0.0, None).is_err());
    }

    #[test]
    fn validation_detects_corrupted_constants() {
        let mut params = base_params();
        params.lambda_ns *= 1.0 + 1e-6;
        let report = validate_params(&params);
        assert!(report.violations.iter().any(|v| v.contains("lambda_ns")));
    }

    #[test]
    fn params_deserialize_recomputes_constants() {
        let params: ModelParams =
            serde_json::from_str(r#"{"N": 3, "s": 0.5, "mu": 0.25}"#).unwrap();
        assert_relative_eq!(params.kappa_s, 1.0, max_relative = 1e-14);
        assert_relative_eq!(params.lambda_ns, LAMBDA_3_HALF, max_relative = 1e-13);
        let rejected = serde_json::from_str::<ModelParams>(r#"{"N": 1, "s": 0.6, "mu": 0.0}"#);
        assert!(rejected.is_err());
    }

    fn spec(a: f64, b: f64, slope: f64, c_g: f64) -> PerturbationSpec {
        PerturbationSpec {
            amplitude_a: a,
            amplitude_b: b,
            epsilon: 0.5,
            time_slope: slope,
            c_g,
        }
    }

    #[test]
    fn perturbation_matches_direct_formula() {
        let params = base_params();
        let constant = spec(0.0, 1.0, 0.0, 1.0);
        assert_relative_eq!(
            perturbation_eval(&constant, &params, 0.0, 3.7).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        let singular = spec(1.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(
            perturbation_eval(&singular, &params, 1.0, 0.0).unwrap(),
            (-1.0f64).exp(),
            max_relative = 1e-15
        );
        let mixed = spec(1.0, 2.0, 1.0, 1.0);
        assert_relative_eq!(
            perturbation_eval(&mixed, &params, 4.0, 0.5).unwrap(),
            PERTURBATION_EXAMPLE,
            max_relative = 1e-13
        );
    }

    #[test]
    fn perturbation_rejects_singular_origin() {
        let params = base_params();
        let singular = spec(1.0, 0.0, 0.0, 1.0);
        assert_eq!(
            perturbation_eval(&singular, &params, 0.0, 0.0),
            Err(ModelError::SingularOrigin)
        );
    }

    #[test]
    fn subhomogeneous_bound_examples() {
        let params = base_params();
        let grid: Vec<(f64, f64)> = (0..19)
            .map(|i| (1.0 + 0.5 * i as f64, 0.0))
            .collect();
        let (ok, ratio) = check_subhomogeneous_bound(&spec(1.0, 0.0, 0.0, 1.0), &params, &grid).unwrap();
        assert!(ok);
        assert!(ratio <= 1.0);

        // bounded term 5 e^{-r^2} against C_g = 1: tightest at r = 1
        let (ok, ratio) = check_subhomogeneous_bound(&spec(0.0, 5.0, 0.0, 1.0), &params, &grid).unwrap();
        assert!(ok);
        assert!((0.91..0.93).contains(&ratio), "max ratio {ratio} not near 0.92");

        // doubled singular coefficient breaks the bound at small radius
        let mut fine_grid = grid.clone();
        fine_grid.push((0.1, 0.0));
        let (ok, ratio) = check_subhomogeneous_bound(&spec(2.0, 0.0, 0.0, 1.0), &params, &fine_grid).unwrap();
        assert!(!ok);
        assert!(ratio > 1.5 && ratio < 1.52, "ratio {ratio} should be about 1.51");
    }

    #[test]
    fn perturbation_decays_superpolynomially() {
        let params = base_params();
        let family = spec(1.0, 1.0, 0.0, 1.0);
        let near = perturbation_eval(&family, &params, 1.0, 0.0).unwrap();
        let far = perturbation_eval(&family, &params, 10.0, 0.0).unwrap();
        assert!(far.abs() < 1e-30 * near.abs());
    }

    #[test]
    fn kernel_gradient_matches_finite_differences() {
        let params = base_params();
        let kernel = GaussianKernel::new(&params);
        let z = [0.7, -1.3, 0.4, 0.9];
        for t in [0.3, 1.0, 2.5] {
            let grad = kernel.gradient(&z, t);
            let step = 1e-5;
            for i in 0..z.len() {
                let mut zp = z;
                let mut zm = z;
                zp[i] += step;
                zm[i] -= step;
                let fd = (kernel.value(&zp, t) - kernel.value(&zm, t)) / (2.0 * step);
                assert_relative_eq!(grad[i], fd, max_relative = 1e-6);
                let analytic = -z[i] / (2.0 * t) * kernel.value(&z, t);
                assert_relative_eq!(grad[i], analytic, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn kernel_unit_time_is_plain_gaussian() {
        let params = base_params();
        let kernel = GaussianKernel::new(&params);
        let z = [1.0, 2.0, 0.0, -1.0];
        let sq = 1.0 + 4.0 + 0.0 + 1.0;
        assert_relative_eq!(
            kernel.unit_time_value(&z),
            (-sq / 4.0f64).exp(),
            max_relative = 1e-15
        );
    }

    proptest! {
        #[test]
        fn constants_are_positive_on_valid_domain(
            n_dim in 1u32..6,
            s in 0.05f64..0.95,
        ) {
            prop_assume!(n_dim as f64 > 2.0 * s);
            let (kappa, lambda) = compute_constants(n_dim, s).unwrap();
            prop_assert!(kappa > 0.0);
            prop_assert!(lambda > 0.0);
        }

        #[test]
        fn perturbation_is_affine_in_time(
            r in 0.05f64..8.0,
            t1 in 0.0f64..2.0,
            t2 in 0.0f64..2.0,
        ) {
            let params = ModelParams::new(3, 0.5, 0.0, None).unwrap();
            let family = PerturbationSpec {
                amplitude_a: 0.3,
                amplitude_b: 1.0,
                epsilon: 0.4,
                time_slope: 0.7,
                c_g: 2.0,
            };
            let v1 = perturbation_eval(&family, &params, r, t1).unwrap();
            let v2 = perturbation_eval(&family, &params, r, t2).unwrap();
            let mid = perturbation_eval(&family, &params, r, 0.5 * (t1 + t2)).unwrap();
            prop_assert!((0.5 * (v1 + v2) - mid).abs() <= 1e-12 * (v1.abs() + v2.abs() + 1e-300));
        }
    }
}
