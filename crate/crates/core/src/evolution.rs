//! Backward-in-time spectral Galerkin evolution in the eigenbasis.
//!
//! In the basis of normalized eigenfunctions the Gaussian-space
//! equation reduces to the coefficient system
//!
//! ```text
//!   dc/d(log t) = Gamma c - M(t) c,
//! ```
//!
//! with Gamma the diagonal of eigenvalues and M(t) the perturbation
//! coupling matrix on the boundary trace. This module assembles M by
//! quadrature, integrates the system from `t_start` down toward the
//! singularity at `t = 0` with an embedded Dormand-Prince 5(4) pair in
//! log time, and monitors the frequency quotient N(t) = tD/H whose
//! limit identifies the vanishing order. On top of the trace it
//! provides the vanishing-order fit, the limit extraction, the
//! blow-up profile coefficients beta, and the profile-error and
//! backward-uniqueness checks.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

use crate::model::{ModelError, ModelParams, PerturbationSpec};
use crate::ou_spectrum::SpectrumTable;
use crate::quadrature::{trace_gaussian_integral, QuadratureError};
use crate::special_functions::{gamma_fn, p_poly};

/// Quadrature order for each panel of a coupling-matrix entry. The
/// panel count fixed by the trace rule keeps this modest order
/// converged well past the entry tolerances.
pub const DEFAULT_COUPLING_ORDER: usize = 16;

/// Log-time distance between coupling-matrix refreshes; between
/// refreshes the matrix is interpolated linearly in log t, whose error
/// is quadratic in this interval and far inside the trajectory budgets.
pub const REFRESH_LOG_INTERVAL: f64 = 0.04;

/// Default cap on the integrator step in log t.
pub const DEFAULT_MAX_LOG_STEP: f64 = 0.05;

/// Default geometric spacing of the sampling grid.
pub const DEFAULT_SAMPLE_RATIO: f64 = 1.002;

/// Tolerance for declaring the frequency limit converged.
pub const FREQUENCY_MATCH_TOLERANCE: f64 = 1e-3;

/// Coefficient magnitude treated as overflow during integration; the
/// cap keeps the height sum representable.
const OVERFLOW_LIMIT: f64 = 1e150;

/// Smallest accepted integrator step in log t.
const MIN_LOG_STEP: f64 = 1e-13;

/// Errors from configuration, integration, and the trace analyses.
#[derive(Debug, Clone, PartialEq)]
pub enum EvolutionError {
    /// A configuration field left its admissible range.
    InvalidConfig { what: &'static str },
    /// The frequency quotient is undefined at zero height.
    ZeroHeight,
    /// Coefficients exceeded the overflow limit; rescale the initial
    /// data and rerun.
    Overflow { t: f64 },
    /// The adaptive controller drove the step below the representable
    /// resolution.
    StepUnderflow { t: f64 },
    /// An analysis window holds too few samples.
    DegenerateWindow { samples: usize },
    /// A requested time or scale leaves the sampled range.
    OutOfRange { what: &'static str, value: f64 },
    /// The stored states cannot resolve the requested quantity.
    InsufficientResolution { what: &'static str },
    /// Quadrature of a coupling entry failed.
    Quadrature(QuadratureError),
    /// Perturbation evaluation failed.
    Model(ModelError),
}

impl fmt::Display for EvolutionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvolutionError::InvalidConfig { what } => {
                write!(f, "invalid evolution config: {what}")
            }
            EvolutionError::ZeroHeight => {
                write!(f, "frequency is undefined at zero height")
            }
            EvolutionError::Overflow { t } => write!(
                f,
                "coefficients overflowed at t = {t:e}; rescale the initial data"
            ),
            EvolutionError::StepUnderflow { t } => {
                write!(f, "step size underflow at t = {t:e}")
            }
            EvolutionError::DegenerateWindow { samples } => {
                write!(f, "analysis window holds only {samples} samples")
            }
            EvolutionError::OutOfRange { what, value } => {
                write!(f, "out of sampled range: {what} = {value:e}")
            }
            EvolutionError::InsufficientResolution { what } => {
                write!(f, "stored states cannot resolve {what}")
            }
            EvolutionError::Quadrature(e) => write!(f, "coupling quadrature failed: {e}"),
            EvolutionError::Model(e) => write!(f, "perturbation evaluation failed: {e}"),
        }
    }
}

impl std::error::Error for EvolutionError {}

impl From<QuadratureError> for EvolutionError {
    fn from(e: QuadratureError) -> Self {
        EvolutionError::Quadrature(e)
    }
}

impl From<ModelError> for EvolutionError {
    fn from(e: ModelError) -> Self {
        EvolutionError::Model(e)
    }
}

/// Coefficient vector at one time, together with the coupling product
/// M(t)c(t) used for the energy and the beta integrals.
#[derive(Debug, Clone)]
pub struct SpectralState {
    pub t: f64,
    pub coeffs: Vec<f64>,
    /// M(t) c(t) at this sample, zero for unperturbed runs.
    pub coupling_apply: Vec<f64>,
}

/// One sampled record of the frequency monitor.
#[derive(Debug, Clone, Copy)]
pub struct TraceSample {
    pub t: f64,
    pub h: f64,
    pub d: f64,
    pub n: f64,
}

/// The sampled frequency history of one run.
#[derive(Debug, Clone)]
pub struct FrequencyTrace {
    pub samples: Vec<TraceSample>,
    pub gamma_limit: Option<f64>,
    pub fit_window: Option<(f64, f64)>,
}

/// Full description of one evolution run.
#[derive(Debug, Clone)]
pub struct EvolutionConfig {
    pub params: ModelParams,
    pub table: SpectrumTable,
    pub pert: Option<PerturbationSpec>,
    pub t_start: f64,
    pub t_end: f64,
    /// Coefficients at t_start, indexed like the table elements.
    pub initial: Vec<f64>,
    pub rtol: f64,
    pub max_log_step: f64,
    pub sample_ratio: f64,
    pub coupling_order: usize,
}

impl EvolutionConfig {
    /// A config with the default step control for the given scenario.
    pub fn new(
        params: ModelParams,
        table: SpectrumTable,
        pert: Option<PerturbationSpec>,
        t_start: f64,
        t_end: f64,
        initial: Vec<f64>,
    ) -> Self {
        EvolutionConfig {
            params,
            table,
            pert,
            t_start,
            t_end,
            initial,
            rtol: 1e-10,
            max_log_step: DEFAULT_MAX_LOG_STEP,
            sample_ratio: DEFAULT_SAMPLE_RATIO,
            coupling_order: DEFAULT_COUPLING_ORDER,
        }
    }

    fn validate(&self) -> Result<(), EvolutionError> {
        if !(self.t_end > 0.0 && self.t_end < self.t_start && self.t_start.is_finite()) {
            return Err(EvolutionError::InvalidConfig {
                what: "times must satisfy 0 < t_end < t_start < inf",
            });
        }
        if !(self.rtol > 1e-14 && self.rtol < 1e-3) {
            return Err(EvolutionError::InvalidConfig {
                what: "rtol must lie in (1e-14, 1e-3)",
            });
        }
        if !(self.max_log_step > 0.0 && self.max_log_step <= 1.0) {
            return Err(EvolutionError::InvalidConfig {
                what: "max_log_step must lie in (0, 1]",
            });
        }
        if !(self.sample_ratio > 1.0 && self.sample_ratio < 2.0) {
            return Err(EvolutionError::InvalidConfig {
                what: "sample_ratio must lie in (1, 2)",
            });
        }
        if self.initial.len() != self.table.elements.len() {
            return Err(EvolutionError::InvalidConfig {
                what: "initial coefficients must match the table length",
            });
        }
        if self.initial.iter().any(|c| !c.is_finite()) {
            return Err(EvolutionError::InvalidConfig {
                what: "initial coefficients must be finite",
            });
        }
        if self.coupling_order < 4 {
            return Err(EvolutionError::InvalidConfig {
                what: "coupling_order must be at least 4",
            });
        }
        Ok(())
    }
}

/// A run's stored states and frequency trace.
#[derive(Debug, Clone)]
pub struct EvolutionRun {
    pub states: Vec<SpectralState>,
    pub trace: FrequencyTrace,
}

/// Memoized radius-dependent factors shared by every entry of one
/// angular mode pair: the exponents are fixed per pair while the
/// quadrature revisits the same nodes for each polynomial degree.
struct RadialFactorCache {
    alpha_power: f64,
    eps_power: f64,
    t: f64,
    map: RefCell<HashMap<u64, (f64, f64, f64)>>,
}

impl RadialFactorCache {
    fn new(alpha_power: f64, eps_power: f64, t: f64) -> Self {
        RadialFactorCache {
            alpha_power,
            eps_power,
            t,
            map: RefCell::new(HashMap::new()),
        }
    }

    /// (r^{-alpha_a-alpha_b}, r^{eps-2s}, exp(-t r^2)) at radius r.
    fn factors(&self, r: f64) -> (f64, f64, f64) {
        *self
            .map
            .borrow_mut()
            .entry(r.to_bits())
            .or_insert_with(|| {
                (
                    r.powf(self.alpha_power),
                    r.powf(self.eps_power),
                    (-self.t * r * r).exp(),
                )
            })
    }
}

/// Surface measure of the unit sphere in N dimensions.
fn sphere_area(params: &ModelParams) -> f64 {
    let half_n = params.n_dim as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(half_n)
        / gamma_fn(half_n).expect("gamma at N/2 is finite for N >= 2")
}

/// Boundary coupling matrix of the perturbation at time t:
/// `M_ab(t) = int t^s h(sqrt(t) x, t) Tr(Y_a) Tr(Y_b) G(x,0) dx`,
/// assembled entrywise by the graded trace quadrature. Entries across
/// different harmonic degrees vanish exactly. `pert = None` gives the
/// zero matrix.
pub fn coupling_matrix(
    table: &SpectrumTable,
    pert: Option<&PerturbationSpec>,
    t: f64,
    params: &ModelParams,
    order: usize,
) -> Result<Vec<Vec<f64>>, EvolutionError> {
    let n_els = table.elements.len();
    let mut m = vec![vec![0.0; n_els]; n_els];
    let spec = match pert {
        Some(spec) => spec,
        None => return Ok(m),
    };
    if t <= 0.0 {
        return Err(EvolutionError::OutOfRange {
            what: "coupling time must be positive",
            value: t,
        });
    }
    let area = sphere_area(params);
    let time_affine = 1.0 + spec.time_slope * t;
    let singular_weight = spec.amplitude_a * t.powf(spec.epsilon / 2.0);
    let bounded_weight = spec.amplitude_b * t.powf(params.s);
    let eps_power = spec.epsilon - 2.0 * params.s;
    let mut caches: HashMap<(usize, usize), RadialFactorCache> = HashMap::new();
    for ia in 0..n_els {
        for ib in ia..n_els {
            let (ea, eb) = (&table.elements[ia], &table.elements[ib]);
            if ea.angular.l != eb.angular.l {
                continue;
            }
            let alpha_sum = ea.alpha_j + eb.alpha_j;
            if spec.amplitude_a != 0.0 {
                assert!(
                    alpha_sum + 2.0 * params.s - spec.epsilon < params.n_dim as f64,
                    "singular coupling entries must stay integrable"
                );
            }
            let key = (ea.j.min(eb.j), ea.j.max(eb.j));
            let cache = caches
                .entry(key)
                .or_insert_with(|| RadialFactorCache::new(-alpha_sum, eps_power, t));
            let (na, nb) = (ea.n, eb.n);
            let (b_a, b_b) = (ea.a_j + 1.0, eb.a_j + 1.0);
            let radial = |r: f64| {
                let (alpha_factor, eps_factor, exp_factor) = cache.factors(r);
                let h_scaled =
                    time_affine * (singular_weight * eps_factor + bounded_weight) * exp_factor;
                h_scaled * alpha_factor * p_poly(na, b_a, r * r / 4.0)
                    * p_poly(nb, b_b, r * r / 4.0)
            };
            let singular_power = if spec.amplitude_a != 0.0 {
                params.n_dim as f64 - 1.0 - alpha_sum + eps_power
            } else {
                params.n_dim as f64 - 1.0 - alpha_sum
            };
            let integral = trace_gaussian_integral(radial, params, singular_power, order, 3.0)?;
            let value = integral / area * ea.angular.equator_trace * eb.angular.equator_trace
                / (ea.norm_const * eb.norm_const);
            m[ia][ib] = value;
            m[ib][ia] = value;
        }
    }
    Ok(m)
}

/// Height H = sum of squared coefficients.
pub fn height(state: &SpectralState) -> f64 {
    state.coeffs.iter().map(|c| c * c).sum()
}

/// Energy D = (sum gamma_a c_a^2 - c^T M c) / t for the coupling
/// matrix at the state's time.
pub fn dirichlet(state: &SpectralState, table: &SpectrumTable, m: &[Vec<f64>]) -> f64 {
    let spectral: f64 = table
        .elements
        .iter()
        .zip(&state.coeffs)
        .map(|(e, &c)| e.gamma * c * c)
        .sum();
    let coupling: f64 = state
        .coeffs
        .iter()
        .zip(m)
        .map(|(&ci, row)| ci * row.iter().zip(&state.coeffs).map(|(&v, &cj)| v * cj).sum::<f64>())
        .sum();
    (spectral - coupling) / state.t
}

/// Frequency quotient N = tD/H; errors at zero height and asserts the
/// lower bound N > -(N+2-2s)/4.
pub fn frequency(
    state: &SpectralState,
    table: &SpectrumTable,
    m: &[Vec<f64>],
) -> Result<f64, EvolutionError> {
    let h = height(state);
    if h == 0.0 {
        return Err(EvolutionError::ZeroHeight);
    }
    let n = state.t * dirichlet(state, table, m) / h;
    let bound = (table.params.n_dim as f64 + 2.0 - 2.0 * table.params.s) / 4.0;
    assert!(n > -bound, "frequency fell below the spectral lower bound");
    Ok(n)
}

/// Linear-in-log-t interpolation bracket of the coupling matrix.
struct CouplingTracker {
    tau_hi: f64,
    tau_lo: f64,
    m_hi: Vec<Vec<f64>>,
    m_lo: Vec<Vec<f64>>,
}

impl CouplingTracker {
    fn assemble(
        config: &EvolutionConfig,
        spec: &PerturbationSpec,
        tau: f64,
    ) -> Result<Vec<Vec<f64>>, EvolutionError> {
        coupling_matrix(
            &config.table,
            Some(spec),
            tau.exp(),
            &config.params,
            config.coupling_order,
        )
    }

    fn new(
        config: &EvolutionConfig,
        spec: &PerturbationSpec,
        tau_start: f64,
    ) -> Result<Self, EvolutionError> {
        let tau_lo = tau_start - REFRESH_LOG_INTERVAL;
        Ok(CouplingTracker {
            tau_hi: tau_start,
            tau_lo,
            m_hi: Self::assemble(config, spec, tau_start)?,
            m_lo: Self::assemble(config, spec, tau_lo)?,
        })
    }

    /// Moves the bracket down until tau lies strictly above its lower
    /// edge, so a step starting at tau stays inside the bracket.
    fn advance_past(
        &mut self,
        config: &EvolutionConfig,
        spec: &PerturbationSpec,
        tau: f64,
    ) -> Result<(), EvolutionError> {
        while self.tau_lo >= tau {
            self.tau_hi = self.tau_lo;
            std::mem::swap(&mut self.m_hi, &mut self.m_lo);
            self.tau_lo -= REFRESH_LOG_INTERVAL;
            self.m_lo = Self::assemble(config, spec, self.tau_lo)?;
        }
        Ok(())
    }

    /// M interpolated at tau, which must lie inside the bracket.
    fn apply(&self, tau: f64, c: &[f64], out: &mut [f64]) {
        let weight_hi = (tau - self.tau_lo) / (self.tau_hi - self.tau_lo);
        let weight_lo = 1.0 - weight_hi;
        for (i, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            let (row_hi, row_lo) = (&self.m_hi[i], &self.m_lo[i]);
            for (j, &cj) in c.iter().enumerate() {
                acc += (weight_lo * row_lo[j] + weight_hi * row_hi[j]) * cj;
            }
            *slot = acc;
        }
    }
}

/// Dormand-Prince 5(4) stage and weight coefficients.
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];
const DP_C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

/// Integrates the coefficient system from t_start down to t_end and
/// samples (t, H, D, N) on the geometric grid of the config.
pub fn evolve(config: &EvolutionConfig) -> Result<EvolutionRun, EvolutionError> {
    config.validate()?;
    let n_els = config.initial.len();
    let gammas: Vec<f64> = config.table.elements.iter().map(|e| e.gamma).collect();
    let freq_bound = (config.params.n_dim as f64 + 2.0 - 2.0 * config.params.s) / 4.0;

    let tau_start = config.t_start.ln();
    let tau_end = config.t_end.ln();
    let delta = config.sample_ratio.ln();
    let interior = ((tau_start - tau_end) / delta).ceil() as usize;
    let sample_taus: Vec<f64> = (0..interior)
        .map(|k| tau_start - k as f64 * delta)
        .chain(std::iter::once(tau_end))
        .collect();

    let mut tracker = match &config.pert {
        Some(spec) => Some(CouplingTracker::new(config, spec, tau_start)?),
        None => None,
    };

    let rhs = |tracker: &Option<CouplingTracker>,
               tau: f64,
               c: &[f64],
               product: &mut [f64],
               out: &mut [f64]| {
        match tracker {
            Some(tr) => tr.apply(tau, c, product),
            None => product.iter_mut().for_each(|p| *p = 0.0),
        }
        for i in 0..c.len() {
            out[i] = gammas[i] * c[i] - product[i];
        }
    };

    let mut states = Vec::with_capacity(sample_taus.len());
    let mut samples = Vec::with_capacity(sample_taus.len());
    let mut record = |tau: f64, c: &[f64], product: &[f64]| {
        let t = tau.exp();
        let h: f64 = c.iter().map(|v| v * v).sum();
        let spectral: f64 = gammas.iter().zip(c).map(|(&g, &v)| g * v * v).sum();
        let coupling: f64 = c.iter().zip(product).map(|(&v, &p)| v * p).sum();
        let td = spectral - coupling;
        let n = if h > 0.0 { td / h } else { 0.0 };
        if h > 0.0 {
            assert!(
                n > -freq_bound,
                "frequency fell below the spectral lower bound"
            );
        }
        states.push(SpectralState {
            t,
            coeffs: c.to_vec(),
            coupling_apply: product.to_vec(),
        });
        samples.push(TraceSample {
            t,
            h,
            d: td / t,
            n,
        });
    };

    let mut tau = tau_start;
    let mut c = config.initial.clone();
    let mut product = vec![0.0; n_els];
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n_els]; 7];
    let mut stage = vec![0.0; n_els];
    let mut c_new = vec![0.0; n_els];

    rhs(&tracker, tau, &c, &mut product, &mut k[0]);
    record(tau, &c, &product);

    let step_cap = delta.min(config.max_log_step).min(REFRESH_LOG_INTERVAL);
    let mut h_ctrl = step_cap;
    for &tau_target in &sample_taus[1..] {
        while tau > tau_target {
            if let (Some(tr), Some(spec)) = (tracker.as_mut(), config.pert.as_ref()) {
                tr.advance_past(config, spec, tau)?;
            }
            // steps stop exactly on the next sample or bracket edge
            let stop = match &tracker {
                Some(tr) => tau_target.max(tr.tau_lo),
                None => tau_target,
            };
            let dist = tau - stop;
            let mut h_mag = h_ctrl.min(dist);
            loop {
                if h_mag < MIN_LOG_STEP {
                    return Err(EvolutionError::StepUnderflow { t: tau.exp() });
                }
                let snapping = h_mag + 1e-12 >= dist;
                if snapping {
                    h_mag = dist;
                }
                let h_try = -h_mag;
                for s in 0..6 {
                    for i in 0..n_els {
                        let mut acc = c[i];
                        for (j, kj) in k.iter().enumerate().take(s + 1) {
                            acc += h_try * DP_A[s][j] * kj[i];
                        }
                        stage[i] = acc;
                    }
                    rhs(
                        &tracker,
                        tau + DP_C[s] * h_try,
                        &stage,
                        &mut product,
                        &mut k[s + 1],
                    );
                }
                let mut err_sq = 0.0;
                let mut norm_old = 0.0f64;
                let mut norm_new = 0.0f64;
                for i in 0..n_els {
                    let mut acc5 = 0.0;
                    let mut acc4 = 0.0;
                    for (j, kj) in k.iter().enumerate() {
                        acc5 += DP_B5[j] * kj[i];
                        acc4 += DP_B4[j] * kj[i];
                    }
                    c_new[i] = c[i] + h_try * acc5;
                    let e = h_try * (acc5 - acc4);
                    err_sq += e * e;
                    norm_old = norm_old.max(c[i].abs());
                    norm_new = norm_new.max(c_new[i].abs());
                }
                let scale = 1e-300 + config.rtol * norm_old.max(norm_new);
                let err = (err_sq / n_els as f64).sqrt() / scale;
                if err <= 1.0 {
                    tau = if snapping { stop } else { tau + h_try };
                    std::mem::swap(&mut c, &mut c_new);
                    // the last stage sits at the step end, so it seeds
                    // the next step
                    k.swap(0, 6);
                    if !snapping {
                        let grow = if err == 0.0 {
                            5.0
                        } else {
                            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                        };
                        h_ctrl = (h_mag * grow).min(step_cap);
                    }
                    if !c.iter().all(|v| v.is_finite() && v.abs() <= OVERFLOW_LIMIT) {
                        return Err(EvolutionError::Overflow { t: tau.exp() });
                    }
                    break;
                }
                h_mag *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.5);
                h_ctrl = h_mag;
            }
        }
        match &tracker {
            Some(tr) => tr.apply(tau, &c, &mut product),
            None => product.iter_mut().for_each(|p| *p = 0.0),
        }
        record(tau, &c, &product);
    }

    Ok(EvolutionRun {
        states,
        trace: FrequencyTrace {
            samples,
            gamma_limit: None,
            fit_window: None,
        },
    })
}

/// Largest relative defect of the identity H' = 2D over the trace,
/// measured with a fourth-order central stencil on log H versus
/// log t so the comparison is exact on pure power laws.
pub fn verify_h_prime(trace: &FrequencyTrace) -> Result<f64, EvolutionError> {
    let s = &trace.samples;
    if s.len() < 5 {
        return Err(EvolutionError::DegenerateWindow { samples: s.len() });
    }
    let delta = s[0].t.ln() - s[1].t.ln();
    let mut worst = 0.0f64;
    for i in 2..s.len() - 2 {
        let uniform = (s[i - 1].t.ln() - s[i].t.ln() - delta).abs() <= 1e-12 * delta
            && (s[i + 1].t.ln() - s[i + 2].t.ln() - delta).abs() <= 1e-12 * delta
            && (s[i].t.ln() - s[i + 1].t.ln() - delta).abs() <= 1e-12 * delta
            && (s[i - 2].t.ln() - s[i - 1].t.ln() - delta).abs() <= 1e-12 * delta;
        if !uniform || s[i].h <= 0.0 {
            continue;
        }
        // samples run toward smaller t, so index order reverses sign
        let slope = (-s[i - 2].h.ln() + 8.0 * s[i - 1].h.ln() - 8.0 * s[i + 1].h.ln()
            + s[i + 2].h.ln())
            / (12.0 * delta);
        let target = 2.0 * s[i].n;
        let defect = (slope - target).abs() / target.abs().max(1.0);
        worst = worst.max(defect);
    }
    Ok(worst)
}

/// Least-squares vanishing order from the trace.
#[derive(Debug, Clone, Copy)]
pub struct VanishingOrderFit {
    /// Half the slope of log H against log t.
    pub gamma: f64,
    /// Root-mean-square residual of the linear fit in log H.
    pub residual: f64,
    /// max/min of t^{-2 gamma} H over the window.
    pub flatness: f64,
}

/// Fits log H = 2 gamma log t + const over the window (t_lo, t_hi).
pub fn fit_vanishing_order(
    trace: &FrequencyTrace,
    window: (f64, f64),
) -> Result<VanishingOrderFit, EvolutionError> {
    let (t_lo, t_hi) = window;
    let points: Vec<(f64, f64)> = trace
        .samples
        .iter()
        .filter(|s| s.t >= t_lo && s.t <= t_hi)
        .map(|s| (s.t, s.h))
        .collect();
    if points.len() < 3 {
        return Err(EvolutionError::DegenerateWindow {
            samples: points.len(),
        });
    }
    if points.iter().any(|&(_, h)| h <= 0.0) {
        return Err(EvolutionError::ZeroHeight);
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(t, h) in &points {
        let (x, y) = (t.ln(), h.ln());
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let mut residual_sq = 0.0;
    let mut log_flat_min = f64::INFINITY;
    let mut log_flat_max = f64::NEG_INFINITY;
    for &(t, h) in &points {
        let r = h.ln() - slope * t.ln() - intercept;
        residual_sq += r * r;
        let flat = h.ln() - slope * t.ln();
        log_flat_min = log_flat_min.min(flat);
        log_flat_max = log_flat_max.max(flat);
    }
    Ok(VanishingOrderFit {
        gamma: slope / 2.0,
        residual: (residual_sq / n).sqrt(),
        flatness: (log_flat_max - log_flat_min).exp(),
    })
}

/// The extracted frequency limit and its diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct FrequencyLimit {
    /// N at the final sample.
    pub value: f64,
    /// Spread of N over the last sampled decade of t.
    pub variation: f64,
    /// Whether the spread stayed within the requested tolerance.
    pub cauchy: bool,
    /// Closest eigenvalue in the table.
    pub nearest_gamma: f64,
    /// Distance to that eigenvalue.
    pub distance: f64,
}

/// Reads the frequency limit off the end of a trace and matches it to
/// the nearest table eigenvalue.
pub fn frequency_limit(
    trace: &FrequencyTrace,
    table: &SpectrumTable,
    tolerance: f64,
) -> Result<FrequencyLimit, EvolutionError> {
    let s = &trace.samples;
    if s.len() < 2 {
        return Err(EvolutionError::DegenerateWindow { samples: s.len() });
    }
    let (t_first, t_last) = (s[0].t, s[s.len() - 1].t);
    if t_last > 1e-3 * t_first {
        return Err(EvolutionError::OutOfRange {
            what: "trace must reach t_end <= 1e-3 t_start",
            value: t_last,
        });
    }
    let value = s[s.len() - 1].n;
    let mut lo = value;
    let mut hi = value;
    for sample in s.iter().rev().take_while(|q| q.t <= 10.0 * t_last) {
        lo = lo.min(sample.n);
        hi = hi.max(sample.n);
    }
    let variation = hi - lo;
    let (nearest_gamma, distance) = table
        .elements
        .iter()
        .map(|e| (e.gamma, (e.gamma - value).abs()))
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .expect("spectrum tables are nonempty");
    Ok(FrequencyLimit {
        value,
        variation,
        cauchy: variation <= tolerance,
        nearest_gamma,
        distance,
    })
}

/// Blow-up profile coordinates over the limit eigenvalue group.
#[derive(Debug, Clone)]
pub struct BetaReport {
    /// The limit eigenvalue shared by the group.
    pub gamma: f64,
    /// The scale the terminal projection was taken at, snapped to the
    /// sample grid.
    pub lambda: f64,
    /// Table indices of the limit group.
    pub group: Vec<usize>,
    /// One coefficient per group member.
    pub beta: Vec<f64>,
}

/// Index of the stored state closest to time t in log scale.
fn nearest_state(states: &[SpectralState], t: f64) -> usize {
    let target = t.ln();
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, state) in states.iter().enumerate() {
        let d = (state.t.ln() - target).abs();
        if d < best_dist {
            best_dist = d;
            best = i;
        }
    }
    best
}

/// Profile coordinates at scale Lambda: the terminal projection
/// `Lambda^{-2 gamma} c(Lambda^2)` plus the accumulated coupling
/// correction `2 int_0^Lambda tau^{-1-2 gamma} [M c](tau^2) d tau`,
/// integrated by trapezoid over the stored sample grid. The correction
/// below the smallest stored tau is dropped; it is the same for every
/// Lambda, so comparisons across a Lambda grid are unaffected.
pub fn beta_coefficients(
    run: &EvolutionRun,
    config: &EvolutionConfig,
    lambda_big: f64,
) -> Result<BetaReport, EvolutionError> {
    let states = &run.states;
    if states.len() < 3 {
        return Err(EvolutionError::DegenerateWindow {
            samples: states.len(),
        });
    }
    let t_target = lambda_big * lambda_big;
    let (t_first, t_last) = (states[0].t, states[states.len() - 1].t);
    if !(t_target >= t_last && t_target <= t_first) {
        return Err(EvolutionError::OutOfRange {
            what: "Lambda^2 must lie in the sampled range",
            value: t_target,
        });
    }
    let limit = frequency_limit(&run.trace, &config.table, f64::INFINITY)?;
    let group = config
        .table
        .groups
        .iter()
        .find(|g| config.table.elements[g[0]].gamma == limit.nearest_gamma)
        .expect("the nearest eigenvalue belongs to some group")
        .clone();
    let gamma = limit.nearest_gamma;

    let anchor = nearest_state(states, t_target);
    if anchor + 2 >= states.len() {
        return Err(EvolutionError::InsufficientResolution {
            what: "states below Lambda^2 for the coupling correction",
        });
    }
    let lambda = states[anchor].t.sqrt();
    let mut beta = Vec::with_capacity(group.len());
    for &idx in &group {
        let terminal = lambda.powf(-2.0 * gamma) * states[anchor].coeffs[idx];
        // integrand tau^{-1-2 gamma} [M c]_a at tau = sqrt(t), walking
        // from the smallest stored time up to the anchor
        let mut integral = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for state in states[anchor..].iter().rev() {
            let tau = state.t.sqrt();
            let w = tau.powf(-1.0 - 2.0 * gamma) * state.coupling_apply[idx];
            if let Some((tau_prev, w_prev)) = prev {
                integral += 0.5 * (w + w_prev) * (tau - tau_prev);
            }
            prev = Some((tau, w));
        }
        beta.push(terminal + 2.0 * integral);
    }
    Ok(BetaReport {
        gamma,
        lambda,
        group,
        beta,
    })
}

/// Distances between the rescaled trajectory and the blow-up profile.
#[derive(Debug, Clone, Copy)]
pub struct ProfileError {
    /// Supremum over the tau grid of the Euclidean coefficient
    /// distance.
    pub err_l: f64,
    /// Integral over the tau grid of the energy-norm distance.
    pub err_h: f64,
}

/// Compares `lambda^{-2 gamma} c(lambda^2 tau)` against the profile
/// `tau^gamma sum beta Y` on the tau grid; the energy norm is taken
/// with the supplied Gram matrix.
pub fn blowup_profile_error(
    run: &EvolutionRun,
    table: &SpectrumTable,
    h_gram: &[Vec<f64>],
    beta: &BetaReport,
    lambda: f64,
    tau_grid: &[f64],
) -> Result<ProfileError, EvolutionError> {
    if tau_grid.len() < 2 {
        return Err(EvolutionError::DegenerateWindow {
            samples: tau_grid.len(),
        });
    }
    let states = &run.states;
    let (t_first, t_last) = (states[0].t, states[states.len() - 1].t);
    let n_els = table.elements.len();
    let mut sup_l = 0.0f64;
    let mut h_values = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let t = lambda * lambda * tau;
        if !(t >= t_last && t <= t_first) {
            return Err(EvolutionError::OutOfRange {
                what: "lambda^2 tau must lie in the sampled range",
                value: t,
            });
        }
        let state = &states[nearest_state(states, t)];
        let scale = lambda.powf(-2.0 * beta.gamma);
        let mut diff: Vec<f64> = state.coeffs.iter().map(|&c| scale * c).collect();
        for (slot, &idx) in beta.group.iter().enumerate() {
            diff[idx] -= tau.powf(beta.gamma) * beta.beta[slot];
        }
        let l_norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        sup_l = sup_l.max(l_norm);
        let mut quad = 0.0;
        for i in 0..n_els {
            for j in 0..n_els {
                quad += diff[i] * h_gram[i][j] * diff[j];
            }
        }
        h_values.push(quad.max(0.0).sqrt());
    }
    let mut err_h = 0.0;
    for i in 1..tau_grid.len() {
        err_h += 0.5 * (h_values[i] + h_values[i - 1]) * (tau_grid[i] - tau_grid[i - 1]);
    }
    Ok(ProfileError {
        err_l: sup_l,
        err_h,
    })
}

/// Runs the config and checks positivity propagation: zero data must
/// stay identically zero, nonzero data must keep H positive at every
/// sample.
pub fn backward_uniqueness_check(config: &EvolutionConfig) -> Result<bool, EvolutionError> {
    let run = evolve(config)?;
    let zero_data = config.initial.iter().all(|&c| c == 0.0);
    if zero_data {
        Ok(run.trace.samples.iter().all(|s| s.h == 0.0))
    } else {
        Ok(run.trace.samples.iter().all(|s| s.h > 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::perturbation_eval;
    use crate::ou_spectrum::{build_spectrum, OUBasisElement};
    use crate::spherical_spectrum::{merge_sector_spectra, solve_sector, AngularMode, SectorProblem};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(n_dim: u32, s: f64, mu: f64) -> ModelParams {
        ModelParams::new(n_dim, s, mu, None).unwrap()
    }

    /// Synthetic one-sector element with a prescribed eigenvalue; the
    /// radial exponent is chosen so that gamma = -alpha/2 at n = 0.
    fn synthetic_element(j: usize, gamma: f64, trace: f64, p: &ModelParams) -> OUBasisElement {
        let alpha = -2.0 * gamma;
        OUBasisElement {
            n: 0,
            j,
            alpha_j: alpha,
            a_j: p.half_deficit() - alpha,
            gamma,
            norm_const: 1.0,
            angular: AngularMode {
                index_k: j,
                l: 0,
                nu: alpha * alpha - 2.0 * p.half_deficit() * alpha,
                f_values: Vec::new(),
                mesh: Vec::new(),
                equator_trace: trace,
                sphere_norm: 1.0,
            },
        }
    }

    fn synthetic_table(gammas: &[f64], p: &ModelParams) -> SpectrumTable {
        let elements: Vec<OUBasisElement> = gammas
            .iter()
            .enumerate()
            .map(|(i, &g)| synthetic_element(i + 1, g, 0.8, p))
            .collect();
        let groups = (0..elements.len()).map(|i| vec![i]).collect();
        SpectrumTable {
            elements,
            groups,
            params: p.clone(),
        }
    }

    /// A small table built through the real sector pipeline, for the
    /// coupling-matrix tests that need genuine norms and traces.
    fn real_flat_table(n_max: u32) -> (SpectrumTable, ModelParams) {
        let p = params(3, 0.5, 0.0);
        let problem = SectorProblem::graded(p.clone(), 0, 64).unwrap();
        let modes = merge_sector_spectra(vec![solve_sector(&problem, 1).unwrap()]);
        let table = build_spectrum(&modes, n_max, &p).unwrap();
        (table, p)
    }

    fn bounded_spec(amplitude: f64) -> PerturbationSpec {
        PerturbationSpec {
            amplitude_a: 0.0,
            amplitude_b: amplitude,
            epsilon: 0.5,
            time_slope: 0.0,
            c_g: amplitude.abs().max(1.0) * 2.0,
        }
    }

    #[test]
    fn coupling_without_perturbation_is_zero() {
        let p = params(3, 0.5, 0.0);
        let table = synthetic_table(&[0.5, 1.5], &p);
        let m = coupling_matrix(&table, None, 0.3, &p, 32).unwrap();
        assert!(m.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn coupling_matches_dense_radial_oracle() {
        let (table, p) = real_flat_table(2);
        let spec = PerturbationSpec {
            amplitude_a: 0.3,
            amplitude_b: 0.7,
            epsilon: 0.5,
            time_slope: 0.5,
            c_g: 5.0,
        };
        for &t in &[1.0, 0.3] {
            let m = coupling_matrix(&table, Some(&spec), t, &p, 64).unwrap();
            // dense trapezoid oracle on the same definition, using the
            // perturbation evaluated at the rescaled radius directly
            let grid = 2_000_000usize;
            let r_max = 40.0;
            let h_grid = r_max / grid as f64;
            for ia in 0..table.elements.len() {
                for ib in ia..table.elements.len() {
                    let (ea, eb) = (&table.elements[ia], &table.elements[ib]);
                    let mut sum = 0.0;
                    for g in 1..=grid {
                        let r = g as f64 * h_grid;
                        let weight = if g == grid { 0.5 } else { 1.0 };
                        let h_val =
                            perturbation_eval(&spec, &p, t.sqrt() * r, t).unwrap();
                        sum += weight
                            * t.powf(p.s)
                            * h_val
                            * r.powf(-ea.alpha_j - eb.alpha_j)
                            * p_poly(ea.n, ea.a_j + 1.0, r * r / 4.0)
                            * p_poly(eb.n, eb.a_j + 1.0, r * r / 4.0)
                            * r.powf(p.n_dim as f64 - 1.0)
                            * (-r * r / 4.0).exp();
                    }
                    let oracle = sum * h_grid * ea.angular.equator_trace
                        * eb.angular.equator_trace
                        / (ea.norm_const * eb.norm_const);
                    assert_relative_eq!(m[ia][ib], oracle, max_relative = 1e-8);
                }
            }
        }
    }

    #[test]
    fn coupling_order_is_converged() {
        let (table, p) = real_flat_table(3);
        let spec = PerturbationSpec {
            amplitude_a: 0.1,
            amplitude_b: 1.0,
            epsilon: 0.5,
            time_slope: 0.5,
            c_g: 1.65,
        };
        let coarse = coupling_matrix(&table, Some(&spec), 0.2, &p, DEFAULT_COUPLING_ORDER).unwrap();
        let fine = coupling_matrix(&table, Some(&spec), 0.2, &p, 64).unwrap();
        for (row_c, row_f) in coarse.iter().zip(&fine) {
            for (&a, &b) in row_c.iter().zip(row_f) {
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn bounded_coupling_obeys_scale_envelope() {
        let (table, p) = real_flat_table(2);
        let spec = bounded_spec(0.8);
        // the perturbation really is subhomogeneously bounded by c_g
        let grid: Vec<(f64, f64)> = (1..60)
            .flat_map(|i| {
                let r = 1e-3 * (10.0f64 / 1e-3).powf(i as f64 / 59.0);
                [(r, 0.0), (r, 0.5), (r, 1.0)]
            })
            .collect();
        let (holds, _) = crate::model::check_subhomogeneous_bound(&spec, &p, &grid).unwrap();
        assert!(holds);
        // bounding exp(-t r^2) by one and h by its subhomogeneous
        // envelope turns every entry into a t-independent integral
        // K_ab times c_g (t^s + t^{eps/2}); the empirical constant is
        // the largest K_ab over the product of the energy norms
        let n_els = table.elements.len();
        let area = sphere_area(&p);
        let eps_power = spec.epsilon - 2.0 * p.s;
        let h_norms: Vec<f64> = table
            .elements
            .iter()
            .map(|e| (1.0 + e.gamma).sqrt())
            .collect();
        let mut c_emp = 0.0f64;
        let mut k_bound = vec![vec![0.0; n_els]; n_els];
        for ia in 0..n_els {
            for ib in ia..n_els {
                let (ea, eb) = (&table.elements[ia], &table.elements[ib]);
                let alpha_sum = ea.alpha_j + eb.alpha_j;
                let radial = |r: f64| {
                    (1.0 + r.powf(eps_power))
                        * r.powf(-alpha_sum)
                        * (p_poly(ea.n, ea.a_j + 1.0, r * r / 4.0)
                            * p_poly(eb.n, eb.a_j + 1.0, r * r / 4.0))
                        .abs()
                };
                let power = p.n_dim as f64 - 1.0 - alpha_sum + eps_power;
                let integral = trace_gaussian_integral(radial, &p, power, 64, 3.0).unwrap();
                let k = integral / area
                    * (ea.angular.equator_trace * eb.angular.equator_trace).abs()
                    / (ea.norm_const * eb.norm_const);
                k_bound[ia][ib] = k;
                k_bound[ib][ia] = k;
                c_emp = c_emp.max(k / (h_norms[ia] * h_norms[ib]));
            }
        }
        assert!(c_emp > 0.0);
        for &t in &[1e-3, 0.01, 0.1, 0.3, 1.0] {
            let m = coupling_matrix(&table, Some(&spec), t, &p, 48).unwrap();
            let envelope = spec.c_g * (t.powf(p.s) + t.powf(spec.epsilon / 2.0));
            for ia in 0..n_els {
                for ib in 0..n_els {
                    assert!(
                        m[ia][ib].abs()
                            <= 1.02 * c_emp * envelope * h_norms[ia] * h_norms[ib],
                        "coupling outgrew its scale envelope at t = {t}"
                    );
                }
            }
        }
    }

    fn unperturbed_config(
        gammas: &[f64],
        initial: Vec<f64>,
        t_end: f64,
        ratio: f64,
    ) -> EvolutionConfig {
        let p = params(3, 0.5, 0.0);
        let table = synthetic_table(gammas, &p);
        let mut config = EvolutionConfig::new(p, table, None, 1.0, t_end, initial);
        config.sample_ratio = ratio;
        config
    }

    #[test]
    fn single_mode_follows_the_power_law() {
        let gamma = 0.75;
        let config = unperturbed_config(&[gamma], vec![2.0], 1e-4, 1.01);
        let run = evolve(&config).unwrap();
        for state in &run.states {
            let exact = 2.0 * state.t.powf(gamma);
            assert_relative_eq!(state.coeffs[0], exact, max_relative = 1e-9);
        }
        for sample in &run.trace.samples {
            assert!((sample.n - gamma).abs() <= 1e-12);
        }
        assert_relative_eq!(run.states.last().unwrap().t, 1e-4, max_relative = 1e-12);
    }

    #[test]
    fn two_mode_frequency_matches_closed_form() {
        let config = unperturbed_config(&[0.5, 1.5], vec![1.0, 1.0], 1e-3, 1.01);
        let run = evolve(&config).unwrap();
        for sample in &run.trace.samples {
            let t = sample.t;
            let exact = (0.5 * t + 1.5 * t.powi(3)) / (t + t.powi(3));
            assert!((sample.n - exact).abs() <= 1e-9);
        }
        // spot value near the singular end
        let near = run
            .trace
            .samples
            .iter()
            .min_by(|a, b| (a.t - 0.01).abs().total_cmp(&(b.t - 0.01).abs()))
            .unwrap();
        assert!((near.n - 0.5001).abs() <= 2e-4);
        // frequency is non-decreasing in t, so non-increasing along
        // the stored order
        for pair in run.trace.samples.windows(2) {
            assert!(pair[1].n <= pair[0].n + 1e-9);
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let config = unperturbed_config(&[0.5], vec![1.0], 2.0, 1.01);
        assert!(matches!(
            evolve(&config),
            Err(EvolutionError::InvalidConfig { .. })
        ));
        let mut config = unperturbed_config(&[0.5], vec![1.0], 1e-3, 1.01);
        config.rtol = 1e-2;
        assert!(matches!(
            evolve(&config),
            Err(EvolutionError::InvalidConfig { .. })
        ));
        let config = unperturbed_config(&[0.5], vec![1.0, 2.0], 1e-3, 1.01);
        assert!(matches!(
            evolve(&config),
            Err(EvolutionError::InvalidConfig { .. })
        ));
    }

    #[test]
    fn growth_past_the_limit_reports_overflow() {
        // gamma < 0 grows toward t -> 0; from 1e140 the overflow limit
        // is crossed long before t_end
        let mut config = unperturbed_config(&[-0.9], vec![1e140], 1e-12, 1.05);
        config.max_log_step = 0.05;
        match evolve(&config) {
            Err(EvolutionError::Overflow { t }) => assert!(t < 1.0),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn scalar_observables_match_definitions() {
        let p = params(3, 0.5, 0.0);
        let table = synthetic_table(&[0.5, 1.5], &p);
        let zero_m = vec![vec![0.0; 2]; 2];
        let state = SpectralState {
            t: 0.7,
            coeffs: vec![1.0, 0.0],
            coupling_apply: vec![0.0, 0.0],
        };
        assert_eq!(height(&state), 1.0);
        assert_relative_eq!(
            state.t * dirichlet(&state, &table, &zero_m),
            0.5,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            frequency(&state, &table, &zero_m).unwrap(),
            0.5,
            max_relative = 1e-15
        );
        let both = SpectralState {
            t: 0.7,
            coeffs: vec![1.0, 1.0],
            coupling_apply: vec![0.0, 0.0],
        };
        assert_relative_eq!(
            frequency(&both, &table, &zero_m).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        let empty = SpectralState {
            t: 0.7,
            coeffs: vec![0.0, 0.0],
            coupling_apply: vec![0.0, 0.0],
        };
        assert!(matches!(
            frequency(&empty, &table, &zero_m),
            Err(EvolutionError::ZeroHeight)
        ));
    }

    #[test]
    fn h_prime_identity_holds_on_closed_forms() {
        let config = unperturbed_config(&[0.75], vec![1.0], 1e-3, 1.01);
        let run = evolve(&config).unwrap();
        assert!(verify_h_prime(&run.trace).unwrap() <= 1e-6);
        let config = unperturbed_config(&[0.5, 1.5], vec![1.0, 1.0], 1e-3, 1.01);
        let run = evolve(&config).unwrap();
        assert!(verify_h_prime(&run.trace).unwrap() <= 1e-6);
    }

    #[test]
    fn vanishing_order_fit_recovers_the_exponent() {
        let config = unperturbed_config(&[0.75], vec![1.3], 1e-4, 1.01);
        let run = evolve(&config).unwrap();
        let fit = fit_vanishing_order(&run.trace, (1e-4, 1.0)).unwrap();
        assert!((fit.gamma - 0.75).abs() <= 1e-8);
        assert!(fit.flatness <= 1.0 + 1e-9);
        assert!(fit.residual <= 1e-9);

        let config = unperturbed_config(&[0.5, 1.5], vec![1.0, 1.0], 1e-5, 1.01);
        let run = evolve(&config).unwrap();
        let fit = fit_vanishing_order(&run.trace, (1e-4, 1e-3)).unwrap();
        assert!((fit.gamma - 0.5).abs() <= 1e-3);

        assert!(matches!(
            fit_vanishing_order(&run.trace, (1e-4, 1.0001e-4)),
            Err(EvolutionError::DegenerateWindow { .. })
        ));
    }

    #[test]
    fn frequency_limit_selects_the_smallest_active_gamma() {
        let config = unperturbed_config(&[0.5, 1.5], vec![1.0, 1.0], 1e-10, 1.01);
        let run = evolve(&config).unwrap();
        let limit = frequency_limit(&run.trace, &config.table, 1e-6).unwrap();
        assert!((limit.value - 0.5).abs() <= 1e-9);
        assert_eq!(limit.nearest_gamma, 0.5);
        assert!(limit.distance <= 1e-9);
        assert!(limit.cauchy);

        // data orthogonal to the lowest mode selects the next one
        let config = unperturbed_config(&[0.5, 1.5], vec![0.0, 1.0], 1e-10, 1.01);
        let run = evolve(&config).unwrap();
        let limit = frequency_limit(&run.trace, &config.table, 1e-6).unwrap();
        assert_eq!(limit.nearest_gamma, 1.5);
        assert!(limit.distance <= 1e-9);

        // a short trace is rejected
        let config = unperturbed_config(&[0.5], vec![1.0], 0.5, 1.01);
        let run = evolve(&config).unwrap();
        assert!(matches!(
            frequency_limit(&run.trace, &config.table, 1e-6),
            Err(EvolutionError::OutOfRange { .. })
        ));
    }

    #[test]
    fn unperturbed_beta_is_lambda_independent() {
        let config = unperturbed_config(&[0.5, 1.5], vec![0.9, -0.4], 1e-8, 1.005);
        let run = evolve(&config).unwrap();
        let mut reports = Vec::new();
        for &lambda in &[0.5, 0.35, 0.25, 0.15] {
            reports.push(beta_coefficients(&run, &config, lambda).unwrap());
        }
        for report in &reports {
            assert_eq!(report.group, vec![0]);
            // the decoupled power law gives beta = c(t_start) exactly
            assert_relative_eq!(report.beta[0], 0.9, max_relative = 1e-8);
            assert!((report.beta[0] - reports[0].beta[0]).abs() <= 1e-9);
        }
    }

    #[test]
    fn perturbed_beta_is_stable_across_lambda() {
        let p = params(3, 0.5, 0.0);
        let table = synthetic_table(&[0.3, 1.1], &p);
        let spec = bounded_spec(0.05);
        let mut config =
            EvolutionConfig::new(p, table, Some(spec), 1.0, 1e-6, vec![1.0, 0.7]);
        config.sample_ratio = 1.005;
        let run = evolve(&config).unwrap();
        let beta_full = beta_coefficients(&run, &config, 0.3).unwrap();
        let beta_half = beta_coefficients(&run, &config, 0.15).unwrap();
        assert_eq!(beta_full.group, beta_half.group);
        for (a, b) in beta_full.beta.iter().zip(&beta_half.beta) {
            assert!((a - b).abs() <= 0.01 * b.abs().max(1e-12), "{a} vs {b}");
        }
        assert!(beta_full.beta.iter().any(|b| b.abs() > 1e-12));
    }

    #[test]
    fn small_perturbations_respond_linearly() {
        let p = params(3, 0.5, 0.0);
        let table = synthetic_table(&[0.5], &p);
        let base = EvolutionConfig::new(p.clone(), table.clone(), None, 1.0, 1e-3, vec![1.0]);
        let clean = evolve(&base).unwrap();
        let mut diffs = Vec::new();
        for amplitude in [1e-3, 5e-4] {
            let mut config = base.clone();
            config.pert = Some(bounded_spec(amplitude));
            let run = evolve(&config).unwrap();
            let last = run.states.last().unwrap();
            let reference = clean.states.last().unwrap();
            let diff = (last.coeffs[0] - reference.coeffs[0]).abs() / reference.coeffs[0].abs();
            assert!(diff <= 50.0 * amplitude, "response {diff} at {amplitude}");
            diffs.push(diff);
        }
        let ratio = diffs[0] / diffs[1];
        assert!((1.7..=2.3).contains(&ratio), "nonlinear response {ratio}");
    }

    #[test]
    fn energy_identity_holds_at_samples() {
        let p = params(3, 0.5, 0.0);
        let table = synthetic_table(&[0.2, 0.7], &p);
        let mut config = EvolutionConfig::new(
            p,
            table,
            Some(bounded_spec(0.05)),
            1.0,
            1e-3,
            vec![1.0, -0.5],
        );
        config.sample_ratio = 1.01;
        let run = evolve(&config).unwrap();
        for (state, sample) in run.states.iter().zip(&run.trace.samples) {
            let spectral: f64 = config
                .table
                .elements
                .iter()
                .zip(&state.coeffs)
                .map(|(e, &c)| e.gamma * c * c)
                .sum();
            let coupling: f64 = state
                .coeffs
                .iter()
                .zip(&state.coupling_apply)
                .map(|(&c, &q)| c * q)
                .sum();
            assert!((sample.d * sample.t - (spectral - coupling)).abs() <= 1e-12);
            assert!(sample.n > -(3.0 + 2.0 - 1.0) / 4.0);
        }
    }

    #[test]
    fn unperturbed_profile_error_shrinks_at_the_spectral_rate() {
        let config = unperturbed_config(&[0.0, 0.5], vec![1.0, 1.0], 1e-8, 1.005);
        let run = evolve(&config).unwrap();
        let beta = beta_coefficients(&run, &config, 0.05).unwrap();
        // without coupling the energy Gram is diagonal 1 + gamma
        let h_gram = vec![vec![1.0, 0.0], vec![0.0, 1.5]];
        let tau_grid: Vec<f64> = (0..=12).map(|i| 0.25 + 0.75 * i as f64 / 12.0).collect();
        let mut errors = Vec::new();
        for &lambda in &[0.2, 0.1, 0.05] {
            let err = blowup_profile_error(&run, &config.table, &h_gram, &beta, lambda, &tau_grid)
                .unwrap();
            errors.push(err);
        }
        for pair in errors.windows(2) {
            assert!(pair[1].err_l < pair[0].err_l);
            assert!(pair[1].err_h < pair[0].err_h);
        }
        // the leftover mode has gap 0.5, so the rate is lambda^1
        let rate = errors[0].err_l / errors[1].err_l;
        assert!((rate / 2.0 - 1.0).abs() <= 0.5, "rate {rate}");
    }

    #[test]
    fn backward_uniqueness_distinguishes_zero_data() {
        let zero = unperturbed_config(&[0.5, 1.5], vec![0.0, 0.0], 1e-4, 1.01);
        assert!(backward_uniqueness_check(&zero).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(20221210);
        for _ in 0..5 {
            let data: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if data.iter().all(|&c| c == 0.0) {
                continue;
            }
            let config = unperturbed_config(&[0.5, 1.5], data, 1e-4, 1.01);
            assert!(backward_uniqueness_check(&config).unwrap());
        }
    }
}
