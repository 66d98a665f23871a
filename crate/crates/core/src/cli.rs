//! Batch front door: JSON-configured commands that run the spectrum
//! computation, the backward evolution, the blow-up analysis, and the
//! inequality/consistency suites, emitting CSV and JSON artifacts.
//!
//! A single [`RunConfig`] JSON document describes the scenario; each
//! command reads it, recomputes what it needs, and writes its outputs
//! into the configured directory with atomic write-then-rename. All
//! numeric CSV columns carry 17 significant digits so reruns of the
//! same config are byte-identical.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::json;

use crate::evolution::{
    beta_coefficients, blowup_profile_error, evolve, frequency_limit, verify_h_prime, BetaReport,
    EvolutionConfig, EvolutionError, EvolutionRun, FREQUENCY_MATCH_TOLERANCE,
};
use crate::model::{ModelParams, PerturbationSpec};
use crate::ou_spectrum::{
    assemble_gaussian_forms, build_spectrum, coercivity_estimate, eigen_residual_check,
    gram_check, inequality_slacks, BasisRecord, OUSpectrumError, SpectrumTable,
};
use crate::quadrature::DEFAULT_RULE_ORDER;
use crate::spherical_spectrum::{
    graded_mesh, merge_sector_spectra, solve_sector, sphere_trace_inequality_check,
    SectorProblem, SpectrumError, MIN_ELEMENTS,
};

/// Default seed for the randomized property families.
pub const DEFAULT_SEED: u64 = 20221210;

/// Failures of a command, classified by the exit code they map to.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Config or input validation failed (exit 2).
    Validation(String),
    /// The spectral solver failed (exit 3).
    Solver(String),
    /// The evolution integrator or state resolution failed (exit 4).
    Evolution(String),
    /// Reading or writing an artifact failed (exit 2).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Evolution(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "validation: {msg}"),
            CliError::Solver(msg) => write!(f, "spectral solver: {msg}"),
            CliError::Evolution(msg) => write!(f, "evolution: {msg}"),
            CliError::Io(msg) => write!(f, "io: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<SpectrumError> for CliError {
    fn from(e: SpectrumError) -> Self {
        match e {
            SpectrumError::InvalidMesh { .. } | SpectrumError::InvalidCount { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<OUSpectrumError> for CliError {
    fn from(e: OUSpectrumError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<EvolutionError> for CliError {
    fn from(e: EvolutionError) -> Self {
        match e {
            EvolutionError::InvalidConfig { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Evolution(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// One angular sector to solve: harmonic degree and how many of its
/// lowest modes enter the basis.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorSpec {
    pub l: u32,
    pub count: usize,
}

/// Radial/angular truncation of the eigenbasis.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub n_max: u32,
    pub j_max: usize,
}

/// Polar mesh for the sector problems. Without an explicit grading
/// exponent the default equator-graded mesh is used.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub elements: usize,
    #[serde(default)]
    pub grading: Option<f64>,
}

/// Time range and step control of one evolution run.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSpec {
    pub t_start: f64,
    pub t_end: f64,
    pub rtol: f64,
    pub sample_ratio: f64,
}

/// One batch scenario: model, discretization, optional perturbation
/// and evolution window, and the scale grid for the blow-up analysis.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub sectors: Vec<SectorSpec>,
    pub basis: BasisSpec,
    pub mesh: MeshSpec,
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default)]
    pub evolution: Option<EvolutionSpec>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    pub output_dir: String,
    /// Seed override for randomized property families.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Initial coefficients at t_start; defaults to all ones.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

/// Parses and cross-validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config does not parse: {e}")))?;
    validate_config(&config)?;
    Ok(config)
}

fn validate_config(config: &RunConfig) -> Result<(), CliError> {
    if config.sectors.is_empty() {
        return Err(CliError::Validation("sectors list is empty".into()));
    }
    if config.sectors.iter().any(|s| s.count == 0) {
        return Err(CliError::Validation(
            "every sector must request at least one mode".into(),
        ));
    }
    if config.basis.j_max == 0 {
        return Err(CliError::Validation("j_max must be at least 1".into()));
    }
    if config.mesh.elements < MIN_ELEMENTS {
        return Err(CliError::Validation(format!(
            "mesh needs at least {MIN_ELEMENTS} elements, got {}",
            config.mesh.elements
        )));
    }
    if let Some(g) = config.mesh.grading {
        if !(g >= 1.0 && g.is_finite()) {
            return Err(CliError::Validation(format!(
                "mesh grading must be a finite exponent >= 1, got {g}"
            )));
        }
    }
    if let Some(pert) = &config.perturbation {
        if !(pert.epsilon > 0.0 && pert.epsilon < 2.0 * config.model.s) {
            return Err(CliError::Validation(format!(
                "perturbation epsilon must lie in (0, 2s), got {}",
                pert.epsilon
            )));
        }
    }
    if config.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(CliError::Validation(
            "lambdas must be positive and finite".into(),
        ));
    }
    Ok(())
}

/// Builds the polar mesh of the config.
fn config_mesh(config: &RunConfig) -> Vec<f64> {
    match config.mesh.grading {
        None => graded_mesh(config.mesh.elements, config.model.s),
        Some(g) => (0..=config.mesh.elements)
            .map(|i| {
                std::f64::consts::FRAC_PI_2
                    * (i as f64 / config.mesh.elements as f64).powf(g)
            })
            .collect(),
    }
}

/// Solves every configured sector and assembles the truncated
/// eigenbasis table.
pub fn build_table(config: &RunConfig) -> Result<SpectrumTable, CliError> {
    let params = config.model.clone();
    let mesh = config_mesh(config);
    let sector_modes: Vec<_> = config
        .sectors
        .par_iter()
        .map(|spec| {
            let problem = SectorProblem::new(params.clone(), spec.l, mesh.clone())?;
            solve_sector(&problem, spec.count)
        })
        .collect::<Result<_, _>>()?;
    let mut modes = merge_sector_spectra(sector_modes);
    modes.truncate(config.basis.j_max);
    Ok(build_spectrum(&modes, config.basis.n_max, &params)?)
}

/// Formats a float with 17 significant digits.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a file atomically: the content lands under a temporary name
/// and is renamed into place.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, contents)?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, &text)
}

/// Computes the eigenbasis and writes spectrum.csv and basis.json.
pub fn cmd_spectrum(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let table = build_table(config)?;
    let records = table.records();

    let mut csv = String::from("index,n,j,l,nu,alpha,a,gamma,norm_const,equator_trace\n");
    for (i, r) in records.iter().enumerate() {
        csv.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{},{}\n",
            r.n,
            r.j,
            r.l,
            fmt_float(r.nu),
            fmt_float(r.alpha),
            fmt_float(r.a),
            fmt_float(r.gamma),
            fmt_float(r.norm_const),
            fmt_float(r.equator_trace),
        ));
    }
    write_atomic(&out_dir.join("spectrum.csv"), &csv)?;

    let doc = json!({
        "params": table.params,
        "groups": table.groups,
        "elements": records,
    });
    write_json(&out_dir.join("basis.json"), &doc)
}

/// The evolution setup shared by cmd_evolve and cmd_blowup.
fn evolution_config(
    config: &RunConfig,
    table: SpectrumTable,
) -> Result<EvolutionConfig, CliError> {
    let evo = config.evolution.as_ref().ok_or_else(|| {
        CliError::Validation("this command needs an evolution block in the config".into())
    })?;
    let n_els = table.elements.len();
    let initial = match &config.initial {
        Some(values) => {
            if values.len() != n_els {
                return Err(CliError::Validation(format!(
                    "initial data has {} entries but the basis has {n_els}",
                    values.len()
                )));
            }
            values.clone()
        }
        None => vec![1.0; n_els],
    };
    let mut econfig = EvolutionConfig::new(
        config.model.clone(),
        table,
        config.perturbation.clone(),
        evo.t_start,
        evo.t_end,
        initial,
    );
    econfig.rtol = evo.rtol;
    econfig.sample_ratio = evo.sample_ratio;
    Ok(econfig)
}

fn run_evolution(config: &RunConfig) -> Result<(EvolutionConfig, EvolutionRun), CliError> {
    let table = build_table(config)?;
    let econfig = evolution_config(config, table)?;
    let run = evolve(&econfig)?;
    Ok((econfig, run))
}

/// Integrates the configured run and writes trace.csv, states.json and
/// summary.json (frequency limit and nearest-eigenvalue match).
pub fn cmd_evolve(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let (econfig, run) = run_evolution(config)?;

    let mut csv = String::from("t,H,D,N\n");
    for s in &run.trace.samples {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            fmt_float(s.t),
            fmt_float(s.h),
            fmt_float(s.d),
            fmt_float(s.n),
        ));
    }
    write_atomic(&out_dir.join("trace.csv"), &csv)?;

    let states: Vec<serde_json::Value> = run
        .states
        .iter()
        .map(|s| json!({"t": s.t, "coeffs": s.coeffs}))
        .collect();
    write_json(&out_dir.join("states.json"), &json!(states))?;

    // a run that does not reach deep enough for a limit still succeeds;
    // the summary then reports null
    let summary = match frequency_limit(&run.trace, &econfig.table, FREQUENCY_MATCH_TOLERANCE) {
        Ok(limit) => json!({
            "samples": run.trace.samples.len(),
            "gamma_limit": limit.nearest_gamma,
            "frequency_limit": {
                "value": limit.value,
                "variation": limit.variation,
                "cauchy": limit.cauchy,
                "nearest_gamma": limit.nearest_gamma,
                "distance": limit.distance,
            },
        }),
        Err(EvolutionError::OutOfRange { .. }) | Err(EvolutionError::DegenerateWindow { .. }) => {
            json!({
                "samples": run.trace.samples.len(),
                "gamma_limit": serde_json::Value::Null,
                "frequency_limit": serde_json::Value::Null,
            })
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&out_dir.join("summary.json"), &summary)
}

/// Runs the evolution, extracts the profile coordinates over the scale
/// grid, and writes beta.json and profile_errors.csv.
pub fn cmd_blowup(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    if config.lambdas.is_empty() {
        return Err(CliError::Validation(
            "blowup needs a nonempty lambdas list".into(),
        ));
    }
    let (econfig, run) = run_evolution(config)?;

    let reports: Vec<BetaReport> = config
        .lambdas
        .iter()
        .map(|&lambda| beta_coefficients(&run, &econfig, lambda))
        .collect::<Result<_, _>>()?;
    let doc = json!({
        "gamma": reports[0].gamma,
        "group": reports[0].group,
        "reports": reports
            .iter()
            .map(|r| json!({"lambda": r.lambda, "beta": r.beta}))
            .collect::<Vec<_>>(),
    });
    write_json(&out_dir.join("beta.json"), &doc)?;

    // profile errors against the coordinates anchored at the largest
    // scale (they are scale-independent up to integration error)
    let anchor = config
        .lambdas
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("lambdas is nonempty");
    let forms = assemble_gaussian_forms(&econfig.table, DEFAULT_RULE_ORDER)?;
    let n_els = econfig.table.elements.len();
    let mut h_gram = vec![vec![0.0; n_els]; n_els];
    for i in 0..n_els {
        for j in 0..n_els {
            h_gram[i][j] = forms.gradient[i][j] + forms.mass[i][j];
        }
    }
    let tau_grid: Vec<f64> = (0..16).map(|i| 0.25 + 0.75 * i as f64 / 15.0).collect();
    let mut csv = String::from("lambda,err_L,err_H\n");
    for &lambda in &config.lambdas {
        let err = blowup_profile_error(
            &run,
            &econfig.table,
            &h_gram,
            &reports[anchor],
            lambda,
            &tau_grid,
        )?;
        csv.push_str(&format!(
            "{},{},{}\n",
            fmt_float(lambda),
            fmt_float(err.err_l),
            fmt_float(err.err_h),
        ));
    }
    write_atomic(&out_dir.join("profile_errors.csv"), &csv)
}

/// One checked property in the report.
struct CheckItem {
    name: &'static str,
    pass: bool,
    value: f64,
    budget: f64,
}

/// Runs the inequality and consistency suites and writes report.json.
/// Returns whether every item passed. If a basis.json artifact exists
/// in the output directory, its normalization constants are audited
/// against quadrature instead of the freshly computed ones.
pub fn cmd_check(config: &RunConfig, out_dir: &Path, seed: u64) -> Result<bool, CliError> {
    let mut table = build_table(config)?;
    let params = config.model.clone();
    let mut items = Vec::new();

    // audit hook: an existing basis.json is the artifact under test
    let basis_path = out_dir.join("basis.json");
    if basis_path.exists() {
        let text = fs::read_to_string(&basis_path)?;
        let doc: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("basis.json does not parse: {e}")))?;
        let records: Vec<BasisRecord> =
            serde_json::from_value(doc["elements"].clone()).map_err(|e| {
                CliError::Validation(format!("basis.json elements do not parse: {e}"))
            })?;
        for record in &records {
            if let Some(element) = table
                .elements
                .iter_mut()
                .find(|e| e.n == record.n && e.j == record.j)
            {
                element.norm_const = record.norm_const;
            }
        }
    }

    let gram = gram_check(&table, DEFAULT_RULE_ORDER)?;
    items.push(CheckItem {
        name: "gram_check",
        pass: gram <= 1e-8,
        value: gram,
        budget: 1e-8,
    });

    let mut residual = 0.0f64;
    for element in &table.elements {
        residual =
            residual.max(eigen_residual_check(element, &table.elements, &params, DEFAULT_RULE_ORDER)?);
    }
    items.push(CheckItem {
        name: "eigen_residual",
        pass: residual <= 1e-8,
        value: residual,
        budget: 1e-8,
    });

    let forms = assemble_gaussian_forms(&table, DEFAULT_RULE_ORDER)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_els = table.elements.len();
    let mut hardy_extended_worst = f64::INFINITY;
    let mut hardy_fractional_worst = f64::INFINITY;
    let mut trace_ratio_sup = 0.0f64;
    for _ in 0..100 {
        let c: Vec<f64> = (0..n_els).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if c.iter().all(|&v| v == 0.0) {
            continue;
        }
        let slacks = inequality_slacks(&forms, &params, &c);
        hardy_extended_worst =
            hardy_extended_worst.min(slacks.hardy_extended / slacks.hardy_extended_rhs.abs());
        hardy_fractional_worst = hardy_fractional_worst
            .min(slacks.hardy_fractional / slacks.hardy_fractional_rhs.abs());
        trace_ratio_sup = trace_ratio_sup.max(slacks.trace_ratio);
    }
    items.push(CheckItem {
        name: "hardy_extended",
        pass: hardy_extended_worst >= -1e-9,
        value: hardy_extended_worst,
        budget: -1e-9,
    });
    items.push(CheckItem {
        name: "hardy_fractional",
        pass: hardy_fractional_worst >= -1e-9,
        value: hardy_fractional_worst,
        budget: -1e-9,
    });
    items.push(CheckItem {
        name: "trace_control",
        pass: trace_ratio_sup > 0.0 && trace_ratio_sup <= 1e3,
        value: trace_ratio_sup,
        budget: 1e3,
    });

    let mesh = config_mesh(config);
    let mut sphere_worst = f64::INFINITY;
    for spec in &config.sectors {
        let problem = SectorProblem::new(params.clone(), spec.l, mesh.clone())?;
        for _ in 0..20 {
            let mut profile: Vec<f64> =
                (0..mesh.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if spec.l >= 1 {
                profile[mesh.len() - 1] = 0.0;
            }
            let slack = sphere_trace_inequality_check(&problem, &profile)?;
            let scale = slack.abs().max(profile.iter().map(|v| v * v).sum());
            sphere_worst = sphere_worst.min(slack / scale);
        }
    }
    items.push(CheckItem {
        name: "sphere_trace",
        pass: sphere_worst >= -1e-9,
        value: sphere_worst,
        budget: -1e-9,
    });

    let coercivity = coercivity_estimate(&table, &params)?;
    items.push(CheckItem {
        name: "coercivity",
        pass: coercivity > 0.0 && coercivity <= 1.0 + 1e-9,
        value: coercivity,
        budget: 1.0 + 1e-9,
    });

    // frequency bookkeeping on a short unperturbed run over the table
    let mut econfig = EvolutionConfig::new(
        params.clone(),
        table.clone(),
        None,
        1.0,
        1e-3,
        vec![1.0; n_els],
    );
    econfig.sample_ratio = 1.01;
    let run = evolve(&econfig)?;
    let defect = verify_h_prime(&run.trace)?;
    items.push(CheckItem {
        name: "h_prime",
        pass: defect <= 1e-6,
        value: defect,
        budget: 1e-6,
    });

    let all_pass = items.iter().all(|item| item.pass);
    let report = json!({
        "seed": seed,
        "all_pass": all_pass,
        "items": items
            .iter()
            .map(|item| {
                json!({
                    "name": item.name,
                    "pass": item.pass,
                    "value": item.value,
                    "budget": item.budget,
                })
            })
            .collect::<Vec<_>>(),
    });
    write_json(&out_dir.join("report.json"), &report)?;
    if !all_pass {
        let failing: Vec<&str> = items
            .iter()
            .filter(|item| !item.pass)
            .map(|item| item.name)
            .collect();
        eprintln!("check failed: {}", failing.join(", "));
    }
    Ok(all_pass)
}
