//! Run configuration: one JSON document per run. Unknown keys are rejected
//! and times are given in units of 1/γ.

use std::path::Path;

use serde::{Deserialize, Serialize};

use photocount::evolution::TimeGrid;
use photocount::fockspace::{make_coherent, make_fock, make_superposition, make_thermal};
use photocount::{DensityMatrix, FockDim, JumpModel, ModelKind, C64};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Sd,
    E,
}

impl ModelName {
    pub fn kind(self) -> ModelKind {
        match self {
            ModelName::Sd => ModelKind::Sd,
            ModelName::E => ModelKind::E,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldSpec {
    Fock {
        m: usize,
    },
    Thermal {
        nbar: f64,
    },
    Coherent {
        nbar: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Amplitudes as `[n, re, im]` triples; normalized on construction.
    Superposition {
        amplitudes: Vec<(usize, f64, f64)>,
    },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Thermal { nbar: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            t_start: 0.0,
            t_end: 3.0,
            steps: 29,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TablesSpec {
    #[serde(default = "default_nbars")]
    pub nbar: Vec<f64>,
    #[serde(default = "default_fock_levels")]
    pub fock_levels: Vec<usize>,
}

fn default_nbars() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}

fn default_fock_levels() -> Vec<usize> {
    vec![1, 2, 3, 4]
}

impl Default for TablesSpec {
    fn default() -> Self {
        Self {
            nbar: default_nbars(),
            fock_levels: default_fock_levels(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct G2Spec {
    #[serde(default = "default_window")]
    pub window: f64,
    /// Observation time per trajectory. When omitted, SD records run until
    /// the field is exhausted and E records are observed for 0.1/γ.
    #[serde(default)]
    pub duration: Option<f64>,
}

/// Default E-model observation time, in units of 1/γ.
pub const E_DEFAULT_DURATION: f64 = 0.1;

impl G2Spec {
    /// Observation time in units of 1/γ, `None` meaning the full record.
    ///
    /// Under SD loss every normally ordered moment ⟨a†ᵏaᵏ⟩ decays as
    /// e^{−kγt}, so g² is the same at all times and the whole record can be
    /// pooled. Under E it drifts, so only a short initial stretch is used.
    pub fn effective_duration(&self, model: ModelName) -> Option<f64> {
        match (self.duration, model) {
            (Some(d), _) => Some(d),
            (None, ModelName::Sd) => None,
            (None, ModelName::E) => Some(E_DEFAULT_DURATION),
        }
    }
}

fn default_window() -> f64 {
    0.01
}

impl Default for G2Spec {
    fn default() -> Self {
        Self {
            window: default_window(),
            duration: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DeriveSpec {
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_omega() -> f64 {
    1.0
}

fn default_dt() -> f64 {
    1e-2
}

impl Default for DeriveSpec {
    fn default() -> Self {
        Self {
            omega: default_omega(),
            dt: default_dt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Full photon-number distribution on the grid (`p_n.csv`).
    PhotonDistribution,
    /// First count time of every trajectory (`first_jump_times.csv`).
    FirstJumpTimes,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_model")]
    pub model: ModelName,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub omega0: f64,
    #[serde(default)]
    pub field: FieldSpec,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub outputs: Vec<Observable>,
    #[serde(default)]
    pub tables: TablesSpec,
    #[serde(default)]
    pub g2: G2Spec,
    #[serde(default)]
    pub derive: DeriveSpec,
}

fn default_model() -> ModelName {
    ModelName::Sd
}

fn default_gamma() -> f64 {
    1.0
}

fn default_dim() -> usize {
    128
}

fn default_tail_tol() -> f64 {
    photocount::fockspace::DEFAULT_TAIL_TOL
}

fn default_n_traj() -> usize {
    1000
}

impl Default for SimConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Configuration with every module precondition checked.
#[derive(Clone, Debug)]
pub struct Validated {
    pub config: SimConfig,
    pub model: JumpModel,
    pub dim: FockDim,
    pub state: DensityMatrix,
    /// Grid in physical time (the config grid divided by γ).
    pub grid: TimeGrid,
}

impl Validated {
    pub fn wants(&self, o: Observable) -> bool {
        self.config.outputs.contains(&o)
    }
}

pub fn load(path: &Path) -> Result<SimConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<SimConfig, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

fn check(errors: &mut Vec<String>, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        errors.push(msg());
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Checks the whole document, reporting every violation at once, then
/// builds the model, initial state and grid.
pub fn validate(config: SimConfig) -> Result<Validated, CliError> {
    let mut errors = Vec::new();
    let c = &config;
    check(&mut errors, positive(c.gamma), || format!("gamma: must be finite and > 0, got {}", c.gamma));
    check(&mut errors, c.omega0.is_finite(), || format!("omega0: must be finite, got {}", c.omega0));
    check(&mut errors, c.dim >= 2, || format!("dim: must be at least 2, got {}", c.dim));
    check(&mut errors, positive(c.tail_tol) && c.tail_tol < 1.0, || {
        format!("tail_tol: must lie in (0, 1), got {}", c.tail_tol)
    });
    match &c.field {
        FieldSpec::Fock { m } => check(&mut errors, *m < c.dim, || {
            format!("field.m: Fock level {m} must be below dim = {}", c.dim)
        }),
        FieldSpec::Thermal { nbar } => check(&mut errors, nbar.is_finite() && *nbar >= 0.0, || {
            format!("field.nbar: must be finite and >= 0, got {nbar}")
        }),
        FieldSpec::Coherent { nbar, phase } => {
            check(&mut errors, nbar.is_finite() && *nbar >= 0.0, || {
                format!("field.nbar: must be finite and >= 0, got {nbar}")
            });
            check(&mut errors, phase.is_finite(), || format!("field.phase: must be finite, got {phase}"));
        }
        FieldSpec::Superposition { amplitudes } => {
            check(&mut errors, !amplitudes.is_empty(), || "field.amplitudes: must not be empty".into());
            for (i, (n, re, im)) in amplitudes.iter().enumerate() {
                check(&mut errors, *n < c.dim, || {
                    format!("field.amplitudes[{i}]: level {n} must be below dim = {}", c.dim)
                });
                check(&mut errors, re.is_finite() && im.is_finite(), || {
                    format!("field.amplitudes[{i}]: amplitude must be finite")
                });
            }
        }
    }
    let g = &c.grid;
    check(&mut errors, g.t_start.is_finite() && g.t_start >= 0.0, || {
        format!("grid.t_start: must be finite and >= 0, got {}", g.t_start)
    });
    check(&mut errors, g.t_end.is_finite() && g.t_end > g.t_start, || {
        format!("grid.t_end: must exceed grid.t_start ({}), got {}", g.t_start, g.t_end)
    });
    check(&mut errors, g.steps >= 1, || "grid.steps: must be at least 1".into());
    check(&mut errors, positive(c.g2.window), || {
        format!("g2.window: must be finite and > 0, got {}", c.g2.window)
    });
    if let Some(d) = c.g2.duration {
        check(&mut errors, positive(d), || format!("g2.duration: must be finite and > 0, got {d}"));
    }
    check(&mut errors, positive(c.derive.omega), || {
        format!("derive.omega: must be finite and > 0, got {}", c.derive.omega)
    });
    check(&mut errors, positive(c.derive.dt), || format!("derive.dt: must be finite and > 0, got {}", c.derive.dt));
    let coupling = c.derive.omega * c.derive.dt;
    check(&mut errors, !(coupling > photocount::microderivation::MAX_COUPLING_STEP), || {
        format!(
            "derive: omega*dt = {coupling} exceeds the short-step limit {}",
            photocount::microderivation::MAX_COUPLING_STEP
        )
    });
    for (i, n) in c.tables.nbar.iter().enumerate() {
        check(&mut errors, positive(*n), || format!("tables.nbar[{i}]: must be finite and > 0, got {n}"));
    }
    for (i, m) in c.tables.fock_levels.iter().enumerate() {
        check(&mut errors, *m >= 1, || format!("tables.fock_levels[{i}]: must be at least 1, got {m}"));
    }
    if !errors.is_empty() {
        return Err(CliError::Config(errors.join("\n")));
    }

    let cfg = |field: &str, e: photocount::Error| CliError::Config(format!("{field}: {e}"));
    let dim = FockDim::new(c.dim).map_err(|e| cfg("dim", e))?;
    let model = JumpModel::new(c.model.kind(), c.gamma)
        .and_then(|m| m.with_frequency(c.omega0))
        .map_err(|e| cfg("model", e))?;
    let state = build_state(&c.field, dim, c.tail_tol).map_err(|e| cfg("field", e))?;
    let grid = TimeGrid::new(g.t_start / c.gamma, g.t_end / c.gamma, g.steps).map_err(|e| cfg("grid", e))?;
    Ok(Validated {
        model,
        dim,
        state,
        grid,
        config,
    })
}

pub fn build_state(field: &FieldSpec, dim: FockDim, tail_tol: f64) -> photocount::Result<DensityMatrix> {
    match field {
        FieldSpec::Fock { m } => make_fock(*m, dim),
        FieldSpec::Thermal { nbar } => make_thermal(*nbar, dim, tail_tol),
        FieldSpec::Coherent { nbar, phase } => make_coherent(C64::from_polar(nbar.sqrt(), *phase), dim, tail_tol),
        FieldSpec::Superposition { amplitudes } => {
            let amps: Vec<(usize, C64)> = amplitudes.iter().map(|&(n, re, im)| (n, C64::new(re, im))).collect();
            make_superposition(&amps, dim)
        }
    }
}
