//! Scenario configuration (TOML) and the shipped presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tilt_core::einstein_euler::InitialDataKind;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Background,
    EulerFlrw,
    Coupled,
    RatesReport,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Background => "background",
            ScenarioKind::EulerFlrw => "euler_flrw",
            ScenarioKind::Coupled => "coupled",
            ScenarioKind::RatesReport => "rates_report",
        }
    }
}

/// Late-time data of the homogeneous background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundConfig {
    /// Time at which the asymptotic expansion is imposed; defaults to t0 + 8/H.
    pub t_start: Option<f64>,
    pub g_inf: [f64; 3],
    pub k3: [f64; 3],
    pub k3_23: f64,
    pub v1_inf: f64,
    pub p_inf: f64,
    /// Relative tolerance of the adaptive integrator.
    pub tol: f64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig {
            t_start: None,
            g_inf: [1.0, 1.2, 0.8],
            k3: [0.0; 3],
            k3_23: 0.0,
            v1_inf: 1.0,
            p_inf: 0.1,
            tol: 1e-12,
        }
    }
}

impl BackgroundConfig {
    pub fn is_vacuum(&self) -> bool {
        self.v1_inf == 0.0 && self.p_inf == 0.0
    }

    pub fn is_isotropic_vacuum(&self) -> bool {
        self.is_vacuum()
            && self.g_inf.iter().all(|g| *g == self.g_inf[0])
            && self.k3.iter().all(|k| *k == 0.0)
            && self.k3_23 == 0.0
    }

    /// Isotropic vacuum data with G^inf = 1/(2H), which reproduces closed de Sitter exactly.
    pub fn is_de_sitter(&self, h: f64) -> bool {
        self.is_isotropic_vacuum() && (self.g_inf[0] - 0.5 / h).abs() <= 1e-14
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    pub kind: InitialDataKind,
    pub amplitude: f64,
    pub degrees: Vec<usize>,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            kind: InitialDataKind::InhomogeneousFree,
            amplitude: 1e-3,
            degrees: vec![1, 2, 3],
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub filter_strength: f64,
    /// Time between recorded samples.
    pub output_interval: f64,
    pub cfl: f64,
    pub c_parab: f64,
    pub blowup: f64,
    /// Refuse dt above the advective or parabolic step limit.
    pub enforce_step_limits: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { dt: 0.01, filter_strength: 0.0, output_interval: 0.1, cfl: 1.0, c_parab: 0.5, blowup: 1e3, enforce_step_limits: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub enabled: bool,
    /// Fit window for decay rates; scenario-specific default when absent.
    pub fit_window: Option<[f64; 2]>,
    /// Coupled free runs: repeat with dt/2 and dt/4 to measure the gauge residual order.
    pub gauge_refinement: bool,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig { enabled: true, fit_window: None, gauge_refinement: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub cs2: f64,
    pub lambda: f64,
    pub band_limit: usize,
    pub sobolev_order: usize,
    /// Initial time T of the evolution.
    pub t0: f64,
    pub t_end: f64,
    pub background: BackgroundConfig,
    pub perturbation: PerturbationConfig,
    pub integrator: IntegratorConfig,
    pub checks: ChecksConfig,
    pub output_dir: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: ScenarioKind::Background,
            cs2: 0.4,
            lambda: 3.0,
            band_limit: 4,
            sobolev_order: 3,
            t0: 2.0,
            t_end: 7.0,
            background: BackgroundConfig::default(),
            perturbation: PerturbationConfig::default(),
            integrator: IntegratorConfig::default(),
            checks: ChecksConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn bad(field: &str, msg: impl Into<String>) -> CliError {
    CliError::Config { field: field.to_string(), message: msg.into() }
}

impl ScenarioConfig {
    pub fn h(&self) -> f64 {
        (self.lambda / 3.0).sqrt()
    }

    pub fn t_start(&self) -> f64 {
        self.background.t_start.unwrap_or(self.t0 + 8.0 / self.h())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.cs2 > 0.0 && self.cs2 < 1.0) {
            return Err(bad("cs2", format!("must lie in (0, 1), got {}", self.cs2)));
        }
        if !(self.lambda > 0.0) {
            return Err(bad("lambda", "must be positive"));
        }
        if self.band_limit > tilt_core::s3_frame::DEFAULT_MAX_BAND_LIMIT {
            return Err(bad("band_limit", format!("at most {}", tilt_core::s3_frame::DEFAULT_MAX_BAND_LIMIT)));
        }
        if self.sobolev_order < 2 {
            return Err(bad("sobolev_order", "must be at least 2"));
        }
        if !(self.t_end > self.t0) {
            return Err(bad("t_end", "must exceed t0"));
        }
        if self.scenario == ScenarioKind::Background {
            if !(self.t_start() > self.t0) {
                return Err(bad("background.t_start", "must exceed t0"));
            }
            if self.t_end > self.t_start() {
                return Err(bad("t_end", "background runs end at background.t_start"));
            }
        }
        if self.background.g_inf.iter().any(|g| !(*g > 0.0)) {
            return Err(bad("background.g_inf", "entries must be positive"));
        }
        if self.background.p_inf < 0.0 {
            return Err(bad("background.p_inf", "must be non-negative"));
        }
        if !(self.background.tol > 0.0 && self.background.tol < 1e-3) {
            return Err(bad("background.tol", "must lie in (0, 1e-3)"));
        }
        if self.perturbation.amplitude < 0.0 || self.perturbation.amplitude > 0.1 {
            return Err(bad("perturbation.amplitude", "must lie in [0, 0.1]"));
        }
        if self.perturbation.degrees.iter().any(|k| *k > self.band_limit) {
            return Err(bad("perturbation.degrees", "degrees must not exceed band_limit"));
        }
        let it = &self.integrator;
        if !(it.dt > 0.0) {
            return Err(bad("integrator.dt", "must be positive"));
        }
        if !(it.output_interval >= it.dt) {
            return Err(bad("integrator.output_interval", "must be at least dt"));
        }
        if !(it.cfl > 0.0 && it.cfl <= 1.0) {
            return Err(bad("integrator.cfl", "must lie in (0, 1]"));
        }
        if !(it.c_parab > 0.0) || !(it.blowup > 1.0) {
            return Err(bad("integrator", "c_parab must be positive and blowup above 1"));
        }
        if let Some([a, b]) = self.checks.fit_window {
            if !(a < b) {
                return Err(bad("checks.fit_window", "needs t1 < t2"));
            }
        }
        Ok(())
    }

    pub fn output_every(&self) -> usize {
        ((self.integrator.output_interval / self.integrator.dt).round() as usize).max(1)
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub const PRESETS: [&str; 8] = [
    "vacuum",
    "tilted",
    "euler-homogeneous",
    "euler-inhomogeneous",
    "coupled-homogeneous",
    "coupled-free",
    "top-order",
    "rates",
];

/// Presets reproducing the acceptance runs. `cs2` overrides the sound speed where it is a free choice.
pub fn preset(name: &str, cs2: Option<f64>) -> Result<ScenarioConfig, CliError> {
    let mut c = ScenarioConfig::default();
    match name {
        "vacuum" => {
            c.scenario = ScenarioKind::Background;
            c.t0 = 7.0;
            c.t_end = 12.0;
            c.background = BackgroundConfig {
                t_start: Some(12.0),
                g_inf: [0.5; 3],
                v1_inf: 0.0,
                p_inf: 0.0,
                tol: 1e-13,
                ..BackgroundConfig::default()
            };
        }
        "tilted" => {
            c.scenario = ScenarioKind::Background;
            c.t0 = 2.0;
            c.t_end = 10.0;
            c.background.t_start = Some(10.0);
            c.checks.fit_window = Some([3.0, 6.0]);
        }
        "euler-homogeneous" => {
            c.scenario = ScenarioKind::EulerFlrw;
            c.cs2 = cs2.unwrap_or(0.5);
            c.band_limit = 0;
            c.t0 = 1.0;
            c.t_end = 11.0;
            c.perturbation.amplitude = 0.0;
            c.perturbation.degrees = vec![];
            c.integrator.dt = 2.5e-4;
        }
        "euler-inhomogeneous" => {
            c.scenario = ScenarioKind::EulerFlrw;
            c.cs2 = cs2.unwrap_or(0.5);
            c.band_limit = 4;
            c.t0 = 1.0;
            c.t_end = 11.0;
            c.perturbation.amplitude = 1e-3;
            c.integrator.dt = 0.01;
            c.checks.fit_window = Some([7.0, 11.0]);
        }
        "coupled-homogeneous" => {
            c.scenario = ScenarioKind::Coupled;
            c.band_limit = 2;
            c.t0 = 2.0;
            c.t_end = 10.0;
            c.background.tol = 1e-13;
            c.perturbation.kind = InitialDataKind::HomogeneousConstraintSolved;
            c.perturbation.amplitude = 1e-3;
            c.perturbation.degrees = vec![];
            c.integrator.dt = 1e-3;
            c.checks.fit_window = Some([4.0, 8.0]);
        }
        "coupled-free" => {
            c.scenario = ScenarioKind::Coupled;
            c.band_limit = 4;
            c.t0 = 2.0;
            c.t_end = 7.0;
            c.background.tol = 1e-13;
            c.perturbation.amplitude = 1e-4;
            c.integrator.dt = 0.02;
        }
        "top-order" => {
            c.scenario = ScenarioKind::Coupled;
            c.cs2 = cs2.unwrap_or(0.5);
            c.band_limit = 4;
            c.t0 = 2.0;
            c.t_end = 7.0;
            c.perturbation.amplitude = 1e-4;
            c.integrator.dt = 0.02;
            c.checks.gauge_refinement = false;
        }
        "rates" => {
            c.scenario = ScenarioKind::RatesReport;
            c.t_end = c.t0 + 1.0;
        }
        other => return Err(CliError::UnknownPreset(other.to_string())),
    }
    if let Some(x) = cs2 {
        c.cs2 = x;
    }
    c.validate()?;
    Ok(c)
}
