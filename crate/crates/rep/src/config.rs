//! TOML run configuration: physical constants, grid, initial-data family,
//! testing-function selection, and run controls, with field-naming
//! validation errors and documented defaults.

use crate::certificate::TestingFunction;
use crate::model::{ModelError, PhysicalParams, PrimitiveState, RadialGrid};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DEFAULT_CFL: f64 = 0.4;
pub const DEFAULT_QUAD_N: usize = 10_000;
pub const DEFAULT_TOL_MONITOR: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("TOML parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: &str, reason: impl std::fmt::Display) -> Self {
        Self::Invalid {
            field: field.into(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub c: f64,
    pub gamma: f64,
    pub a: f64,
    #[serde(default)]
    pub e0: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n_cells: usize,
    pub r_max: f64,
    pub r_support: f64,
}

fn default_exponent() -> f64 {
    2.0
}

/// Built-in initial-data families. The "ball" family is
/// rho0 = A max(1 - (r/R)^2, 0)^m, v0 = V (r/R) max(1 - (r/R)^2, 0)^m,
/// compactly supported and C^1 for m >= 1; "custom" takes tabulated
/// (r, rho0, v0) samples interpolated linearly and zero beyond the table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialData {
    Ball {
        amplitude: f64,
        velocity: f64,
        #[serde(default = "default_exponent")]
        exponent: f64,
    },
    Custom {
        r: Vec<f64>,
        rho: Vec<f64>,
        v: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TestingFunctionConfig {
    Power { k: u32 },
    Sine { r_cut: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub t_final: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    /// Snapshot cadence in time units; defaults to t_final / 50.
    #[serde(default)]
    pub output_interval: Option<f64>,
    #[serde(default = "default_quad_n")]
    pub quad_n: usize,
    #[serde(default = "default_tol_monitor")]
    pub tol_monitor: f64,
    /// Echoed into artifacts for reproducibility of seeded consumers.
    #[serde(default)]
    pub seed: u64,
}

fn default_cfl() -> f64 {
    DEFAULT_CFL
}

fn default_quad_n() -> usize {
    DEFAULT_QUAD_N
}

fn default_tol_monitor() -> f64 {
    DEFAULT_TOL_MONITOR
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsSection,
    pub grid: GridSection,
    pub initial_data: InitialData,
    pub testing_function: TestingFunctionConfig,
    pub run: RunSettings,
}

/// Read and fully validate a TOML run configuration.
pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.physical_params()?;
        self.radial_grid()?;
        let c = self.params.c;
        match &self.initial_data {
            InitialData::Ball {
                amplitude,
                velocity,
                exponent,
            } => {
                if !(*amplitude >= 0.0) {
                    return Err(ConfigError::invalid(
                        "initial_data.amplitude",
                        format!("must be >= 0, got {amplitude}"),
                    ));
                }
                if velocity.abs() >= c {
                    return Err(ConfigError::invalid(
                        "initial_data.velocity",
                        format!("|V| = {} violates the subluminality constraint |V| < c = {c}", velocity.abs()),
                    ));
                }
                if !(*exponent >= 1.0) {
                    return Err(ConfigError::invalid(
                        "initial_data.exponent",
                        format!("must be >= 1 for C^1 compact support, got {exponent}"),
                    ));
                }
            }
            InitialData::Custom { r, rho, v } => {
                if r.len() < 2 || r.len() != rho.len() || r.len() != v.len() {
                    return Err(ConfigError::invalid(
                        "initial_data.r",
                        format!(
                            "tabulated data needs matching r/rho/v arrays of length >= 2, got {}/{}/{}",
                            r.len(),
                            rho.len(),
                            v.len()
                        ),
                    ));
                }
                if r[0] < 0.0 {
                    return Err(ConfigError::invalid("initial_data.r", "radii must be >= 0"));
                }
                if r.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(ConfigError::invalid(
                        "initial_data.r",
                        "radii must be strictly increasing",
                    ));
                }
                if *r.last().unwrap() > self.grid.r_support * (1.0 + 1e-12) {
                    return Err(ConfigError::invalid(
                        "initial_data.r",
                        format!(
                            "table extends to {} beyond the support radius R = {}",
                            r.last().unwrap(),
                            self.grid.r_support
                        ),
                    ));
                }
                for (j, (&rj, &vj)) in rho.iter().zip(v.iter()).enumerate() {
                    if !(rj >= 0.0) {
                        return Err(ConfigError::invalid(
                            "initial_data.rho",
                            format!("sample {j} is negative: {rj}"),
                        ));
                    }
                    if vj.abs() >= c {
                        return Err(ConfigError::invalid(
                            "initial_data.v",
                            format!(
                                "sample {j} has |v| = {} violating the subluminality constraint |v| < c = {c}",
                                vj.abs()
                            ),
                        ));
                    }
                    if rj == 0.0 && vj != 0.0 {
                        return Err(ConfigError::invalid(
                            "initial_data.v",
                            format!("sample {j} carries velocity {vj} on vacuum"),
                        ));
                    }
                }
            }
        }
        match &self.testing_function {
            TestingFunctionConfig::Power { k } => {
                if !(1..=3).contains(k) {
                    return Err(ConfigError::invalid(
                        "testing_function.k",
                        format!("built-in powers cover k in {{1, 2, 3}}, got {k}"),
                    ));
                }
            }
            TestingFunctionConfig::Sine { r_cut } => {
                if !(*r_cut >= self.grid.r_support) {
                    return Err(ConfigError::invalid(
                        "testing_function.r_cut",
                        format!(
                            "must be >= the support radius R = {}, got {r_cut}",
                            self.grid.r_support
                        ),
                    ));
                }
            }
        }
        let run = &self.run;
        if !(run.t_final > 0.0) {
            return Err(ConfigError::invalid(
                "run.t_final",
                format!("must be > 0, got {}", run.t_final),
            ));
        }
        if !(run.cfl > 0.0 && run.cfl < 1.0) {
            return Err(ConfigError::invalid(
                "run.cfl",
                format!("must lie in (0, 1), got {}", run.cfl),
            ));
        }
        if let Some(interval) = run.output_interval {
            if !(interval > 0.0) {
                return Err(ConfigError::invalid(
                    "run.output_interval",
                    format!("must be > 0, got {interval}"),
                ));
            }
        }
        if run.quad_n < 2 {
            return Err(ConfigError::invalid(
                "run.quad_n",
                format!("must be >= 2, got {}", run.quad_n),
            ));
        }
        if !(run.tol_monitor > 0.0 && run.tol_monitor < 1.0) {
            return Err(ConfigError::invalid(
                "run.tol_monitor",
                format!("must lie in (0, 1), got {}", run.tol_monitor),
            ));
        }
        Ok(())
    }

    pub fn physical_params(&self) -> Result<PhysicalParams, ConfigError> {
        PhysicalParams::new(self.params.c, self.params.gamma, self.params.a, self.params.e0)
            .map_err(|e| ConfigError::invalid("params", e))
    }

    pub fn radial_grid(&self) -> Result<RadialGrid, ConfigError> {
        RadialGrid::new(self.grid.n_cells, self.grid.r_max, self.grid.r_support)
            .map_err(|e| ConfigError::invalid("grid", e))
    }

    /// Sample the configured initial data on cell centers.
    pub fn initial_state(
        &self,
        grid: &RadialGrid,
        params: &PhysicalParams,
    ) -> Result<PrimitiveState, ConfigError> {
        let r_sup = grid.r_support;
        let (rho, v): (Vec<f64>, Vec<f64>) = match &self.initial_data {
            InitialData::Ball {
                amplitude,
                velocity,
                exponent,
            } => grid
                .centers()
                .map(|r| {
                    let x = r / r_sup;
                    let bump = (1.0 - x * x).max(0.0).powf(*exponent);
                    (amplitude * bump, velocity * x * bump)
                })
                .unzip(),
            InitialData::Custom { r, rho, v } => {
                let interp = |table: &[f64], x: f64| -> f64 {
                    if x < r[0] || x > *r.last().unwrap() {
                        return 0.0;
                    }
                    let j = r.partition_point(|&rj| rj <= x).min(r.len() - 1);
                    if j == 0 {
                        return table[0];
                    }
                    let w = (x - r[j - 1]) / (r[j] - r[j - 1]);
                    table[j - 1] * (1.0 - w) + table[j] * w
                };
                grid.centers()
                    .map(|rc| {
                        if rc > r_sup {
                            (0.0, 0.0)
                        } else {
                            (interp(rho, rc), interp(v, rc))
                        }
                    })
                    .unzip()
            }
        };
        PrimitiveState::new(rho, v, params).map_err(|e| match e {
            ModelError::InvalidState { cell, reason } => ConfigError::invalid(
                "initial_data",
                format!("sampled state invalid at cell {cell}: {reason}"),
            ),
            other => ConfigError::invalid("initial_data", other),
        })
    }

    /// Instantiate the configured testing function, validated on
    /// [0, r_support].
    pub fn testing_function(&self) -> Result<TestingFunction, ConfigError> {
        let r_end = self.grid.r_support;
        match &self.testing_function {
            TestingFunctionConfig::Power { k } => TestingFunction::power(*k, r_end),
            TestingFunctionConfig::Sine { r_cut } => TestingFunction::sine(*r_cut, r_end),
        }
        .map_err(|e| ConfigError::invalid("testing_function", e))
    }

    pub fn run_settings(&self) -> RunSettings {
        self.run
    }

    pub fn output_interval(&self) -> f64 {
        self.run
            .output_interval
            .unwrap_or(self.run.t_final / 50.0)
    }

    /// Non-fatal findings surfaced at parse time; the hypothesis check at
    /// certify time turns the first one into a hard error.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let (Ok(params), InitialData::Ball { amplitude, .. }) =
            (self.physical_params(), &self.initial_data)
        {
            if let Ok(false) = params.subcritical(*amplitude) {
                out.push(format!(
                    "initial_data.amplitude = {amplitude} has p'(A) >= a c^2; \
                     certificates over this data will be refused (hypothesis violation)"
                ));
            }
        }
        if let (Ok(params), InitialData::Custom { rho, .. }) =
            (self.physical_params(), &self.initial_data)
        {
            if let Some(&worst) = rho
                .iter()
                .filter(|&&x| matches!(params.subcritical(x), Ok(false)))
                .next()
            {
                out.push(format!(
                    "initial_data.rho contains {worst} with p'(rho) >= a c^2; \
                     certificates over this data will be refused (hypothesis violation)"
                ));
            }
        }
        out
    }
}
