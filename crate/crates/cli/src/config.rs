//! Experiment files: one JSON document holding the system and the run options.

use std::fmt;
use std::path::Path;

use nsfold::certificates::CertError;
use nsfold::flow::{CycleOptions, FlowOptions, GeneralFilippovSystem};
use nsfold::map_dynamics::{ClassifyConfig, PiecewiseMap};
use nsfold::models::{
    bcnf3d, example_map, example_map_quadratic, welander_system, Bcnf3dParams, ExampleMapParams,
    ModelError, StommelModel, WelanderModel,
};
use nsfold::scan::ParamAxis;
use nsfold::{FilippovForm, HybridForm, PwlMap, PwlOde, SquareMatrix, Vector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Problems with the experiment file itself. Always exit code 64.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("field `{field}`: {msg}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    PwlMap {
        a_left: Vec<Vec<f64>>,
        a_right: Vec<Vec<f64>>,
        b: Vec<f64>,
        mu: f64,
    },
    PwsOde {
        a_left: Vec<Vec<f64>>,
        a_right: Vec<Vec<f64>>,
        b: Vec<f64>,
        mu: f64,
    },
    Filippov {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: Vec<f64>,
        mu: f64,
    },
    Hybrid {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: Vec<f64>,
        mu: f64,
    },
    Stommel {
        alpha: f64,
        beta: f64,
        mu: f64,
    },
    Welander {
        alpha: f64,
        beta: f64,
        epsilon: f64,
        mu: f64,
    },
    ExampleMap {
        delta_l: f64,
        delta_r: f64,
        alpha: f64,
        mu: f64,
    },
    ExampleMapQuadratic {
        delta_l: f64,
        delta_r: f64,
        alpha: f64,
        mu: f64,
    },
    Bcnf3d {
        tau_l: f64,
        sigma_l: f64,
        delta_l: f64,
        tau_r: f64,
        sigma_r: f64,
        delta_r: f64,
        mu: f64,
    },
}

/// A system ready to run.
pub enum System {
    Map(PwlMap),
    Quadratic(nsfold::map_dynamics::TwoPieceSmoothMap),
    Ode(PwlOde),
    Filippov(FilippovForm),
    Hybrid(HybridForm),
    Stommel(StommelModel),
    Welander(WelanderModel),
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<SquareMatrix, ConfigError> {
    SquareMatrix::from_rows(rows).map_err(|e| invalid(field, e))
}

fn model(e: ModelError) -> ConfigError {
    match e {
        ModelError::Cert(c) => cert(c),
        other => ConfigError(other.to_string()),
    }
}

fn cert(e: CertError) -> ConfigError {
    ConfigError(format!("system: {e}"))
}

impl SystemConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            SystemConfig::PwlMap { .. } => "pwl-map",
            SystemConfig::PwsOde { .. } => "pws-ode",
            SystemConfig::Filippov { .. } => "filippov",
            SystemConfig::Hybrid { .. } => "hybrid",
            SystemConfig::Stommel { .. } => "stommel",
            SystemConfig::Welander { .. } => "welander",
            SystemConfig::ExampleMap { .. } => "example-map",
            SystemConfig::ExampleMapQuadratic { .. } => "example-map-quadratic",
            SystemConfig::Bcnf3d { .. } => "bcnf3d",
        }
    }

    /// Validates dimensions and kind-specific structure.
    pub fn build(&self) -> Result<System, ConfigError> {
        Ok(match self {
            SystemConfig::PwlMap {
                a_left,
                a_right,
                b,
                mu,
            } => System::Map(
                PwlMap::new(
                    matrix("a_left", a_left)?,
                    matrix("a_right", a_right)?,
                    b.clone().into(),
                    *mu,
                )
                .map_err(cert)?,
            ),
            SystemConfig::PwsOde {
                a_left,
                a_right,
                b,
                mu,
            } => System::Ode(
                PwlOde::new(
                    matrix("a_left", a_left)?,
                    matrix("a_right", a_right)?,
                    b.clone().into(),
                    *mu,
                )
                .map_err(cert)?,
            ),
            SystemConfig::Filippov { a, b, c, mu } => System::Filippov(
                FilippovForm::new(matrix("a", a)?, b.clone().into(), c.clone().into(), *mu)
                    .map_err(cert)?,
            ),
            SystemConfig::Hybrid { a, b, c, mu } => System::Hybrid(
                HybridForm::new(matrix("a", a)?, b.clone().into(), c.clone().into(), *mu)
                    .map_err(cert)?,
            ),
            SystemConfig::Stommel { alpha, beta, mu } => {
                System::Stommel(StommelModel::new(*alpha, *beta, *mu).map_err(model)?)
            }
            SystemConfig::Welander {
                alpha,
                beta,
                epsilon,
                mu,
            } => System::Welander(WelanderModel::new(*alpha, *beta, *epsilon, *mu).map_err(model)?),
            SystemConfig::ExampleMap {
                delta_l,
                delta_r,
                alpha,
                mu,
            } => {
                let p = ExampleMapParams {
                    delta_l: *delta_l,
                    delta_r: *delta_r,
                    alpha: *alpha,
                };
                System::Map(example_map(&p, *mu).map_err(model)?)
            }
            SystemConfig::ExampleMapQuadratic {
                delta_l,
                delta_r,
                alpha,
                mu,
            } => {
                let p = ExampleMapParams {
                    delta_l: *delta_l,
                    delta_r: *delta_r,
                    alpha: *alpha,
                };
                System::Quadratic(example_map_quadratic(&p, *mu).map_err(model)?)
            }
            SystemConfig::Bcnf3d {
                tau_l,
                sigma_l,
                delta_l,
                tau_r,
                sigma_r,
                delta_r,
                mu,
            } => {
                let p = Bcnf3dParams {
                    tau_l: *tau_l,
                    sigma_l: *sigma_l,
                    delta_l: *delta_l,
                    tau_r: *tau_r,
                    sigma_r: *sigma_r,
                    delta_r: *delta_r,
                };
                System::Map(bcnf3d(&p, *mu).map_err(model)?)
            }
        })
    }

    /// Copy with the scalar field `name` replaced, as used by parameter scans.
    pub fn with_param(&self, name: &str, value: f64) -> Result<SystemConfig, ConfigError> {
        let mut v = serde_json::to_value(self).expect("configs serialize");
        match v.get_mut(name) {
            Some(slot @ Value::Number(_)) => *slot = value.into(),
            Some(_) => return Err(invalid(name, "not a scalar parameter")),
            None => {
                return Err(invalid(
                    name,
                    format!("no such parameter for kind {}", self.kind()),
                ))
            }
        }
        serde_json::from_value(v).map_err(|e| invalid(name, e))
    }

    pub fn mu(&self) -> f64 {
        let v = serde_json::to_value(self).expect("configs serialize");
        v["mu"].as_f64().expect("every kind has mu")
    }
}

impl System {
    pub fn as_map(&self) -> Option<&dyn PiecewiseMap> {
        match self {
            System::Map(m) => Some(m),
            System::Quadratic(m) => Some(m),
            _ => None,
        }
    }

    /// Filippov-type systems for return maps: the switching manifold is the
    /// Poincare section.
    pub fn as_filippov(&self) -> Option<(GeneralFilippovSystem, f64)> {
        match self {
            System::Ode(o) => Some((GeneralFilippovSystem::from(o), o.mu())),
            System::Filippov(f) => Some((GeneralFilippovSystem::from(f), f.mu())),
            System::Stommel(m) => Some((m.system(), m.mu)),
            System::Welander(w) => Some((welander_system(w), w.mu)),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            System::Map(m) => m.dim(),
            System::Quadratic(m) => m.dim(),
            System::Ode(o) => o.dim(),
            System::Filippov(f) => f.dim(),
            System::Hybrid(h) => h.dim(),
            System::Stommel(_) | System::Welander(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub cells: usize,
}

impl Axis {
    pub fn to_param_axis(&self) -> ParamAxis {
        ParamAxis::new(self.name.clone(), self.min, self.max, self.cells)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub samples: usize,
}

/// Command options; every field is optional and falls back to the library
/// defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Initial state (orbit, flow, scans) or section point (limit-cycle).
    pub x0: Option<Vec<f64>>,
    pub steps: Option<usize>,
    pub t_end: Option<f64>,
    pub flow: Option<FlowOptions>,
    pub classify: Option<ClassifyConfig>,
    pub cycle: Option<CycleOptions>,
    pub max_returns: Option<usize>,
    /// Welander section point given by its temperature on the manifold.
    pub section_t: Option<f64>,
    pub x_axis: Option<Axis>,
    pub y_axis: Option<Axis>,
    pub sweep: Option<Sweep>,
    pub cell_px: Option<usize>,
    pub mu_start: Option<f64>,
    pub mu_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub system: SystemConfig,
    #[serde(default)]
    pub run: RunConfig,
}

impl Experiment {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let exp: Experiment = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        exp.validate()?;
        Ok(exp)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), ConfigError> {
        let bytes =
            std::fs::read(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let exp = Self::parse(text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Ok((exp, bytes))
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let system = self.system.build()?;
        let run = &self.run;
        if let Some(x0) = &run.x0 {
            if x0.len() != system.dim() {
                return Err(invalid(
                    "run.x0",
                    format!("expected {} entries, found {}", system.dim(), x0.len()),
                ));
            }
        }
        if let Some(t) = run.t_end {
            if !(t > 0.0) {
                return Err(invalid("run.t_end", "must be positive"));
            }
        }
        if let Some(f) = &run.flow {
            f.validate().map_err(|e| invalid("run.flow", e))?;
        }
        if let Some(c) = &run.classify {
            c.validate().map_err(|e| invalid("run.classify", e))?;
        }
        if let Some(c) = &run.cycle {
            c.flow
                .validate()
                .map_err(|e| invalid("run.cycle.flow", e))?;
            if !(c.tolerance > 0.0 && c.return_budget > 0.0 && c.rest_speed > 0.0) {
                return Err(invalid("run.cycle", "tolerances must be positive"));
            }
        }
        for (field, axis) in [("run.x_axis", &run.x_axis), ("run.y_axis", &run.y_axis)] {
            if let Some(a) = axis {
                if a.cells == 0 || !(a.min < a.max) {
                    return Err(invalid(field, "need min < max and at least one cell"));
                }
                self.system.with_param(&a.name, a.min)?;
            }
        }
        if let Some(s) = &run.sweep {
            if s.samples == 0 || !(s.min.is_finite() && s.max.is_finite()) {
                return Err(invalid(
                    "run.sweep",
                    "need a finite range and at least one sample",
                ));
            }
            self.system.with_param(&s.name, s.min)?;
        }
        if run.mu_rate == Some(0.0) {
            return Err(invalid("run.mu_rate", "must be nonzero"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }
}

/// Builds the map family for scans; the family must be a map kind.
pub fn map_family(base: &SystemConfig, assignments: &[(&str, f64)]) -> Result<PwlMap, CertError> {
    let mut cfg = base.clone();
    for (name, value) in assignments {
        cfg = cfg
            .with_param(name, *value)
            .map_err(|_| CertError::NonFinite("scan parameter"))?;
    }
    match cfg.build() {
        Ok(System::Map(m)) => Ok(m),
        _ => Err(CertError::NonFinite("scan family member")),
    }
}

/// `x0` or the origin.
pub fn initial_state(run: &RunConfig, dim: usize) -> Vector {
    run.x0
        .clone()
        .map_or_else(|| Vector::zeros(dim), Vector::from)
}
