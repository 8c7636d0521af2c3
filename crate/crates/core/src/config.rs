//! Run configuration: a strict TOML document aggregating every model,
//! discretization, noise and estimator parameter, plus the named presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{EngineGeometry, FreeStream, FuelSchedule, GasModel, GeometrySpec};
use crate::ldp::{ActionOptions, EventSpec, InflowPath, NoiseModel};
use crate::sampling::EstimatorKind;
use crate::scenario::Scenario;
use crate::solver::{Discretization, FlowSolver, Stepping};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset `{0}`; run `unstart presets` for the list")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeStreamConfig {
    pub density: f64,
    pub velocity: f64,
    pub pressure: f64,
    /// Nominal inflow Mach number; `velocity / nominal_mach` is the reference
    /// sound speed turning Mach levels into inflow speeds.
    pub nominal_mach: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuelConfig {
    pub equivalence_ratio: f64,
    pub cycle: f64,
    pub burst: f64,
    pub stoichiometric_ratio: f64,
    pub heating_value: f64,
    /// Fuel continuously instead of in bursts.
    #[serde(default)]
    pub steady: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub cells: usize,
    pub dt: f64,
    pub steps: usize,
    /// Coarse intervals `Ñ` of the inflow path.
    pub ntilde: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub mach_threshold: f64,
    #[serde(default = "one")]
    pub monitor_cell: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Both estimators when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<EstimatorKind>,
    pub samples: usize,
    pub stepping: Stepping,
    /// Noise scales of a sweep; the `noise.epsilon` value alone when empty.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    /// Optimizer output (JSON) to use as importance-sampling center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum InflowSource {
    /// Free-stream velocity throughout.
    Constant,
    /// Two-column CSV `t,u`, linearly interpolated.
    File { path: PathBuf },
    /// One random-walk draw at `noise.epsilon`, from stream `seed`.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub inflow: InflowSource,
    pub stepping: Stepping,
    /// Keep every n-th time level in the history files.
    pub history_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub label: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub gas: GasModel,
    pub freestream: FreeStreamConfig,
    pub geometry: GeometrySpec,
    pub fuel: FuelConfig,
    pub discretization: DiscretizationConfig,
    pub noise: NoiseModel,
    pub event: EventConfig,
    #[serde(default)]
    pub optimizer: ActionOptions,
    pub estimator: EstimatorConfig,
    pub simulate: SimulateConfig,
}

pub const SHORT_CYCLE: (f64, f64) = (0.5e-3, 0.1e-3);
pub const LONG_CYCLE: (f64, f64) = (2e-3, 0.4e-3);

impl RunConfig {
    /// Reference parameter set, short fuel cycle.
    pub fn paper_defaults() -> Self {
        Self {
            label: "paper-defaults".into(),
            seed: 2014,
            output_dir: PathBuf::from("runs"),
            gas: GasModel { gamma: 1.4 },
            freestream: FreeStreamConfig {
                density: 0.159,
                velocity: 1300.0,
                pressure: 47842.0,
                nominal_mach: 2.0,
            },
            geometry: GeometrySpec {
                area_min: 0.008,
                isolator_length: 0.5,
                combustor_length: 0.1,
                expansion_length: 0.1,
                isolator_angle_deg: 0.0,
                combustor_angle_deg: 7.5,
                expansion_angle_deg: 15.0,
            },
            fuel: FuelConfig {
                equivalence_ratio: 0.78,
                cycle: SHORT_CYCLE.0,
                burst: SHORT_CYCLE.1,
                stoichiometric_ratio: 0.029,
                heating_value: 1.2e8,
                steady: false,
            },
            discretization: DiscretizationConfig {
                cells: 100,
                dt: 1e-6,
                steps: 10_000,
                ntilde: 20,
            },
            noise: NoiseModel {
                sigma_u: 1e4,
                sigma_m: 96.902,
                epsilon: 0.2,
            },
            event: EventConfig {
                mach_threshold: 1.0,
                monitor_cell: 1,
            },
            optimizer: ActionOptions::default(),
            estimator: EstimatorConfig {
                kind: None,
                samples: 10_000,
                stepping: Stepping::Adaptive,
                epsilons: Vec::new(),
                center: None,
            },
            simulate: SimulateConfig {
                inflow: InflowSource::Constant,
                stepping: Stepping::Uniform,
                history_stride: 20,
            },
        }
    }

    pub fn with_long_cycle(mut self) -> Self {
        self.fuel.cycle = LONG_CYCLE.0;
        self.fuel.burst = LONG_CYCLE.1;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form with the output directory blanked,
    /// hex encoded.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        Sha256::digest(canonical.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        GasModel::new(self.gas.gamma).map_err(|e| invalid(e.to_string()))?;
        self.freestream_state()?;
        EngineGeometry::new(self.geometry).map_err(|e| invalid(e.to_string()))?;
        self.fuel_schedule().validate().map_err(|e| invalid(e.to_string()))?;
        self.solver_discretization()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        let d = &self.discretization;
        if d.ntilde == 0 || d.steps % d.ntilde != 0 {
            return Err(invalid(format!("ntilde = {} must divide steps = {}", d.ntilde, d.steps)));
        }
        if self.event.monitor_cell == 0 || self.event.monitor_cell >= d.cells {
            return Err(invalid(format!(
                "monitor_cell = {} must be an interior cell",
                self.event.monitor_cell
            )));
        }
        if !(self.freestream.nominal_mach > 0.0) {
            return Err(invalid("nominal_mach must be positive".into()));
        }
        self.noise.validate().map_err(|e| invalid(e.to_string()))?;
        self.event_spec().validate().map_err(|e| invalid(e.to_string()))?;
        if self.estimator.samples == 0 {
            return Err(invalid("estimator.samples must be positive".into()));
        }
        if self.estimator.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(invalid("estimator.epsilons must be positive".into()));
        }
        if self.simulate.history_stride == 0 {
            return Err(invalid("simulate.history_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn freestream_state(&self) -> Result<FreeStream, ConfigError> {
        let f = &self.freestream;
        FreeStream::new(f.density, f.velocity, f.pressure).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn fuel_schedule(&self) -> FuelSchedule {
        let f = &self.fuel;
        let sched = FuelSchedule {
            equivalence_ratio: f.equivalence_ratio,
            cycle: f.cycle,
            burst: f.burst,
            stoichiometric_ratio: f.stoichiometric_ratio,
            heating_value: f.heating_value,
            rho0: self.freestream.density,
            u0: self.freestream.velocity,
        };
        if f.steady {
            sched.steady()
        } else {
            sched
        }
    }

    pub fn solver_discretization(&self) -> Discretization {
        Discretization {
            cells: self.discretization.cells,
            dt: self.discretization.dt,
            steps: self.discretization.steps,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.solver_discretization().horizon()
    }

    pub fn refinement(&self) -> usize {
        self.discretization.steps / self.discretization.ntilde
    }

    pub fn event_spec(&self) -> EventSpec {
        EventSpec {
            mach_threshold: self.event.mach_threshold,
            monitor_cell: self.event.monitor_cell,
            horizon: self.horizon(),
        }
    }

    /// Sound speed converting Mach levels into inflow speeds.
    pub fn reference_sound_speed(&self) -> f64 {
        self.freestream.velocity / self.freestream.nominal_mach
    }

    /// Free-stream sound speed `√(γ P0 / ρ0)`.
    pub fn inflow_sound_speed(&self) -> f64 {
        (self.gas.gamma * self.freestream.pressure / self.freestream.density).sqrt()
    }

    pub fn constant_path(&self) -> InflowPath {
        InflowPath::constant(
            self.freestream.velocity,
            self.discretization.ntilde,
            self.refinement(),
            self.discretization.dt,
        )
    }

    /// Epsilon values of an estimator run.
    pub fn epsilons(&self) -> Vec<f64> {
        if self.estimator.epsilons.is_empty() {
            vec![self.noise.epsilon]
        } else {
            self.estimator.epsilons.clone()
        }
    }

    /// Builds the solver and spins the engine up.
    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        self.validate()?;
        let geometry = EngineGeometry::new(self.geometry).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let solver = FlowSolver::new(self.gas, geometry, self.freestream_state()?, self.solver_discretization())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Scenario::new(solver, self.fuel_schedule()).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// The noise-scale grid `0.20, 0.22, …, 0.40`.
pub fn epsilon_sweep() -> Vec<f64> {
    (0..=10).map(|i| ((20 + 2 * i) as f64) / 100.0).collect()
}

pub const PRESET_NAMES: &[&str] = &[
    "paper-defaults",
    "table-5.1-short",
    "table-5.1-long",
    "table-5.2-short-0.8",
    "table-5.2-short-1.0",
    "table-5.2-short-1.2",
    "table-5.2-long-0.8",
    "table-5.2-long-1.0",
    "table-5.2-long-1.2",
    "table-5.4-short-2.5",
    "table-5.4-short-7.5",
    "table-5.4-short-12",
    "table-5.4-long-2.5",
    "table-5.4-long-7.5",
    "table-5.4-long-12",
    "table-5.5-short-N40",
    "table-5.5-long-N40",
    "mc-vs-is-short",
    "mc-vs-is-long",
    "steady-fueling",
];

/// Named parameter sets of the reference studies.
pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let base = RunConfig::paper_defaults();
    let cycle = |c: &str, cfg: RunConfig| -> Option<RunConfig> {
        match c {
            "short" => Some(cfg),
            "long" => Some(cfg.with_long_cycle()),
            _ => None,
        }
    };
    let parts: Vec<&str> = name.split('-').collect();
    let cfg = match parts.as_slice() {
        ["paper", "defaults"] => Some(base),
        ["table", "5.1", c] => cycle(c, base),
        ["table", "5.2", c, thr] => thr.parse::<f64>().ok().filter(|t| [0.8, 1.0, 1.2].contains(t)).and_then(|t| {
            let mut cfg = cycle(c, base)?;
            cfg.event.mach_threshold = t;
            Some(cfg)
        }),
        ["table", "5.4", c, angle] => angle
            .parse::<f64>()
            .ok()
            .filter(|a| [2.5, 7.5, 12.0].contains(a))
            .and_then(|a| {
                let mut cfg = cycle(c, base)?;
                cfg.geometry.combustor_angle_deg = a;
                Some(cfg)
            }),
        ["table", "5.5", c, "N40"] => cycle(c, base).map(|mut cfg| {
            cfg.discretization.ntilde = 40;
            cfg
        }),
        ["mc", "vs", "is", c] => cycle(c, base).map(|mut cfg| {
            cfg.estimator.epsilons = epsilon_sweep();
            cfg
        }),
        ["steady", "fueling"] => {
            let mut cfg = base;
            cfg.fuel.steady = true;
            cfg.fuel.equivalence_ratio = 0.3;
            cfg.simulate.stepping = Stepping::Adaptive;
            Some(cfg)
        }
        _ => None,
    };
    let mut cfg = cfg.ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    cfg.label = name.to_string();
    Ok(cfg)
}
