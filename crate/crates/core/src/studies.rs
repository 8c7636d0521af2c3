//! Reference studies: named groups of presets with their published optimal
//! rate values, and the helpers that run them.

use serde::{Deserialize, Serialize};

use crate::config::{preset, ConfigError, RunConfig};
use crate::ldp::{minimize_action, subsonic_bound, ActionResult, InitialGuess, LdpError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Study {
    /// Optimal values for both fuel cycles.
    Cycles,
    /// Mach thresholds 0.8, 1.0, 1.2.
    Thresholds,
    /// Combustor angles 2.5°, 7.5°, 12°.
    Geometry,
    /// Ñ = 20 against Ñ = 40.
    Resolution,
    /// Plain against importance sampling.
    McVsIs,
}

impl Study {
    pub const ALL: [Study; 5] = [
        Study::Cycles,
        Study::Thresholds,
        Study::Geometry,
        Study::Resolution,
        Study::McVsIs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::Cycles => "table-5.1",
            Study::Thresholds => "table-5.2",
            Study::Geometry => "table-5.4",
            Study::Resolution => "table-5.5",
            Study::McVsIs => "mc-vs-is",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Optimization cases `(preset, reference value)`; empty for the
    /// sampling study.
    pub fn cases(self) -> &'static [(&'static str, f64)] {
        match self {
            Study::Cycles => &[("table-5.1-short", 0.21504), ("table-5.1-long", 0.15603)],
            Study::Thresholds => &[
                ("table-5.2-short-0.8", 0.26547),
                ("table-5.2-short-1.0", 0.21504),
                ("table-5.2-short-1.2", 0.13667),
                ("table-5.2-long-0.8", 0.18143),
                ("table-5.2-long-1.0", 0.15603),
                ("table-5.2-long-1.2", 0.13532),
            ],
            Study::Geometry => &[
                ("table-5.4-short-2.5", 0.088937),
                ("table-5.4-short-7.5", 0.21504),
                ("table-5.4-short-12", 0.21505),
                ("table-5.4-long-2.5", 0.046034),
                ("table-5.4-long-7.5", 0.15603),
                ("table-5.4-long-12", 0.2147),
            ],
            Study::Resolution => &[
                ("table-5.1-short", 0.21504),
                ("table-5.5-short-N40", 0.21503),
                ("table-5.1-long", 0.15603),
                ("table-5.5-long-N40", 0.15587),
            ],
            Study::McVsIs => &[],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{case}: {source}")]
    Case { case: String, source: LdpError },
}

/// Runs the minimum-action search for one configuration.
pub fn optimize(cfg: &RunConfig) -> Result<ActionResult, StudyError> {
    let scenario = cfg.scenario()?;
    minimize_action(
        &scenario,
        &cfg.event_spec(),
        &cfg.noise,
        cfg.discretization.ntilde,
        InitialGuess::Auto,
        &cfg.optimizer,
    )
    .map_err(|source| StudyError::Case {
        case: cfg.label.clone(),
        source,
    })
}

/// Straight-ramp action into the subsonic-inflow event at the configured
/// Mach threshold.
pub fn bound(cfg: &RunConfig) -> Result<f64, LdpError> {
    subsonic_bound(
        &cfg.noise,
        cfg.event.mach_threshold,
        cfg.freestream.velocity,
        cfg.reference_sound_speed(),
        cfg.discretization.ntilde,
        cfg.refinement(),
        cfg.discretization.dt,
    )
    .map(|(_, v)| v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub case: String,
    pub computed: f64,
    pub reference: f64,
    pub rel_dev: f64,
    pub bound: f64,
    pub iterations: usize,
    pub feasible: bool,
}

/// Optimizes every case of `study` and compares against the reference values.
pub fn run_optimization_study(study: Study) -> Result<Vec<(ComparisonRow, ActionResult)>, StudyError> {
    study
        .cases()
        .iter()
        .map(|&(name, reference)| {
            let cfg = preset(name)?;
            let result = optimize(&cfg)?;
            let bound = bound(&cfg).map_err(|source| StudyError::Case {
                case: name.to_string(),
                source,
            })?;
            Ok((
                ComparisonRow {
                    case: name.to_string(),
                    computed: result.value,
                    reference,
                    rel_dev: (result.value - reference) / reference,
                    bound,
                    iterations: result.iterations,
                    feasible: result.feasible,
                },
                result,
            ))
        })
        .collect()
}
