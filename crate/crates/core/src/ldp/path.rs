use serde::{Deserialize, Serialize};

use super::LdpError;
use crate::scenario::Scenario;
use crate::solver::{Inflow, RecordOptions, Stepping};

/// Reduced-order inflow speed: control values `ũ(0), ũ(m), …, ũ(Ñm)` on a
/// coarse grid of spacing `mΔt`, linearly interpolated to the fine grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflowPath {
    coarse: Vec<f64>,
    refinement: usize,
    dt: f64,
}

impl InflowPath {
    pub fn new(coarse: Vec<f64>, refinement: usize, dt: f64) -> Result<Self, LdpError> {
        if coarse.len() < 2 {
            return Err(LdpError::Contract(
                "an inflow path needs at least two control values".into(),
            ));
        }
        if refinement == 0 || !(dt > 0.0) {
            return Err(LdpError::Contract(
                "refinement and time increment must be positive".into(),
            ));
        }
        if coarse.iter().any(|v| !v.is_finite()) {
            return Err(LdpError::Contract("non-finite control value".into()));
        }
        Ok(Self {
            coarse,
            refinement,
            dt,
        })
    }

    pub fn constant(u0: f64, ntilde: usize, refinement: usize, dt: f64) -> Self {
        Self {
            coarse: vec![u0; ntilde + 1],
            refinement,
            dt,
        }
    }

    /// Straight line from `start` to `end` over the horizon.
    pub fn linear(start: f64, end: f64, ntilde: usize, refinement: usize, dt: f64) -> Self {
        let coarse = (0..=ntilde)
            .map(|n| {
                let w = n as f64 / ntilde as f64;
                (1.0 - w) * start + w * end
            })
            .collect();
        Self {
            coarse,
            refinement,
            dt,
        }
    }

    /// Same grid, new control values.
    pub fn with_coarse(&self, coarse: Vec<f64>) -> Result<Self, LdpError> {
        if coarse.len() != self.coarse.len() {
            return Err(LdpError::Contract(format!(
                "expected {} control values, got {}",
                self.coarse.len(),
                coarse.len()
            )));
        }
        Self::new(coarse, self.refinement, self.dt)
    }

    pub fn coarse(&self) -> &[f64] {
        &self.coarse
    }

    /// Number of coarse intervals `Ñ`.
    pub fn ntilde(&self) -> usize {
        self.coarse.len() - 1
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Coarse spacing `mΔt`.
    pub fn coarse_dt(&self) -> f64 {
        self.refinement as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.ntilde() as f64 * self.coarse_dt()
    }

    pub fn start(&self) -> f64 {
        self.coarse[0]
    }

    pub fn end(&self) -> f64 {
        self.coarse[self.coarse.len() - 1]
    }

    /// Times of the control values.
    pub fn control_times(&self) -> Vec<f64> {
        (0..self.coarse.len())
            .map(|n| n as f64 * self.coarse_dt())
            .collect()
    }

    /// Fine-grid value `u_in(n)` for `n = 0..=N`, constant past the horizon.
    pub fn fine(&self, n: usize) -> f64 {
        let m = self.refinement;
        let block = n / m;
        if block >= self.ntilde() {
            return self.end();
        }
        let k = (n % m) as f64 / m as f64;
        (1.0 - k) * self.coarse[block] + k * self.coarse[block + 1]
    }

    /// `path(0) + s (path - path(0))`.
    pub fn scaled_about_start(&self, s: f64) -> Self {
        let u0 = self.start();
        Self {
            coarse: self.coarse.iter().map(|v| u0 + s * (v - u0)).collect(),
            ..self.clone()
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.coarse.len() == other.coarse.len()
            && self.refinement == other.refinement
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }
}

impl Inflow for InflowPath {
    fn speed(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.coarse[0];
        }
        let h = self.coarse_dt();
        let pos = t / h;
        let block = pos.floor() as usize;
        if block >= self.ntilde() {
            return self.end();
        }
        let w = pos - block as f64;
        (1.0 - w) * self.coarse[block] + w * self.coarse[block + 1]
    }

    fn speed_at_step(&self, n: usize, dt: f64) -> f64 {
        if (dt - self.dt).abs() <= 1e-12 * self.dt {
            self.fine(n)
        } else {
            self.speed(n as f64 * dt)
        }
    }
}

/// Brownian inflow-speed perturbation `u_in(t) = u0 + ε σ_u W_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Inflow-speed volatility σ_u (m/s^{3/2}).
    pub sigma_u: f64,
    /// Inflow-Mach volatility σ_M (s^{-1/2}); carried for reporting only.
    pub sigma_m: f64,
    /// Noise scale ε.
    pub epsilon: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), LdpError> {
        if !(self.sigma_u > 0.0) {
            return Err(LdpError::Contract("sigma_u must be positive".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(LdpError::Contract("epsilon must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { epsilon, ..*self }
    }
}

/// Unstart event: the Mach number in the monitor cell drops to the threshold
/// at some time level in `1..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub mach_threshold: f64,
    #[serde(default = "default_monitor_cell")]
    pub monitor_cell: usize,
    /// Horizon T (s).
    pub horizon: f64,
}

fn default_monitor_cell() -> usize {
    1
}

impl EventSpec {
    pub fn new(mach_threshold: f64, horizon: f64) -> Result<Self, LdpError> {
        let spec = Self {
            mach_threshold,
            monitor_cell: 1,
            horizon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), LdpError> {
        if !(self.mach_threshold > 0.0) {
            return Err(LdpError::Contract("mach threshold must be positive".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(LdpError::Contract("horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn record_options(&self) -> RecordOptions {
        RecordOptions {
            monitor_cell: self.monitor_cell,
            ..RecordOptions::event(self.mach_threshold)
        }
    }
}

/// Discrete rate function of a reduced-order path,
/// `(mΔt / 2σ_u²) Σ ((ũ((n+1)m) - ũ(nm)) / mΔt)²`.
pub fn rate_discrete(path: &InflowPath, noise: &NoiseModel) -> f64 {
    let h = path.coarse_dt();
    let sum: f64 = path.coarse.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    sum / (2.0 * noise.sigma_u * noise.sigma_u * h)
}

/// Gradient of [`rate_discrete`] with respect to the free controls
/// `ũ(m), …, ũ(Ñm)`.
pub fn rate_gradient(path: &InflowPath, noise: &NoiseModel) -> Vec<f64> {
    let c = 1.0 / (noise.sigma_u * noise.sigma_u * path.coarse_dt());
    let u = &path.coarse;
    let n = path.ntilde();
    (1..=n)
        .map(|i| {
            let left = u[i] - u[i - 1];
            let right = if i < n { u[i + 1] - u[i] } else { 0.0 };
            c * (left - right)
        })
        .collect()
}

/// Least-action path into the inflow-only event `min_t u_in(t) <= level c`:
/// the straight line from `u0` to `level c`, with action
/// `(u0 - level c)² / (2σ_u² T)`.
///
/// `sound_speed` is the reference speed converting Mach levels to inflow
/// speeds.
pub fn subsonic_bound(
    noise: &NoiseModel,
    level: f64,
    u0: f64,
    sound_speed: f64,
    ntilde: usize,
    refinement: usize,
    dt: f64,
) -> Result<(InflowPath, f64), LdpError> {
    let target = level * sound_speed;
    if !(level > 0.0) || target > u0 {
        return Err(LdpError::Domain(format!(
            "Mach level {level} is not below the initial inflow Mach {}",
            u0 / sound_speed
        )));
    }
    let path = InflowPath::linear(u0, target, ntilde, refinement, dt);
    let horizon = path.horizon();
    let value = (u0 - target).powi(2) / (2.0 * noise.sigma_u * noise.sigma_u * horizon);
    Ok((path, value))
}

/// Log-asymptotic estimate `exp(-I*/ε²)`. No prefactor: this is the decay
/// rate, not the probability itself.
pub fn asymptotic_probability(value: f64, epsilon: f64) -> f64 {
    if epsilon.is_infinite() {
        return 1.0;
    }
    (-value / (epsilon * epsilon)).exp()
}

/// Fixed-step run of the engine; true when the monitor Mach number reaches
/// the threshold.
pub fn is_unstart(path: &InflowPath, spec: &EventSpec, scenario: &Scenario) -> Result<bool, LdpError> {
    let rec = scenario.run(path, Stepping::Uniform, &spec.record_options())?;
    Ok(rec.min_mach <= spec.mach_threshold)
}
