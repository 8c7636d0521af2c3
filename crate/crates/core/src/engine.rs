//! Physical inputs of the engine model: gas law, duct geometry and the
//! periodic heat-release schedule.
//!
//! The engine is a quasi-1D duct on `[-L_I, L_C + L_E]` made of three
//! straight-walled regions (isolator, combustor, expansion). Heat is added
//! only in the combustor and only during the burst phase of each fuel cycle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("position {x} m lies outside the engine [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("invalid engine parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> EngineError {
    EngineError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Calorically perfect gas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasModel {
    /// Ratio of specific heats.
    pub gamma: f64,
}

impl GasModel {
    pub fn new(gamma: f64) -> Result<Self, EngineError> {
        if !(gamma > 1.0) || !gamma.is_finite() {
            return Err(invalid("gamma", format!("must exceed 1, got {gamma}")));
        }
        Ok(Self { gamma })
    }

    pub fn air() -> Self {
        Self { gamma: 1.4 }
    }
}

/// Free-stream (inflow) conditions. Density and pressure stay fixed at the
/// inlet, only the inflow speed is perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeStream {
    /// kg/m³
    pub density: f64,
    /// m/s
    pub velocity: f64,
    /// Pa
    pub pressure: f64,
}

impl FreeStream {
    pub fn new(density: f64, velocity: f64, pressure: f64) -> Result<Self, EngineError> {
        if !(density > 0.0) {
            return Err(invalid("density", "must be positive"));
        }
        if !(pressure > 0.0) {
            return Err(invalid("pressure", "must be positive"));
        }
        if !velocity.is_finite() {
            return Err(invalid("velocity", "must be finite"));
        }
        Ok(Self {
            density,
            velocity,
            pressure,
        })
    }

    pub fn sound_speed(&self, gas: &GasModel) -> f64 {
        (gas.gamma * self.pressure / self.density).sqrt()
    }

    pub fn mach(&self, gas: &GasModel) -> f64 {
        self.velocity / self.sound_speed(gas)
    }
}

/// Region lengths and wall angles as they appear in a configuration file.
/// Angles are in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    /// Minimum cross-sectional area (m²).
    pub area_min: f64,
    pub isolator_length: f64,
    pub combustor_length: f64,
    pub expansion_length: f64,
    pub isolator_angle_deg: f64,
    pub combustor_angle_deg: f64,
    pub expansion_angle_deg: f64,
}

/// Piecewise-linear engine cross section.
///
/// ```text
/// A(x) = A0 - x sin θ_I                              -L_I <= x < 0
///        A0 + x sin θ_C                                 0 <= x <= L_C
///        A0 + L_C sin θ_C + (x - L_C) sin θ_E         L_C <  x <= L_C + L_E
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct EngineGeometry {
    spec: GeometrySpec,
    sin_isolator: f64,
    sin_combustor: f64,
    sin_expansion: f64,
}

/// Which of the three duct regions a position falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Isolator,
    Combustor,
    Expansion,
}

impl EngineGeometry {
    pub fn new(spec: GeometrySpec) -> Result<Self, EngineError> {
        if !(spec.area_min > 0.0) {
            return Err(invalid("area_min", "must be positive"));
        }
        for (name, len) in [
            ("isolator_length", spec.isolator_length),
            ("combustor_length", spec.combustor_length),
            ("expansion_length", spec.expansion_length),
        ] {
            if !(len > 0.0) || !len.is_finite() {
                return Err(invalid(name, format!("must be positive, got {len}")));
            }
        }
        let geom = Self {
            spec,
            sin_isolator: spec.isolator_angle_deg.to_radians().sin(),
            sin_combustor: spec.combustor_angle_deg.to_radians().sin(),
            sin_expansion: spec.expansion_angle_deg.to_radians().sin(),
        };
        // A is piecewise linear, so positivity at the three breakpoints and
        // both ends covers the whole duct.
        for x in [geom.inlet(), 0.0, geom.combustor_end(), geom.outlet()] {
            let a = geom.area_unchecked(x);
            if !(a > 0.0) {
                return Err(invalid(
                    "angles",
                    format!("cross section A({x}) = {a} is not positive"),
                ));
            }
        }
        Ok(geom)
    }

    pub fn spec(&self) -> &GeometrySpec {
        &self.spec
    }

    pub fn area_min(&self) -> f64 {
        self.spec.area_min
    }

    /// Left end of the duct, `-L_I`.
    pub fn inlet(&self) -> f64 {
        -self.spec.isolator_length
    }

    pub fn combustor_end(&self) -> f64 {
        self.spec.combustor_length
    }

    /// Right end of the duct, `L_C + L_E`.
    pub fn outlet(&self) -> f64 {
        self.spec.combustor_length + self.spec.expansion_length
    }

    pub fn length(&self) -> f64 {
        self.outlet() - self.inlet()
    }

    pub fn region(&self, x: f64) -> Region {
        if x < 0.0 {
            Region::Isolator
        } else if x <= self.spec.combustor_length {
            Region::Combustor
        } else {
            Region::Expansion
        }
    }

    fn check(&self, x: f64) -> Result<(), EngineError> {
        let slack = 1e-12 * self.length();
        if !(x >= self.inlet() - slack && x <= self.outlet() + slack) {
            return Err(EngineError::OutOfDomain {
                x,
                lo: self.inlet(),
                hi: self.outlet(),
            });
        }
        Ok(())
    }

    pub(crate) fn area_unchecked(&self, x: f64) -> f64 {
        let a0 = self.spec.area_min;
        match self.region(x) {
            Region::Isolator => a0 - x * self.sin_isolator,
            Region::Combustor => a0 + x * self.sin_combustor,
            Region::Expansion => {
                let lc = self.spec.combustor_length;
                a0 + lc * self.sin_combustor + (x - lc) * self.sin_expansion
            }
        }
    }

    pub(crate) fn area_slope_unchecked(&self, x: f64) -> f64 {
        match self.region(x) {
            Region::Isolator => -self.sin_isolator,
            Region::Combustor => self.sin_combustor,
            Region::Expansion => self.sin_expansion,
        }
    }

    /// Cross-sectional area `A(x)` in m².
    pub fn area(&self, x: f64) -> Result<f64, EngineError> {
        self.check(x)?;
        Ok(self.area_unchecked(x))
    }

    /// `dA/dx` of the region containing `x`. Breakpoints belong to the
    /// combustor, matching the closed interval in the area formula.
    pub fn area_slope(&self, x: f64) -> Result<f64, EngineError> {
        self.check(x)?;
        Ok(self.area_slope_unchecked(x))
    }
}

/// Periodic fuel bursts: fuel is injected on `[nτ, nτ + b)` and off on
/// `[nτ + b, (n+1)τ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuelSchedule {
    /// Equivalence ratio φ.
    pub equivalence_ratio: f64,
    /// Cycle length τ (s).
    pub cycle: f64,
    /// Burst length b (s).
    pub burst: f64,
    /// Stoichiometric fuel/air ratio.
    pub stoichiometric_ratio: f64,
    /// Fuel heating value (J/kg).
    pub heating_value: f64,
    /// Free-stream density used in the heat-release scale (kg/m³).
    pub rho0: f64,
    /// Free-stream velocity used in the heat-release scale (m/s).
    pub u0: f64,
}

impl FuelSchedule {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.equivalence_ratio >= 0.0) {
            return Err(invalid("equivalence_ratio", "must be nonnegative"));
        }
        if !(self.burst > 0.0 && self.burst <= self.cycle) {
            return Err(invalid(
                "burst",
                format!(
                    "need 0 < burst <= cycle, got burst {} and cycle {}",
                    self.burst, self.cycle
                ),
            ));
        }
        if !(self.stoichiometric_ratio >= 0.0 && self.heating_value >= 0.0) {
            return Err(invalid("heating_value", "must be nonnegative"));
        }
        if !(self.rho0 > 0.0) {
            return Err(invalid("rho0", "must be positive"));
        }
        Ok(())
    }

    /// Same schedule with the fuel switched off.
    pub fn disabled(&self) -> Self {
        Self {
            equivalence_ratio: 0.0,
            ..*self
        }
    }

    /// Continuous fueling (burst spans the whole cycle).
    pub fn steady(&self) -> Self {
        Self {
            burst: self.cycle,
            ..*self
        }
    }

    pub fn with_equivalence_ratio(&self, phi: f64) -> Self {
        Self {
            equivalence_ratio: phi,
            ..*self
        }
    }

    /// `f(t)`: 1 during the burst, 0 otherwise.
    pub fn fuel_indicator(&self, t: f64) -> f64 {
        if t.rem_euclid(self.cycle) < self.burst {
            1.0
        } else {
            0.0
        }
    }

    /// `φ f_stoch H_prop A0 ρ0 u0 / L_C²`, the factor shared by every cell.
    pub fn heat_scale(&self, geom: &EngineGeometry) -> f64 {
        let lc = geom.spec().combustor_length;
        self.equivalence_ratio
            * self.stoichiometric_ratio
            * self.heating_value
            * geom.area_min()
            * self.rho0
            * self.u0
            / (lc * lc)
    }

    /// Volumetric heat release rate `f(x, t)` in W/m³.
    pub fn heat_source(&self, geom: &EngineGeometry, x: f64, t: f64) -> f64 {
        if x < 0.0 || x > geom.combustor_end() {
            return 0.0;
        }
        let on = self.fuel_indicator(t);
        if on == 0.0 {
            return 0.0;
        }
        on * x.cbrt() * self.heat_scale(geom) / geom.area_unchecked(x)
    }
}
