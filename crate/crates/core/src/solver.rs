//! First-order finite-volume solver for the quasi-1D Euler equations with
//! area and heat-release source terms.
//!
//! The state is cell-averaged `(ρ, ρu, E)` on `K` uniform cells covering the
//! duct plus one ghost cell past the outlet. Interfaces use the
//! component-wise local Lax-Friedrichs flux; time stepping is forward Euler
//! with either a fixed increment or the CFL-0.8 adaptive increment.
//!
//! Boundary handling:
//! - cell 0 is the inflow cell, held at `(ρ0, ρ0 u_in(t), E(ρ0, u_in, P0))`;
//! - cell `K` is refreshed from cell `K-1` of the previous time level.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineGeometry, FreeStream, FuelSchedule, GasModel};

/// Courant number of the adaptive step.
pub const ADAPTIVE_CFL: f64 = 0.8;
/// Model-time budget for reaching the no-fuel equilibrium.
pub const SPIN_UP_MAX_TIME: f64 = 0.1;
/// Relative sup-norm change per step below which the flow counts as steady.
pub const SPIN_UP_TOLERANCE: f64 = 1e-10;
/// Default CFL ceiling for fixed-increment runs. Near-unstart trajectories
/// with Δt = 1e-6 s reach CFL ≈ 1.04 and stay bounded; beyond this the run
/// is declared unstable.
pub const DEFAULT_CFL_LIMIT: f64 = 1.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid state in cell {cell} at t = {time:.6e} s (rho = {rho:.4e}, P = {pressure:.4e})")]
    InvalidState {
        cell: usize,
        time: f64,
        rho: f64,
        pressure: f64,
    },
    #[error("CFL number {cfl:.3} exceeds the limit {limit} at t = {time:.6e} s with a fixed time increment")]
    Unstable { cfl: f64, time: f64, limit: f64 },
    #[error("spin-up did not reach equilibrium within {time:.3} s (last relative change {change:.3e})")]
    SpinUpFailure { time: f64, change: f64 },
    #[error("bad discretization: {0}")]
    Discretization(String),
}

/// Conserved variables of one cell: density, momentum and total energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conserved {
    pub rho: f64,
    pub mom: f64,
    pub ener: f64,
}

impl Conserved {
    pub fn new(rho: f64, mom: f64, ener: f64) -> Self {
        Self { rho, mom, ener }
    }

    /// State with the given density, velocity and pressure.
    pub fn from_primitive(rho: f64, u: f64, pressure: f64, gas: &GasModel) -> Self {
        Self {
            rho,
            mom: rho * u,
            ener: pressure / (gas.gamma - 1.0) + 0.5 * rho * u * u,
        }
    }

    pub fn velocity(&self) -> f64 {
        self.mom / self.rho
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.rho, self.mom, self.ener]
    }
}

/// `P = (γ-1)(E - (ρu)²/(2ρ))`. Zero or negative pressure is reported as an
/// invalid state.
pub fn pressure(w: &Conserved, gas: &GasModel) -> Result<f64, SolverError> {
    if !(w.rho > 0.0) {
        return Err(invalid_state(0, 0.0, w.rho, f64::NAN));
    }
    let p = (gas.gamma - 1.0) * (w.ener - 0.5 * w.mom * w.mom / w.rho);
    if !(p > 0.0) {
        return Err(invalid_state(0, 0.0, w.rho, p));
    }
    Ok(p)
}

pub fn sound_speed(w: &Conserved, gas: &GasModel) -> Result<f64, SolverError> {
    let p = pressure(w, gas)?;
    Ok((gas.gamma * p / w.rho).sqrt())
}

/// `M = u / sqrt(γP/ρ)`.
pub fn mach(w: &Conserved, gas: &GasModel) -> Result<f64, SolverError> {
    Ok(w.velocity() / sound_speed(w, gas)?)
}

/// Physical Euler flux `(ρu, ρu² + P, (E + P)u)`.
pub fn physical_flux(w: &Conserved, gas: &GasModel) -> Result<[f64; 3], SolverError> {
    Ok(CellState::new(w, gas)?.flux)
}

fn invalid_state(cell: usize, time: f64, rho: f64, pressure: f64) -> SolverError {
    SolverError::InvalidState {
        cell,
        time,
        rho,
        pressure,
    }
}

/// Per-cell quantities needed by the flux and source terms, computed once
/// per step.
#[derive(Debug, Clone, Copy)]
struct CellState {
    cons: [f64; 3],
    u: f64,
    p: f64,
    c: f64,
    flux: [f64; 3],
}

impl CellState {
    #[inline(always)]
    fn unchecked(rho: f64, mom: f64, ener: f64, gamma: f64) -> Self {
        let u = mom / rho;
        let p = (gamma - 1.0) * (ener - 0.5 * mom * u);
        let c = (gamma * p / rho).sqrt();
        Self {
            cons: [rho, mom, ener],
            u,
            p,
            c,
            flux: [mom, mom * u + p, (ener + p) * u],
        }
    }

    fn new(w: &Conserved, gas: &GasModel) -> Result<Self, SolverError> {
        pressure(w, gas)?;
        Ok(Self::unchecked(w.rho, w.mom, w.ener, gas.gamma))
    }

    #[inline(always)]
    fn wave_speed(&self) -> f64 {
        (self.c + self.u).abs()
    }
}

#[inline(always)]
fn interface_flux(left: &CellState, right: &CellState) -> [f64; 3] {
    let alpha = left.wave_speed().max(right.wave_speed());
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = 0.5 * (left.flux[i] + right.flux[i]) - 0.5 * alpha * (right.cons[i] - left.cons[i]);
    }
    out
}

/// Component-wise local Lax-Friedrichs flux between two cells,
/// `½(f(L) + f(R)) - ½ max(|c_L + u_L|, |c_R + u_R|) (R - L)`.
pub fn llf_flux(left: &Conserved, right: &Conserved, gas: &GasModel) -> Result<[f64; 3], SolverError> {
    let l = CellState::new(left, gas)?;
    let r = CellState::new(right, gas)?;
    Ok(interface_flux(&l, &r))
}

/// Uniform space-time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    /// Number of cells `K` covering the duct.
    pub cells: usize,
    /// Fixed time increment Δt (s).
    pub dt: f64,
    /// Number of fixed steps `N`; the horizon is `N Δt`.
    pub steps: usize,
}

impl Discretization {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.cells < 3 {
            return Err(SolverError::Discretization(format!(
                "need at least 3 cells, got {}",
                self.cells
            )));
        }
        if !(self.dt > 0.0) || self.steps == 0 {
            return Err(SolverError::Discretization(
                "time increment and step count must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }
}

/// Cell-averaged conserved field on cells `0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservedField {
    pub rho: Vec<f64>,
    pub mom: Vec<f64>,
    pub ener: Vec<f64>,
}

impl ConservedField {
    pub fn uniform(len: usize, w: Conserved) -> Self {
        Self {
            rho: vec![w.rho; len],
            mom: vec![w.mom; len],
            ener: vec![w.ener; len],
        }
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn cell(&self, k: usize) -> Conserved {
        Conserved::new(self.rho[k], self.mom[k], self.ener[k])
    }

    pub fn set_cell(&mut self, k: usize, w: Conserved) {
        self.rho[k] = w.rho;
        self.mom[k] = w.mom;
        self.ener[k] = w.ener;
    }

    /// Checks positivity of density and pressure in every cell.
    pub fn validate(&self, gas: &GasModel, time: f64) -> Result<(), SolverError> {
        for k in 0..self.len() {
            let w = self.cell(k);
            let p = (gas.gamma - 1.0) * (w.ener - 0.5 * w.mom * w.mom / w.rho);
            if !(w.rho > 0.0 && p > 0.0) || !w.mom.is_finite() {
                return Err(invalid_state(k, time, w.rho, p));
            }
        }
        Ok(())
    }

    pub fn pressures(&self, gas: &GasModel) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let w = self.cell(k);
                (gas.gamma - 1.0) * (w.ener - 0.5 * w.mom * w.mom / w.rho)
            })
            .collect()
    }

    pub fn mach_numbers(&self, gas: &GasModel) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let s = CellState::unchecked(self.rho[k], self.mom[k], self.ener[k], gas.gamma);
                s.u / s.c
            })
            .collect()
    }

    /// Largest relative change of any conserved variable between two fields.
    pub fn relative_change(&self, other: &Self) -> f64 {
        fn rel(a: &[f64], b: &[f64]) -> f64 {
            let floor = a.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1e-8;
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs() / x.abs().max(floor).max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max)
        }
        rel(&self.rho, &other.rho)
            .max(rel(&self.mom, &other.mom))
            .max(rel(&self.ener, &other.ener))
    }
}

/// `0.8 Δx / max_k |c_k + u_k|`.
pub fn adaptive_dt(field: &ConservedField, dx: f64, gas: &GasModel) -> Result<f64, SolverError> {
    field.validate(gas, 0.0)?;
    Ok(ADAPTIVE_CFL * dx / max_wave_speed(field, gas))
}

fn max_wave_speed(field: &ConservedField, gas: &GasModel) -> f64 {
    (0..field.len())
        .map(|k| CellState::unchecked(field.rho[k], field.mom[k], field.ener[k], gas.gamma).wave_speed())
        .fold(0.0, f64::max)
}

/// Prescribed inflow speed as a function of time.
pub trait Inflow: Sync {
    /// Inflow speed at an arbitrary time (adaptive stepping).
    fn speed(&self, t: f64) -> f64;

    /// Inflow speed at fixed-grid time level `n` (uniform stepping).
    fn speed_at_step(&self, n: usize, dt: f64) -> f64 {
        self.speed(n as f64 * dt)
    }
}

/// Time-independent inflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantInflow(pub f64);

impl Inflow for ConstantInflow {
    fn speed(&self, _t: f64) -> f64 {
        self.0
    }
}

/// Piecewise-linear inflow through `(t, u)` samples; constant beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedInflow {
    times: Vec<f64>,
    speeds: Vec<f64>,
}

impl TabulatedInflow {
    pub fn new(times: Vec<f64>, speeds: Vec<f64>) -> Result<Self, SolverError> {
        if times.is_empty() || times.len() != speeds.len() {
            return Err(SolverError::Discretization(
                "inflow table needs matching, nonempty columns".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SolverError::Discretization(
                "inflow table times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, speeds })
    }
}

impl Inflow for TabulatedInflow {
    fn speed(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.speeds[0];
        }
        if t >= self.times[n - 1] {
            return self.speeds[n - 1];
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        (1.0 - w) * self.speeds[i] + w * self.speeds[i + 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Stepping {
    /// Fixed Δt on the `N`-step grid.
    #[default]
    Uniform,
    /// CFL-0.8 increments until the horizon is reached.
    Adaptive,
}

/// What `simulate` should track beyond the minimum monitor Mach number.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordOptions {
    /// Cell whose Mach number is monitored for unstart.
    pub monitor_cell: usize,
    /// Threshold for `unstart_time`.
    pub threshold: Option<f64>,
    /// Stop as soon as the monitor Mach number drops to this level.
    pub stop_level: Option<f64>,
    /// Also accumulate a soft minimum `-(1/β) log Σ exp(-β M)` of the monitor.
    pub soft_min_beta: Option<f64>,
    /// Keep every `history_stride`-th time level in the histories (0 = none).
    pub history_stride: usize,
    pub mach_history: bool,
    pub shock_history: bool,
    pub thrust_history: bool,
    /// Abort fixed-increment runs whose CFL number exceeds this limit.
    pub cfl_limit: Option<f64>,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            monitor_cell: 1,
            threshold: None,
            stop_level: None,
            soft_min_beta: None,
            history_stride: 0,
            mach_history: false,
            shock_history: false,
            thrust_history: false,
            cfl_limit: Some(DEFAULT_CFL_LIMIT),
        }
    }
}

impl RecordOptions {
    /// Event detection only: stop once the threshold is reached.
    pub fn event(threshold: f64) -> Self {
        Self {
            threshold: Some(threshold),
            stop_level: Some(threshold),
            ..Self::default()
        }
    }

    pub fn with_histories(stride: usize) -> Self {
        Self {
            history_stride: stride.max(1),
            mach_history: true,
            shock_history: true,
            thrust_history: true,
            ..Self::default()
        }
    }
}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Minimum over time levels `1..=N` of the monitor-cell Mach number.
    pub min_mach: f64,
    /// Time level at which `min_mach` was first attained.
    pub min_mach_time: f64,
    /// First time the monitor reached the threshold, if a threshold was set.
    pub unstart_time: Option<f64>,
    pub soft_min_mach: Option<f64>,
    pub steps_taken: usize,
    pub final_time: f64,
    /// Largest `h max|c+u| / Δx` over the run.
    pub max_cfl: f64,
    /// `(t, Mach per cell 0..K-1)`.
    pub mach_history: Vec<(f64, Vec<f64>)>,
    pub shock_history: Vec<(f64, f64)>,
    pub thrust_history: Vec<(f64, f64)>,
}

/// Grid-dependent coefficients of the scheme, precomputed per solver.
#[derive(Debug, Clone)]
pub struct FlowSolver {
    gas: GasModel,
    geometry: EngineGeometry,
    freestream: FreeStream,
    disc: Discretization,
    dx: f64,
    midpoints: Vec<f64>,
    /// `A'(x)/A(x)` at cell midpoints.
    area_ratio: Vec<f64>,
    /// `x^{1/3} / A(x)` in the combustor, zero elsewhere.
    heat_profile: Vec<f64>,
}

/// Scratch buffers reused across steps.
struct Workspace {
    cells: Vec<CellState>,
    fluxes: Vec<[f64; 3]>,
    next: ConservedField,
}

impl FlowSolver {
    pub fn new(
        gas: GasModel,
        geometry: EngineGeometry,
        freestream: FreeStream,
        disc: Discretization,
    ) -> Result<Self, SolverError> {
        disc.validate()?;
        let k = disc.cells;
        let dx = geometry.length() / k as f64;
        let midpoints: Vec<f64> = (0..k)
            .map(|i| geometry.inlet() + (i as f64 + 0.5) * dx)
            .collect();
        let area_ratio = midpoints
            .iter()
            .map(|&x| geometry.area_slope_unchecked(x) / geometry.area_unchecked(x))
            .collect();
        let heat_profile = midpoints
            .iter()
            .map(|&x| {
                if x >= 0.0 && x <= geometry.combustor_end() {
                    x.cbrt() / geometry.area_unchecked(x)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            gas,
            geometry,
            freestream,
            disc,
            dx,
            midpoints,
            area_ratio,
            heat_profile,
        })
    }

    pub fn gas(&self) -> &GasModel {
        &self.gas
    }

    pub fn geometry(&self) -> &EngineGeometry {
        &self.geometry
    }

    pub fn freestream(&self) -> &FreeStream {
        &self.freestream
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Cell midpoints `x_{k+1/2}` for `k = 0..K-1`.
    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    /// Inflow cell state for a given inflow speed.
    pub fn inflow_state(&self, u: f64) -> Conserved {
        Conserved::from_primitive(self.freestream.density, u, self.freestream.pressure, &self.gas)
    }

    pub fn freestream_field(&self) -> ConservedField {
        ConservedField::uniform(self.disc.cells + 1, self.inflow_state(self.freestream.velocity))
    }

    fn workspace(&self) -> Workspace {
        let n = self.disc.cells + 1;
        Workspace {
            cells: vec![CellState::unchecked(1.0, 0.0, 1.0, self.gas.gamma); n],
            fluxes: vec![[0.0; 3]; n - 1],
            next: ConservedField::uniform(n, Conserved::new(0.0, 0.0, 0.0)),
        }
    }

    /// Fills `ws.cells` and returns the largest `|c + u|`.
    fn prepare(&self, field: &ConservedField, ws: &mut Workspace, time: f64) -> Result<f64, SolverError> {
        let g = self.gas.gamma;
        let mut smax = 0.0f64;
        for k in 0..field.len() {
            let s = CellState::unchecked(field.rho[k], field.mom[k], field.ener[k], g);
            if !(s.cons[0] > 0.0 && s.p > 0.0) {
                return Err(invalid_state(k, time, s.cons[0], s.p));
            }
            smax = smax.max(s.wave_speed());
            ws.cells[k] = s;
        }
        Ok(smax)
    }

    /// Forward-Euler update using the cell states already in `ws`. Writes the
    /// new field into `ws.next`.
    fn advance(
        &self,
        field: &ConservedField,
        ws: &mut Workspace,
        u_inflow: f64,
        h: f64,
        t: f64,
        heat: f64,
    ) -> Result<(), SolverError> {
        let k_last = self.disc.cells;
        for k in 0..k_last {
            ws.fluxes[k] = interface_flux(&ws.cells[k], &ws.cells[k + 1]);
        }
        let lambda = h / self.dx;
        let g = self.gas.gamma;
        for k in 1..k_last {
            let s = &ws.cells[k];
            let fr = &ws.fluxes[k];
            let fl = &ws.fluxes[k - 1];
            let r = h * self.area_ratio[k];
            let rho = s.cons[0] - lambda * (fr[0] - fl[0]) - r * s.flux[0];
            let mom = s.cons[1] - lambda * (fr[1] - fl[1]) + r * (s.p - s.flux[1]);
            let ener = s.cons[2] - lambda * (fr[2] - fl[2]) - r * s.flux[2]
                + h * heat * self.heat_profile[k];
            let p = (g - 1.0) * (ener - 0.5 * mom * mom / rho);
            if !(rho > 0.0 && p > 0.0) || !mom.is_finite() {
                return Err(invalid_state(k, t + h, rho, p));
            }
            ws.next.rho[k] = rho;
            ws.next.mom[k] = mom;
            ws.next.ener[k] = ener;
        }
        ws.next.set_cell(0, self.inflow_state(u_inflow));
        ws.next.rho[k_last] = field.rho[k_last - 1];
        ws.next.mom[k_last] = field.mom[k_last - 1];
        ws.next.ener[k_last] = field.ener[k_last - 1];
        Ok(())
    }

    /// One forward-Euler LLF step of length `h` from time `t`. `u_inflow` is
    /// the inflow speed imposed on cell 0 at the new time level.
    pub fn step(
        &self,
        field: &ConservedField,
        u_inflow: f64,
        h: f64,
        t: f64,
        fuel: &FuelSchedule,
    ) -> Result<ConservedField, SolverError> {
        let mut ws = self.workspace();
        self.prepare(field, &mut ws, t)?;
        let heat = fuel.heat_scale(&self.geometry) * fuel.fuel_indicator(t);
        self.advance(field, &mut ws, u_inflow, h, t, heat)?;
        Ok(ws.next)
    }

    pub fn adaptive_dt(&self, field: &ConservedField) -> Result<f64, SolverError> {
        adaptive_dt(field, self.dx, &self.gas)
    }

    /// Runs the unfueled engine with constant inflow from a uniform free
    /// stream until the field stops changing.
    pub fn spin_up(&self, u_const: f64) -> Result<ConservedField, SolverError> {
        let start = ConservedField::uniform(self.disc.cells + 1, self.inflow_state(u_const));
        self.spin_up_from(start, u_const)
    }

    pub fn spin_up_from(&self, mut field: ConservedField, u_const: f64) -> Result<ConservedField, SolverError> {
        let mut ws = self.workspace();
        let mut t = 0.0;
        let mut change = f64::INFINITY;
        while t < SPIN_UP_MAX_TIME {
            let smax = self.prepare(&field, &mut ws, t)?;
            let h = ADAPTIVE_CFL * self.dx / smax;
            self.advance(&field, &mut ws, u_const, h, t, 0.0)?;
            change = ws.next.relative_change(&field);
            std::mem::swap(&mut field, &mut ws.next);
            t += h;
            if change < SPIN_UP_TOLERANCE {
                return Ok(field);
            }
        }
        Err(SolverError::SpinUpFailure {
            time: SPIN_UP_MAX_TIME,
            change,
        })
    }

    /// Integrates from `initial` (normally the spin-up equilibrium) to the
    /// horizon `N Δt`.
    ///
    /// In uniform mode time level `n` uses `inflow.speed_at_step(n)`; in
    /// adaptive mode the inflow is evaluated at each adaptive time and the run
    /// ends with the first step that reaches the horizon.
    pub fn simulate(
        &self,
        initial: &ConservedField,
        inflow: &dyn Inflow,
        fuel: &FuelSchedule,
        stepping: Stepping,
        opts: &RecordOptions,
    ) -> Result<TrajectoryRecord, SolverError> {
        let horizon = self.disc.horizon();
        let heat_scale = fuel.heat_scale(&self.geometry);
        let monitor = opts.monitor_cell;
        if monitor == 0 || monitor >= self.disc.cells {
            return Err(SolverError::Discretization(format!(
                "monitor cell {monitor} is not an interior cell"
            )));
        }
        let mut ws = self.workspace();
        let mut field = initial.clone();
        let mut rec = TrajectoryRecord {
            min_mach: f64::INFINITY,
            min_mach_time: 0.0,
            unstart_time: None,
            soft_min_mach: None,
            steps_taken: 0,
            final_time: 0.0,
            max_cfl: 0.0,
            mach_history: Vec::new(),
            shock_history: Vec::new(),
            thrust_history: Vec::new(),
        };
        // log-sum-exp accumulator for the soft minimum, shifted by the running min
        let mut soft_acc = 0.0f64;
        let mut soft_shift = f64::INFINITY;

        if opts.history_stride > 0 {
            self.record_histories(&field, 0.0, opts, &mut rec);
        }

        let mut t = 0.0;
        let mut n = 0usize;
        loop {
            let done = match stepping {
                Stepping::Uniform => n >= self.disc.steps,
                Stepping::Adaptive => t >= horizon,
            };
            if done {
                break;
            }
            let smax = self.prepare(&field, &mut ws, t)?;
            let (h, t_next, u_next) = match stepping {
                Stepping::Uniform => {
                    let h = self.disc.dt;
                    let t_next = (n + 1) as f64 * h;
                    (h, t_next, inflow.speed_at_step(n + 1, h))
                }
                Stepping::Adaptive => {
                    let h = ADAPTIVE_CFL * self.dx / smax;
                    (h, t + h, inflow.speed(t + h))
                }
            };
            let cfl = h * smax / self.dx;
            rec.max_cfl = rec.max_cfl.max(cfl);
            if let Some(limit) = opts.cfl_limit {
                if stepping == Stepping::Uniform && cfl > limit {
                    return Err(SolverError::Unstable { cfl, time: t, limit });
                }
            }
            let heat = heat_scale * fuel.fuel_indicator(t);
            self.advance(&field, &mut ws, u_next, h, t, heat)?;
            std::mem::swap(&mut field, &mut ws.next);
            t = t_next;
            n += 1;

            let m = field.mom[monitor] / field.rho[monitor];
            let p = (self.gas.gamma - 1.0) * (field.ener[monitor] - 0.5 * field.mom[monitor] * m);
            let mach = m / (self.gas.gamma * p / field.rho[monitor]).sqrt();
            if mach < rec.min_mach {
                rec.min_mach = mach;
                rec.min_mach_time = t;
            }
            if let Some(beta) = opts.soft_min_beta {
                if mach < soft_shift {
                    soft_acc = soft_acc * (-beta * (soft_shift - mach)).exp() + 1.0;
                    if !soft_acc.is_finite() {
                        soft_acc = 1.0;
                    }
                    soft_shift = mach;
                } else {
                    soft_acc += (-beta * (mach - soft_shift)).exp();
                }
            }
            if opts.history_stride > 0 && n % opts.history_stride == 0 {
                self.record_histories(&field, t, opts, &mut rec);
            }
            if let Some(thr) = opts.threshold {
                if rec.unstart_time.is_none() && mach <= thr {
                    rec.unstart_time = Some(t);
                }
            }
            if opts.stop_level.is_some_and(|lvl| mach <= lvl) {
                break;
            }
        }
        if let Some(beta) = opts.soft_min_beta {
            rec.soft_min_mach = Some(soft_shift - soft_acc.ln() / beta);
        }
        rec.steps_taken = n;
        rec.final_time = t;
        if !rec.min_mach.is_finite() {
            return Err(invalid_state(monitor, t, field.rho[monitor], f64::NAN));
        }
        Ok(rec)
    }

    fn record_histories(&self, field: &ConservedField, t: f64, opts: &RecordOptions, rec: &mut TrajectoryRecord) {
        if opts.mach_history || opts.shock_history {
            let mut m = field.mach_numbers(&self.gas);
            m.truncate(self.disc.cells);
            if opts.shock_history {
                rec.shock_history.push((t, self.shock_location(&m)));
            }
            if opts.mach_history {
                rec.mach_history.push((t, m));
            }
        }
        if opts.thrust_history {
            rec.thrust_history.push((t, self.thrust(field)));
        }
    }

    /// Position of the shock in the isolator: the right-most isolator cell
    /// midpoint with `M >= 1`. Returns 0 when the isolator is supersonic up
    /// to its downstream end and `-L_I` when no isolator cell is supersonic.
    pub fn shock_location(&self, mach: &[f64]) -> f64 {
        let isolator: Vec<usize> = (0..self.disc.cells.min(mach.len()))
            .filter(|&k| self.midpoints[k] < 0.0)
            .collect();
        let last = match isolator.last() {
            Some(&k) => k,
            None => return 0.0,
        };
        match isolator.iter().rev().find(|&&k| mach[k] >= 1.0) {
            Some(&k) if k == last => 0.0,
            Some(&k) => self.midpoints[k],
            None => self.geometry.inlet(),
        }
    }

    /// `(Aρu²)_e - (Aρu²)_i + (P_e - P_i) A_e` with `e` the outflow cell and
    /// `i` the inflow cell.
    pub fn thrust(&self, field: &ConservedField) -> f64 {
        let a_i = self.geometry.area_unchecked(self.geometry.inlet());
        let a_e = self.geometry.area_unchecked(self.geometry.outlet());
        let i = 0;
        let e = self.disc.cells;
        let g = self.gas.gamma;
        let p = |k: usize| (g - 1.0) * (field.ener[k] - 0.5 * field.mom[k] * field.mom[k] / field.rho[k]);
        let ru2 = |k: usize| field.mom[k] * field.mom[k] / field.rho[k];
        a_e * ru2(e) - a_i * ru2(i) + (p(e) - p(i)) * a_e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::GeometrySpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn geometry(ti: f64, tc: f64, te: f64) -> EngineGeometry {
        EngineGeometry::new(GeometrySpec {
            area_min: 0.008,
            isolator_length: 0.5,
            combustor_length: 0.1,
            expansion_length: 0.1,
            isolator_angle_deg: ti,
            combustor_angle_deg: tc,
            expansion_angle_deg: te,
        })
        .unwrap()
    }

    fn freestream() -> FreeStream {
        FreeStream::new(0.159, 1300.0, 47842.0).unwrap()
    }

    fn disc() -> Discretization {
        Discretization {
            cells: 100,
            dt: 1e-6,
            steps: 10_000,
        }
    }

    fn fuel() -> FuelSchedule {
        FuelSchedule {
            equivalence_ratio: 0.78,
            cycle: 0.5e-3,
            burst: 0.1e-3,
            stoichiometric_ratio: 0.029,
            heating_value: 1.2e8,
            rho0: 0.159,
            u0: 1300.0,
        }
    }

    fn solver(ti: f64, tc: f64, te: f64) -> FlowSolver {
        FlowSolver::new(GasModel::air(), geometry(ti, tc, te), freestream(), disc()).unwrap()
    }

    #[test]
    fn pressure_values() {
        let gas = GasModel::air();
        // E = 47842/0.4 + 0.159*1300²/2 = 253960
        let w = Conserved::new(0.159, 0.159 * 1300.0, 253960.0);
        assert_relative_eq!(pressure(&w, &gas).unwrap(), 47842.0, max_relative = 1e-12);
        let w = Conserved::from_primitive(0.159, 1300.0, 47842.0, &gas);
        assert_relative_eq!(w.ener, 253960.0, max_relative = 1e-14);
        assert_relative_eq!(pressure(&Conserved::new(1.0, 0.0, 2.5), &gas).unwrap(), 1.0);
        let cold = Conserved::new(2.0, 2.0 * 3.0, 0.5 * 2.0 * 9.0);
        assert!(matches!(pressure(&cold, &gas), Err(SolverError::InvalidState { .. })));
        assert!(pressure(&Conserved::new(0.0, 0.0, 1.0), &gas).is_err());
    }

    #[test]
    fn mach_values() {
        let gas = GasModel::air();
        let w = Conserved::from_primitive(0.159, 1300.0, 47842.0, &gas);
        // 1300 / sqrt(1.4*47842/0.159)
        assert_relative_eq!(mach(&w, &gas).unwrap(), 2.0029644133937405, max_relative = 1e-13);
        let still = Conserved::from_primitive(0.159, 0.0, 47842.0, &gas);
        assert_eq!(mach(&still, &gas).unwrap(), 0.0);
        let c = (1.4f64 * 47842.0 / 0.159).sqrt();
        let sonic = Conserved::from_primitive(0.159, c, 47842.0, &gas);
        assert_relative_eq!(mach(&sonic, &gas).unwrap(), 1.0, max_relative = 1e-13);
    }

    #[test]
    fn llf_flux_freestream() {
        let gas = GasModel::air();
        let w = Conserved::from_primitive(0.159, 1300.0, 47842.0, &gas);
        let f = llf_flux(&w, &w, &gas).unwrap();
        // ρu, ρu² + P, (E + P)u from the table constants
        assert_relative_eq!(f[0], 206.7, max_relative = 1e-14);
        assert_relative_eq!(f[1], 316552.0, max_relative = 1e-13);
        assert_relative_eq!(f[2], 392342600.0, max_relative = 1e-13);
    }

    #[test]
    fn llf_flux_density_jump() {
        // Same momentum and energy, density differs: only the mass component
        // of the jump is nonzero, so dissipation enters the first component.
        let gas = GasModel::air();
        let l = Conserved::new(1.0, 1.0, 10.0);
        let r = Conserved::new(2.0, 1.0, 10.0);
        let f = llf_flux(&l, &r, &gas).unwrap();
        // Hand evaluation:
        // left: u=1, P=0.4*(10-0.5)=3.8, c=sqrt(1.4*3.8)=2.30651252...
        // right: u=0.5, P=0.4*(10-0.25)=3.9, c=sqrt(1.4*3.9/2)=1.65227116...
        let cl = (1.4f64 * 3.8).sqrt();
        let cr = (1.4f64 * 3.9 / 2.0).sqrt();
        let alpha = (cl + 1.0).max(cr + 0.5);
        let fl = [1.0, 1.0 + 3.8, (10.0 + 3.8) * 1.0];
        let fr = [1.0, 0.5 + 3.9, (10.0 + 3.9) * 0.5];
        assert_relative_eq!(f[0], 0.5 * (fl[0] + fr[0]) - 0.5 * alpha * 1.0, max_relative = 1e-14);
        assert_relative_eq!(f[1], 0.5 * (fl[1] + fr[1]), max_relative = 1e-14);
        assert_relative_eq!(f[2], 0.5 * (fl[2] + fr[2]), max_relative = 1e-14);
        assert_relative_eq!(f[0], -0.6532562594670797, max_relative = 1e-12);
    }

    #[test]
    fn adaptive_dt_values() {
        let s = solver(0.0, 7.5, 15.0);
        let field = s.freestream_field();
        let h = s.adaptive_dt(&field).unwrap();
        assert_relative_eq!(h, 2.873212335675572e-06, max_relative = 1e-12);
        let h2 = adaptive_dt(&field, 2.0 * s.dx(), s.gas()).unwrap();
        assert_relative_eq!(h2, 2.0 * h, max_relative = 1e-15);
    }

    #[test]
    fn flat_duct_uniform_state_is_fixed_point() {
        let s = solver(0.0, 0.0, 0.0);
        let field = s.freestream_field();
        let next = s.step(&field, 1300.0, 1e-6, 0.0, &fuel().disabled()).unwrap();
        for k in 0..field.len() {
            for (a, b) in [
                (field.rho[k], next.rho[k]),
                (field.mom[k], next.mom[k]),
                (field.ener[k], next.ener[k]),
            ] {
                assert!((a - b).abs() <= f64::EPSILON * a.abs(), "cell {k}: {a} vs {b}");
            }
        }
        let eq = s.spin_up(1300.0).unwrap();
        assert!(eq.relative_change(&field) < 1e-12);
    }

    #[test]
    fn single_fueled_step_changes_only_combustor_energy() {
        let s = solver(0.0, 0.0, 0.0);
        let field = s.freestream_field();
        let next = s.step(&field, 1300.0, 1e-6, 0.0, &fuel()).unwrap();
        for k in 0..field.len() {
            assert!((next.rho[k] - field.rho[k]).abs() <= 1e-15 * field.rho[k]);
            assert!((next.mom[k] - field.mom[k]).abs() <= 1e-15 * field.mom[k]);
            let de = next.ener[k] - field.ener[k];
            let x = if k < 100 { s.midpoints()[k] } else { 1.0 };
            if (0.0..=0.1).contains(&x) {
                assert!(de > 0.0, "cell {k} not heated");
            } else {
                assert!(de.abs() <= 1e-15 * field.ener[k], "cell {k} changed");
            }
        }
    }

    #[test]
    fn spin_up_is_supersonic_and_stationary() {
        let s = solver(0.0, 7.5, 15.0);
        let eq = s.spin_up(1300.0).unwrap();
        let m = eq.mach_numbers(s.gas());
        assert!(m.iter().all(|&v| v > 1.0), "min Mach {}", m.iter().cloned().fold(9.0, f64::min));
        let next = s.step(&eq, 1300.0, 1e-6, 0.0, &fuel().disabled()).unwrap();
        assert!(next.relative_change(&eq) < SPIN_UP_TOLERANCE);
        // restarting from the equilibrium converges within a single step
        let again = s.spin_up_from(eq.clone(), 1300.0).unwrap();
        assert!(again.relative_change(&eq) < SPIN_UP_TOLERANCE);
    }

    #[test]
    fn adaptive_steps_hold_cfl_exactly() {
        let s = solver(0.0, 7.5, 15.0);
        let eq = s.spin_up(1300.0).unwrap();
        let mut field = eq;
        let f = fuel();
        let mut t = 0.0;
        for _ in 0..300 {
            let h = s.adaptive_dt(&field).unwrap();
            let smax = max_wave_speed(&field, s.gas());
            assert_relative_eq!(h * smax / s.dx(), ADAPTIVE_CFL, max_relative = 1e-12);
            field = s.step(&field, 1250.0, h, t, &f).unwrap();
            t += h;
        }
    }

    #[test]
    fn shock_location_cases() {
        let s = solver(0.0, 7.5, 15.0);
        assert_eq!(s.shock_location(&vec![2.0; 100]), 0.0);
        let mut m = vec![2.0; 100];
        for k in 0..100 {
            if s.midpoints()[k] < 0.0 {
                m[k] = 0.5;
            }
        }
        assert_eq!(s.shock_location(&m), -0.5);
        let m: Vec<f64> = s
            .midpoints()
            .iter()
            .map(|&x| if x <= -0.25 { 1.0 } else { 0.7 })
            .collect();
        let xs = s.shock_location(&m);
        assert!((xs + 0.25).abs() <= 0.5 * s.dx(), "{xs}");
    }

    #[test]
    fn thrust_cases() {
        let s = solver(0.0, 0.0, 0.0);
        let field = s.freestream_field();
        assert_eq!(s.thrust(&field), 0.0);
        let s = solver(0.0, 7.5, 15.0);
        let field = s.freestream_field();
        let a_e = 0.008 + 0.1 * 7.5f64.to_radians().sin() + 0.1 * 15f64.to_radians().sin();
        let expected = (a_e - 0.008) * 0.159 * 1300.0 * 1300.0;
        assert_relative_eq!(s.thrust(&field), expected, max_relative = 1e-12);
        let mut hot = field.clone();
        let k = hot.len() - 1;
        hot.ener[k] += 1000.0 / 0.4; // +1000 Pa at the exit
        assert_relative_eq!(s.thrust(&hot) - s.thrust(&field), 1000.0 * a_e, max_relative = 1e-9);
    }

    #[test]
    fn uniform_run_rejects_cfl_violation() {
        let geom = geometry(0.0, 7.5, 15.0);
        let d = Discretization {
            cells: 100,
            dt: 3e-6,
            steps: 10,
        };
        let s = FlowSolver::new(GasModel::air(), geom, freestream(), d).unwrap();
        let eq = s.freestream_field();
        let err = s
            .simulate(&eq, &ConstantInflow(1300.0), &fuel(), Stepping::Uniform, &RecordOptions::default())
            .unwrap_err();
        assert!(matches!(err, SolverError::Unstable { .. }));
    }

    #[test]
    fn tabulated_inflow_interpolates() {
        let tab = TabulatedInflow::new(vec![0.0, 1.0, 3.0], vec![10.0, 20.0, 0.0]).unwrap();
        assert_eq!(tab.speed(-1.0), 10.0);
        assert_eq!(tab.speed(0.5), 15.0);
        assert_eq!(tab.speed(2.0), 10.0);
        assert_eq!(tab.speed(9.0), 0.0);
        assert!(TabulatedInflow::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn flux_consistency(rho in 0.01f64..10.0, u in -3000.0f64..3000.0, p in 1.0f64..1e6) {
            let gas = GasModel::air();
            let w = Conserved::from_primitive(rho, u, p, &gas);
            prop_assume!(pressure(&w, &gas).is_ok());
            let f = llf_flux(&w, &w, &gas).unwrap();
            let phys = physical_flux(&w, &gas).unwrap();
            prop_assert_eq!(f, phys);
        }
    }
}
