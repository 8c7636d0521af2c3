//! A fully specified engine run: solver, fueling and the spin-up state every
//! run starts from.

use std::sync::Arc;

use crate::engine::FuelSchedule;
use crate::solver::{
    ConservedField, ConstantInflow, FlowSolver, Inflow, RecordOptions, SolverError, Stepping, TrajectoryRecord,
};

#[derive(Debug, Clone)]
pub struct Scenario {
    solver: Arc<FlowSolver>,
    fuel: FuelSchedule,
    equilibrium: Arc<ConservedField>,
}

impl Scenario {
    /// Spins the engine up to its unfueled equilibrium at the free-stream
    /// velocity.
    pub fn new(solver: FlowSolver, fuel: FuelSchedule) -> Result<Self, SolverError> {
        let u0 = solver.freestream().velocity;
        let equilibrium = solver.spin_up(u0)?;
        Ok(Self {
            solver: Arc::new(solver),
            fuel,
            equilibrium: Arc::new(equilibrium),
        })
    }

    /// Same engine and equilibrium, different fuel schedule.
    pub fn with_fuel(&self, fuel: FuelSchedule) -> Self {
        Self {
            fuel,
            ..self.clone()
        }
    }

    pub fn solver(&self) -> &FlowSolver {
        &self.solver
    }

    pub fn fuel(&self) -> &FuelSchedule {
        &self.fuel
    }

    pub fn equilibrium(&self) -> &ConservedField {
        &self.equilibrium
    }

    pub fn u0(&self) -> f64 {
        self.solver.freestream().velocity
    }

    /// Speed of sound of the free stream.
    pub fn inflow_sound_speed(&self) -> f64 {
        self.solver.freestream().sound_speed(self.solver.gas())
    }

    pub fn run(
        &self,
        inflow: &dyn Inflow,
        stepping: Stepping,
        opts: &RecordOptions,
    ) -> Result<TrajectoryRecord, SolverError> {
        self.solver
            .simulate(&self.equilibrium, inflow, &self.fuel, stepping, opts)
    }
}

/// Bisection for the smallest steady equivalence ratio that drives the
/// monitor Mach number to `threshold` within the horizon under constant
/// free-stream inflow. Returns `None` when even `hi` does not.
pub fn steady_fuel_threshold(
    scenario: &Scenario,
    threshold: f64,
    (mut lo, mut hi): (f64, f64),
    iterations: usize,
) -> Result<Option<f64>, SolverError> {
    let inflow = ConstantInflow(scenario.u0());
    let opts = RecordOptions::event(threshold);
    let unstarts = |phi: f64| -> Result<bool, SolverError> {
        let s = scenario.with_fuel(scenario.fuel().steady().with_equivalence_ratio(phi));
        let rec = s.run(&inflow, Stepping::Adaptive, &opts)?;
        Ok(rec.min_mach <= threshold)
    };
    if !unstarts(hi)? {
        return Ok(None);
    }
    if unstarts(lo)? {
        return Ok(Some(lo));
    }
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if unstarts(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}
