//! Minimum-action search: minimize the discrete rate function over coarse
//! inflow paths subject to the unstart constraint `min_n M_1^n <= threshold`.
//!
//! The objective is an exactly known quadratic, so each iteration solves the
//! quadratic model with one linearized constraint in closed form (an SQP step
//! whose Hessian is the rate function's own) and globalizes it with an l1
//! merit line search. Constraint gradients come from forward differences,
//! one solver run per coarse control, evaluated on the rayon pool.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::path::{is_unstart, rate_discrete, rate_gradient, EventSpec, InflowPath, NoiseModel};
use super::LdpError;
use crate::scenario::Scenario;
use crate::solver::{RecordOptions, SolverError, Stepping};

/// How the unstart constraint is presented to the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ConstraintForm {
    /// `min_n M_1^n - threshold <= 0` with finite-difference gradients.
    Direct,
    /// Soft minimum `-(1/β) log Σ exp(-β M_1^n)` in place of the minimum;
    /// the result is then polished with [`ConstraintForm::Direct`].
    SoftMin { beta: f64 },
}

impl Default for ConstraintForm {
    fn default() -> Self {
        ConstraintForm::SoftMin { beta: 200.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionOptions {
    pub form: ConstraintForm,
    pub max_iterations: usize,
    /// Forward-difference step as a fraction of `u0`.
    pub fd_step: f64,
    /// Relative objective change regarded as stalled.
    pub objective_tol: f64,
    /// Number of consecutive stalled iterations that count as converged.
    pub stall_window: usize,
    pub residual_tol: f64,
    /// Terminal-speed bracket `[lo·u0, u0]` of the initial ramp bisection.
    pub bracket_lo: f64,
    pub bisection_iterations: usize,
    /// Runs stop once the monitor Mach number is this far below the threshold.
    pub stop_margin: f64,
}

impl Default for ActionOptions {
    fn default() -> Self {
        Self {
            form: ConstraintForm::default(),
            max_iterations: 80,
            fd_step: 1e-3,
            objective_tol: 1e-6,
            stall_window: 3,
            residual_tol: 1e-6,
            bracket_lo: 0.3,
            bisection_iterations: 40,
            stop_margin: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    /// Largest-terminal-value unstarting ramp, found by bisection.
    Auto,
    Path(InflowPath),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Converged,
    /// Iteration budget exhausted or no descent step found; the best feasible
    /// iterate is returned.
    Stagnated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub form: ConstraintForm,
    pub objective: f64,
    /// Constraint value `g - threshold` at the accepted iterate.
    pub constraint: f64,
    pub multiplier: f64,
    pub step_length: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    /// Rate-function value of the minimizer.
    pub value: f64,
    /// Control values `ũ(0), ũ(m), …, ũ(Ñm)` of the minimizer.
    pub coarse_path: Vec<f64>,
    pub refinement: usize,
    pub dt: f64,
    pub iterations: usize,
    /// The minimizer unstarts under a fixed-increment run.
    pub feasible: bool,
    /// `min_n M_1^n - threshold` along the minimizer (<= 0 when feasible).
    pub residual: f64,
    pub status: ActionStatus,
    pub solver_runs: usize,
    pub trace: Vec<IterationRecord>,
}

impl ActionResult {
    pub fn minimizer(&self) -> InflowPath {
        InflowPath::new(self.coarse_path.clone(), self.refinement, self.dt)
            .expect("stored minimizer is a valid path")
    }
}

/// Evaluates the constraint for one coarse path.
struct Problem<'a> {
    scenario: &'a Scenario,
    spec: &'a EventSpec,
    noise: &'a NoiseModel,
    template: InflowPath,
    opts: &'a ActionOptions,
    runs: std::sync::atomic::AtomicUsize,
}

impl Problem<'_> {
    fn u0(&self) -> f64 {
        self.template.start()
    }

    fn path(&self, x: &[f64]) -> InflowPath {
        let mut coarse = Vec::with_capacity(x.len() + 1);
        coarse.push(self.u0());
        coarse.extend_from_slice(x);
        self.template.with_coarse(coarse).expect("same grid")
    }

    fn objective(&self, x: &[f64]) -> f64 {
        rate_discrete(&self.path(x), self.noise)
    }

    fn constraint(&self, x: &[f64], form: ConstraintForm) -> Result<f64, SolverError> {
        self.runs.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let thr = self.spec.mach_threshold;
        let opts = RecordOptions {
            monitor_cell: self.spec.monitor_cell,
            stop_level: Some(thr - self.opts.stop_margin),
            soft_min_beta: match form {
                ConstraintForm::SoftMin { beta } => Some(beta),
                ConstraintForm::Direct => None,
            },
            ..RecordOptions::default()
        };
        let rec = self.scenario.run(&self.path(x), Stepping::Uniform, &opts)?;
        let g = match form {
            ConstraintForm::Direct => rec.min_mach,
            ConstraintForm::SoftMin { .. } => rec.soft_min_mach.unwrap_or(rec.min_mach),
        };
        Ok(g - thr)
    }

    /// Forward differences, falling back to a backward difference when the
    /// forward run fails.
    fn constraint_gradient(&self, x: &[f64], c: f64, form: ConstraintForm) -> Result<Vec<f64>, SolverError> {
        let h = self.opts.fd_step * self.u0();
        (0..x.len())
            .into_par_iter()
            .map(|i| {
                let mut xp = x.to_vec();
                xp[i] += h;
                match self.constraint(&xp, form) {
                    Ok(cp) => Ok((cp - c) / h),
                    Err(_) => {
                        xp[i] = x[i] - h;
                        self.constraint(&xp, form).map(|cm| (c - cm) / h)
                    }
                }
            })
            .collect()
    }

    /// `B⁻¹ v` for the rate-function Hessian `B`, whose inverse is
    /// `σ² mΔt min(i, j)`.
    fn inverse_hessian(&self, v: &[f64]) -> Vec<f64> {
        let scale = self.noise.sigma_u * self.noise.sigma_u * self.template.coarse_dt();
        let n = v.len();
        // Σ_j min(i,j) v_j = Σ_{k<=i} (suffix sum from k)
        let mut suffix = vec![0.0; n + 1];
        for j in (0..n).rev() {
            suffix[j] = suffix[j + 1] + v[j];
        }
        let mut out = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..n {
            acc += suffix[i];
            out[i] = scale * acc;
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Phase {
    x: Vec<f64>,
    c: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<IterationRecord>,
}

fn sqp(problem: &Problem, x0: Vec<f64>, form: ConstraintForm, first_iteration: usize) -> Result<Phase, LdpError> {
    let opts = problem.opts;
    let u0 = problem.u0();
    let mut x = x0;
    let mut c = problem.constraint(&x, form)?;
    let mut f = problem.objective(&x);
    let mut mu = 0.0f64;
    let mut stalled = 0usize;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..opts.max_iterations {
        iterations = it + 1;
        let gc = problem.constraint_gradient(&x, c, form)?;
        let gf = rate_gradient(&problem.path(&x), problem.noise);
        let d0: Vec<f64> = x.iter().map(|v| u0 - v).collect();
        let binv_gc = problem.inverse_hessian(&gc);
        let curvature = dot(&gc, &binv_gc);
        let linear = c + dot(&gc, &d0);
        let (d, lambda) = if linear <= 0.0 || curvature <= 0.0 {
            (d0, 0.0)
        } else {
            let lambda = linear / curvature;
            let d: Vec<f64> = d0.iter().zip(&binv_gc).map(|(a, b)| a - lambda * b).collect();
            (d, lambda)
        };
        mu = mu.max(2.0 * lambda);
        let merit = |f: f64, c: f64| f + mu * c.max(0.0);
        let phi = merit(f, c);
        let slope = dot(&gf, &d) - mu * c.max(0.0);

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            if let Ok(ct) = problem.constraint(&trial, form) {
                let ft = problem.objective(&trial);
                if merit(ft, ct) <= phi + 1e-4 * alpha * slope.min(0.0) {
                    accepted = Some((trial, ft, ct));
                    break;
                }
                // second-order correction against the constraint's curvature
                if alpha == 1.0 && ct > 0.0 && curvature > 0.0 {
                    let shift = ct / curvature;
                    let soc: Vec<f64> = trial.iter().zip(&binv_gc).map(|(a, b)| a - shift * b).collect();
                    if let Ok(cs) = problem.constraint(&soc, form) {
                        let fs = problem.objective(&soc);
                        if merit(fs, cs) <= phi + 1e-4 * slope.min(0.0) {
                            accepted = Some((soc, fs, cs));
                            break;
                        }
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew, cnew)) = accepted else {
            break;
        };
        let step_norm = xn.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let rel = (fnew - f).abs() / f.abs().max(1e-300);
        x = xn;
        f = fnew;
        c = cnew;
        trace.push(IterationRecord {
            iteration: first_iteration + it + 1,
            form,
            objective: f,
            constraint: c,
            multiplier: lambda,
            step_length: alpha,
            step_norm,
        });
        stalled = if rel < opts.objective_tol { stalled + 1 } else { 0 };
        let small_step = step_norm < 1e-9 * u0;
        if c.max(0.0) <= opts.residual_tol && (stalled >= opts.stall_window || small_step) {
            converged = true;
            break;
        }
    }
    Ok(Phase {
        x,
        c,
        iterations,
        converged,
        trace,
    })
}

fn check_grid(scenario: &Scenario, path: &InflowPath) -> Result<(), LdpError> {
    let disc = scenario.solver().discretization();
    if path.ntilde() * path.refinement() != disc.steps || (path.dt() - disc.dt).abs() > 1e-12 * disc.dt {
        return Err(LdpError::Contract(format!(
            "path grid (Ñ = {}, m = {}, Δt = {}) does not match the solver grid (N = {}, Δt = {})",
            path.ntilde(),
            path.refinement(),
            path.dt(),
            disc.steps,
            disc.dt
        )));
    }
    Ok(())
}

fn unstarts(path: &InflowPath, spec: &EventSpec, scenario: &Scenario) -> bool {
    is_unstart(path, spec, scenario).unwrap_or(false)
}

/// Linear ramp from `u0` whose terminal value is the largest one in
/// `[bracket_lo·u0, u0]` that still unstarts. Failed runs count as safe.
pub fn feasible_ramp(
    scenario: &Scenario,
    spec: &EventSpec,
    ntilde: usize,
    opts: &ActionOptions,
) -> Result<InflowPath, LdpError> {
    let disc = scenario.solver().discretization();
    if ntilde == 0 || disc.steps % ntilde != 0 {
        return Err(LdpError::Contract(format!(
            "Ñ = {ntilde} does not divide N = {}",
            disc.steps
        )));
    }
    let m = disc.steps / ntilde;
    let u0 = scenario.u0();
    let ramp = |end: f64| InflowPath::linear(u0, end, ntilde, m, disc.dt);
    let floor = opts.bracket_lo * u0;
    let mut lo = floor;
    let mut hi = u0;
    if unstarts(&ramp(hi), spec, scenario) {
        return Ok(ramp(hi));
    }
    if !unstarts(&ramp(lo), spec, scenario) {
        // Severe ramps can fail numerically before unstarting; fall back to
        // the mildest unstarting terminal value on a coarse scan.
        const SCAN: usize = 32;
        let found = (1..SCAN).map(|i| u0 - (u0 - floor) * i as f64 / SCAN as f64).find_map(|end| {
            unstarts(&ramp(end), spec, scenario).then_some(end)
        });
        let Some(end) = found else {
            return Err(LdpError::Infeasible(format!(
                "no ramp to a terminal speed in [{floor:.1}, {u0:.1}] m/s reaches Mach {}",
                spec.mach_threshold
            )));
        };
        lo = end;
        hi = end + (u0 - floor) / SCAN as f64;
    }
    for _ in 0..opts.bisection_iterations {
        let mid = 0.5 * (lo + hi);
        if unstarts(&ramp(mid), spec, scenario) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ramp(lo))
}

/// Smallest `s >= 1` (to bisection accuracy) for which the path scaled about
/// `u0` by `s` unstarts.
fn restore(path: &InflowPath, spec: &EventSpec, scenario: &Scenario) -> Option<InflowPath> {
    if unstarts(path, spec, scenario) {
        return Some(path.clone());
    }
    let mut hi = 1.0;
    loop {
        hi *= 1.25;
        if hi > 4.0 {
            return None;
        }
        if unstarts(&path.scaled_about_start(hi), spec, scenario) {
            break;
        }
    }
    let mut lo = hi / 1.25;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if unstarts(&path.scaled_about_start(mid), spec, scenario) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(path.scaled_about_start(hi))
}

/// Random unstarting path: the initial ramp plus a seeded random-walk
/// perturbation, scaled about `u0` until it unstarts.
pub fn random_feasible_path(
    scenario: &Scenario,
    spec: &EventSpec,
    ntilde: usize,
    amplitude: f64,
    seed: u64,
    opts: &ActionOptions,
) -> Result<InflowPath, LdpError> {
    let ramp = feasible_ramp(scenario, spec, ntilde, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = amplitude * scenario.u0() / (ntilde as f64).sqrt();
    let mut walk = 0.0;
    let mut coarse = ramp.coarse().to_vec();
    for v in coarse.iter_mut().skip(1) {
        let z: f64 = StandardNormal.sample(&mut rng);
        walk += step * z;
        *v += walk;
    }
    let path = ramp.with_coarse(coarse)?;
    restore(&path, spec, scenario)
        .ok_or_else(|| LdpError::Infeasible("perturbed path could not be made to unstart".into()))
}

/// Minimizes the discrete rate function over coarse inflow paths that
/// unstart the engine.
pub fn minimize_action(
    scenario: &Scenario,
    spec: &EventSpec,
    noise: &NoiseModel,
    ntilde: usize,
    init: InitialGuess,
    opts: &ActionOptions,
) -> Result<ActionResult, LdpError> {
    spec.validate()?;
    noise.validate()?;
    let start = match init {
        InitialGuess::Auto => feasible_ramp(scenario, spec, ntilde, opts)?,
        InitialGuess::Path(p) => {
            if p.ntilde() != ntilde {
                return Err(LdpError::Contract(format!(
                    "initial path has Ñ = {}, expected {ntilde}",
                    p.ntilde()
                )));
            }
            if (p.start() - scenario.u0()).abs() > 1e-9 * scenario.u0() {
                return Err(LdpError::Contract("initial path must start at u0".into()));
            }
            p
        }
    };
    check_grid(scenario, &start)?;
    let problem = Problem {
        scenario,
        spec,
        noise,
        template: start.clone(),
        opts,
        runs: Default::default(),
    };

    let mut x = start.coarse()[1..].to_vec();
    let mut trace = Vec::new();
    let mut iterations = 0;
    if let ConstraintForm::SoftMin { .. } = opts.form {
        let phase = sqp(&problem, x, opts.form, 0)?;
        iterations += phase.iterations;
        trace.extend(phase.trace);
        x = phase.x;
    }
    let phase = sqp(&problem, x, ConstraintForm::Direct, iterations)?;
    iterations += phase.iterations;
    trace.extend(phase.trace);
    let mut converged = phase.converged;
    let candidate = problem.path(&phase.x);

    // The last accepted iterate may sit a hair outside the event; scaling
    // about u0 moves it back in at a relative cost of O(residual).
    let mut best = restore(&candidate, spec, scenario);
    if phase.c > 0.0 {
        converged = converged && phase.c <= opts.residual_tol;
    }
    if best.is_none() {
        best = restore(&start, spec, scenario);
        converged = false;
    }
    let minimizer = best.ok_or_else(|| LdpError::Infeasible("no unstarting iterate".into()))?;
    let residual = problem.constraint(&minimizer.coarse()[1..], ConstraintForm::Direct)?;
    let feasible = unstarts(&minimizer, spec, scenario);
    Ok(ActionResult {
        value: rate_discrete(&minimizer, noise),
        coarse_path: minimizer.coarse().to_vec(),
        refinement: minimizer.refinement(),
        dt: minimizer.dt(),
        iterations,
        feasible,
        residual,
        status: if converged {
            ActionStatus::Converged
        } else {
            ActionStatus::Stagnated
        },
        solver_runs: problem.runs.load(std::sync::atomic::Ordering::Relaxed),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{EngineGeometry, FreeStream, FuelSchedule, GasModel, GeometrySpec};
    use crate::solver::{Discretization, FlowSolver};
    use approx::assert_relative_eq;

    fn scenario() -> Scenario {
        let geom = EngineGeometry::new(GeometrySpec {
            area_min: 0.008,
            isolator_length: 0.5,
            combustor_length: 0.1,
            expansion_length: 0.1,
            isolator_angle_deg: 0.0,
            combustor_angle_deg: 7.5,
            expansion_angle_deg: 15.0,
        })
        .unwrap();
        let fs = FreeStream::new(0.159, 1300.0, 47842.0).unwrap();
        let disc = Discretization {
            cells: 100,
            dt: 1e-6,
            steps: 10_000,
        };
        let solver = FlowSolver::new(GasModel::air(), geom, fs, disc).unwrap();
        let fuel = FuelSchedule {
            equivalence_ratio: 0.0,
            cycle: 0.5e-3,
            burst: 0.1e-3,
            stoichiometric_ratio: 0.029,
            heating_value: 1.2e8,
            rho0: 0.159,
            u0: 1300.0,
        };
        Scenario::new(solver, fuel).unwrap()
    }

    #[test]
    fn inverse_hessian_undoes_rate_gradient() {
        let sc = scenario();
        let spec = EventSpec::new(1.0, 0.01).unwrap();
        let noise = NoiseModel {
            sigma_u: 1e4,
            sigma_m: 96.902,
            epsilon: 0.3,
        };
        let opts = ActionOptions::default();
        let template = InflowPath::new(vec![1300.0, 1200.0, 1250.0, 900.0, 1000.0], 2500, 1e-6).unwrap();
        let problem = Problem {
            scenario: &sc,
            spec: &spec,
            noise: &noise,
            template: template.clone(),
            opts: &opts,
            runs: Default::default(),
        };
        // ∇I(x) = B (x - u0), so B⁻¹∇I recovers the deviation from u0
        let back = problem.inverse_hessian(&rate_gradient(&template, &noise));
        for (b, x) in back.iter().zip(&template.coarse()[1..]) {
            assert_relative_eq!(*b, x - 1300.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn mismatched_grid_is_rejected() {
        let sc = scenario();
        let spec = EventSpec::new(1.0, 0.01).unwrap();
        let noise = NoiseModel {
            sigma_u: 1e4,
            sigma_m: 96.902,
            epsilon: 0.3,
        };
        let path = InflowPath::linear(1300.0, 500.0, 20, 400, 1e-6);
        let err = minimize_action(&sc, &spec, &noise, 20, InitialGuess::Path(path), &ActionOptions::default());
        assert!(matches!(err, Err(LdpError::Contract(_))));
    }

    #[test]
    fn unfueled_engine_needs_subsonic_inflow() {
        // Without fuel the monitor cell only goes subsonic once the inflow
        // itself does, so the mildest unstarting ramp ends near u = c.
        let sc = scenario();
        let spec = EventSpec::new(1.0, 0.01).unwrap();
        let ramp = feasible_ramp(&sc, &spec, 20, &ActionOptions::default()).unwrap();
        assert!(is_unstart(&ramp, &spec, &sc).unwrap());
        let c = sc.inflow_sound_speed();
        assert!(ramp.end() < c && ramp.end() > 0.8 * c, "terminal {}", ramp.end());
        assert!(!is_unstart(&InflowPath::constant(1300.0, 20, 500, 1e-6), &spec, &sc).unwrap());
    }
}
