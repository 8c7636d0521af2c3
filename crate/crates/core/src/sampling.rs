//! Monte Carlo estimation of unstart probabilities: plain sampling under the
//! physical random-walk law and importance sampling under a walk shifted
//! onto a center path, reweighted by the exact Gaussian likelihood ratio.
//!
//! Every sample `j` draws from its own ChaCha stream `(base_seed, j)`, and
//! per-chunk sums are combined in index order, so reports do not depend on
//! the number of worker threads.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::ldp::{EventSpec, InflowPath, NoiseModel};
use crate::scenario::Scenario;
use crate::solver::{SolverError, Stepping};

/// Multiplier of the 99% normal confidence interval.
pub const CI99_Z: f64 = 2.58;

const CHUNK: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Mc,
    Is,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Mc => "mc",
            EstimatorKind::Is => "is",
        })
    }
}

/// RNG stream of sample `j`.
pub fn sample_rng(base_seed: u64, j: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(j);
    rng
}

fn walk_into(rng: &mut ChaCha8Rng, scale: f64, coarse: &mut [f64]) {
    let mut w = 0.0;
    for v in coarse.iter_mut().skip(1) {
        let z: f64 = StandardNormal.sample(rng);
        w += scale * z;
        *v += w;
    }
}

fn increment_scale(noise: &NoiseModel, coarse_dt: f64) -> f64 {
    noise.epsilon * noise.sigma_u * coarse_dt.sqrt()
}

/// Coarse Gaussian random walk from `u0` with increments of standard
/// deviation `ε σ_u √(mΔt)`.
pub fn sample_path_p(
    rng: &mut ChaCha8Rng,
    noise: &NoiseModel,
    u0: f64,
    ntilde: usize,
    refinement: usize,
    dt: f64,
) -> InflowPath {
    let mut coarse = vec![u0; ntilde + 1];
    walk_into(rng, increment_scale(noise, refinement as f64 * dt), &mut coarse);
    InflowPath::new(coarse, refinement, dt).expect("finite random walk")
}

/// The same walk added to `center`.
pub fn sample_path_q(rng: &mut ChaCha8Rng, noise: &NoiseModel, center: &InflowPath) -> InflowPath {
    let mut coarse = center.coarse().to_vec();
    walk_into(rng, increment_scale(noise, center.coarse_dt()), &mut coarse);
    center.with_coarse(coarse).expect("finite random walk")
}

/// Density of the physical walk law relative to the law centered on
/// `center`, evaluated at `path`:
/// `exp(-(1/(2ε²σ_u² mΔt)) Σ [Δu² - (Δu - Δc)²])`.
pub fn likelihood_ratio(path: &InflowPath, center: &InflowPath, noise: &NoiseModel) -> Result<f64, SamplingError> {
    if !path.same_grid(center) {
        return Err(SamplingError::Contract(
            "path and center live on different grids".into(),
        ));
    }
    if path.start() != center.start() {
        return Err(SamplingError::Contract(
            "path and center must share the initial speed".into(),
        ));
    }
    let exponent: f64 = path
        .coarse()
        .windows(2)
        .zip(center.coarse().windows(2))
        .map(|(u, c)| {
            let du = u[1] - u[0];
            let dc = c[1] - c[0];
            du * du - (du - dc) * (du - dc)
        })
        .sum();
    if noise.epsilon == 0.0 {
        return Ok(if exponent == 0.0 { 1.0 } else { 0.0 });
    }
    let var = noise.epsilon * noise.epsilon * noise.sigma_u * noise.sigma_u * path.coarse_dt();
    Ok((-exponent / (2.0 * var)).exp())
}

/// One batch of estimator samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatchSpec {
    pub samples: usize,
    pub noise: NoiseModel,
    pub base_seed: u64,
    pub estimator: EstimatorKind,
    /// Required for importance sampling; its start is `u0`.
    pub center: Option<InflowPath>,
    pub stepping: Stepping,
}

impl SampleBatchSpec {
    fn validate(&self) -> Result<(), SamplingError> {
        if self.samples == 0 {
            return Err(SamplingError::Contract("at least one sample is required".into()));
        }
        if !(self.noise.epsilon >= 0.0) || !(self.noise.sigma_u > 0.0) {
            return Err(SamplingError::Contract("invalid noise model".into()));
        }
        if self.estimator == EstimatorKind::Is && self.center.is_none() {
            return Err(SamplingError::Contract(
                "importance sampling needs a center path".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: EstimatorKind,
    pub epsilon: f64,
    pub samples: usize,
    pub seed: u64,
    pub p_hat: f64,
    /// Sample standard deviation of the summands, with `1/(J-1)`.
    pub std_j: f64,
    pub ci99_lo: f64,
    pub ci99_hi: f64,
    /// `std_j / p_hat`; absent when no sample hit the event.
    pub rel_err: Option<f64>,
    pub hits: usize,
    /// Samples whose run failed; counted as non-events.
    pub invalid: usize,
    pub wall_time: f64,
}

impl EstimatorReport {
    /// Any failed run makes the estimate suspect.
    pub fn suspect(&self) -> bool {
        self.invalid > 0
    }

    /// Same report without timing, for comparing reruns.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Moments {
    sum: f64,
    sum_sq: f64,
    hits: usize,
    invalid: usize,
}

impl Moments {
    fn merge(self, other: Self) -> Self {
        Self {
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
            hits: self.hits + other.hits,
            invalid: self.invalid + other.invalid,
        }
    }
}

fn report(kind: EstimatorKind, spec: &SampleBatchSpec, m: Moments, start: Instant) -> EstimatorReport {
    let j = spec.samples as f64;
    let p_hat = m.sum / j;
    let std_j = if spec.samples > 1 {
        ((m.sum_sq - j * p_hat * p_hat).max(0.0) / (j - 1.0)).sqrt()
    } else {
        0.0
    };
    let half = CI99_Z * std_j / j.sqrt();
    EstimatorReport {
        estimator: kind,
        epsilon: spec.noise.epsilon,
        samples: spec.samples,
        seed: spec.base_seed,
        p_hat,
        std_j,
        ci99_lo: p_hat - half,
        ci99_hi: p_hat + half,
        rel_err: (p_hat > 0.0).then(|| std_j / p_hat),
        hits: m.hits,
        invalid: m.invalid,
        wall_time: start.elapsed().as_secs_f64(),
    }
}

/// Runs the estimator named in `spec` for an arbitrary event predicate on
/// inflow paths. `template` fixes `u0` and the grid for plain sampling.
/// Predicate errors are counted as invalid samples.
pub fn estimate_with<E, F>(
    spec: &SampleBatchSpec,
    template: &InflowPath,
    event: F,
) -> Result<EstimatorReport, SamplingError>
where
    F: Fn(&InflowPath) -> Result<bool, E> + Sync,
{
    spec.validate()?;
    let start = Instant::now();
    let center = match spec.estimator {
        EstimatorKind::Mc => None,
        EstimatorKind::Is => {
            let c = spec.center.as_ref().expect("validated");
            if !c.same_grid(template) || c.start() != template.start() {
                return Err(SamplingError::Contract(
                    "center path does not match the sampling grid or u0".into(),
                ));
            }
            Some(c)
        }
    };
    let chunks = spec.samples.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut m = Moments::default();
            for j in c * CHUNK..((c + 1) * CHUNK).min(spec.samples) {
                let mut rng = sample_rng(spec.base_seed, j as u64);
                let (path, weight) = match center {
                    None => (
                        sample_path_p(
                            &mut rng,
                            &spec.noise,
                            template.start(),
                            template.ntilde(),
                            template.refinement(),
                            template.dt(),
                        ),
                        1.0,
                    ),
                    Some(center) => {
                        let p = sample_path_q(&mut rng, &spec.noise, center);
                        let w = likelihood_ratio(&p, center, &spec.noise).expect("same grid");
                        (p, w)
                    }
                };
                match event(&path) {
                    Ok(true) => {
                        m.hits += 1;
                        m.sum += weight;
                        m.sum_sq += weight * weight;
                    }
                    Ok(false) => {}
                    Err(_) => m.invalid += 1,
                }
            }
            m
        })
        .collect();
    let total = parts.into_iter().fold(Moments::default(), Moments::merge);
    Ok(report(spec.estimator, spec, total, start))
}

/// Unstart event evaluated with the batch's stepping mode.
pub fn unstart_event<'a>(
    scenario: &'a Scenario,
    event: &'a EventSpec,
    stepping: Stepping,
) -> impl Fn(&InflowPath) -> Result<bool, SolverError> + Sync + 'a {
    move |path: &InflowPath| {
        let opts = event.record_options();
        let rec = scenario.run(path, stepping, &opts)?;
        Ok(rec.min_mach <= event.mach_threshold)
    }
}

fn engine_template(scenario: &Scenario, ntilde: usize) -> Result<InflowPath, SamplingError> {
    let disc = scenario.solver().discretization();
    if ntilde == 0 || disc.steps % ntilde != 0 {
        return Err(SamplingError::Contract(format!(
            "Ñ = {ntilde} does not divide N = {}",
            disc.steps
        )));
    }
    Ok(InflowPath::constant(scenario.u0(), ntilde, disc.steps / ntilde, disc.dt))
}

/// Plain Monte Carlo estimate of the unstart probability.
pub fn estimate_mc(
    spec: &SampleBatchSpec,
    scenario: &Scenario,
    event: &EventSpec,
    ntilde: usize,
) -> Result<EstimatorReport, SamplingError> {
    if spec.estimator != EstimatorKind::Mc {
        return Err(SamplingError::Contract("expected a plain Monte Carlo batch".into()));
    }
    let template = engine_template(scenario, ntilde)?;
    estimate_with(spec, &template, unstart_event(scenario, event, spec.stepping))
}

/// Importance-sampling estimate around the batch's center path.
pub fn estimate_is(spec: &SampleBatchSpec, scenario: &Scenario, event: &EventSpec) -> Result<EstimatorReport, SamplingError> {
    if spec.estimator != EstimatorKind::Is {
        return Err(SamplingError::Contract("expected an importance-sampling batch".into()));
    }
    let center = spec
        .center
        .as_ref()
        .ok_or_else(|| SamplingError::Contract("importance sampling needs a center path".into()))?;
    let template = engine_template(scenario, center.ntilde())?;
    if !center.same_grid(&template) {
        return Err(SamplingError::Contract(
            "center path does not match the solver grid".into(),
        ));
    }
    estimate_with(spec, &template, unstart_event(scenario, event, spec.stepping))
}

/// The inflow-only event: the coarse walk's running minimum reaches
/// `target_speed`.
pub fn subsonic_inflow_event(target_speed: f64) -> impl Fn(&InflowPath) -> Result<bool, SamplingError> + Sync {
    move |path: &InflowPath| Ok(path.coarse().iter().any(|&v| v <= target_speed))
}

/// Continuous-time reflection formula `2Φ((u_target - u0)/(ε σ_u √T))`,
/// an upper bound for the discretely monitored walk.
pub fn reflection_bound(noise: &NoiseModel, u0: f64, target_speed: f64, horizon: f64) -> f64 {
    if target_speed >= u0 {
        return 1.0;
    }
    if noise.epsilon == 0.0 {
        return 0.0;
    }
    let std = Normal::standard();
    (2.0 * std.cdf((target_speed - u0) / (noise.epsilon * noise.sigma_u * horizon.sqrt()))).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub p_hat: f64,
    pub std_err: f64,
    pub hits: usize,
    pub samples: usize,
    pub continuous_bound: f64,
}

/// Brute-force probability that the coarse walk from `u0` reaches
/// `target_speed`.
pub fn oracle_subsonic_event(
    noise: &NoiseModel,
    u0: f64,
    target_speed: f64,
    ntilde: usize,
    horizon: f64,
    samples: usize,
    seed: u64,
) -> OracleEstimate {
    let continuous_bound = reflection_bound(noise, u0, target_speed, horizon);
    if target_speed >= u0 {
        return OracleEstimate {
            p_hat: 1.0,
            std_err: 0.0,
            hits: samples,
            samples,
            continuous_bound,
        };
    }
    let barrier = target_speed - u0;
    let scale = increment_scale(noise, horizon / ntilde as f64);
    let chunks = samples.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut hits = 0;
            for j in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                let mut rng = sample_rng(seed, j as u64);
                let mut w = 0.0;
                for _ in 0..ntilde {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    w += scale * z;
                    if w <= barrier {
                        hits += 1;
                        break;
                    }
                }
            }
            hits
        })
        .sum();
    let p_hat = hits as f64 / samples as f64;
    OracleEstimate {
        p_hat,
        std_err: (p_hat * (1.0 - p_hat) / samples as f64).sqrt(),
        hits,
        samples,
        continuous_bound,
    }
}

/// `(Std_MC / Std_IS)²`, the sample-count reduction of importance sampling.
pub fn variance_reduction(mc: &EstimatorReport, is: &EstimatorReport) -> Option<f64> {
    (is.std_j > 0.0).then(|| (mc.std_j / is.std_j).powi(2))
}
