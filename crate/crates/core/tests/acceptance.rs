//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the binary exits non-zero when any criterion fails.
//!
//! Runs with the default test profile in a few minutes on one core.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use unstart::config::{preset, RunConfig};
use unstart::engine::{EngineGeometry, GasModel};
use unstart::ldp::{is_unstart, rate_discrete, ActionResult, InflowPath, NoiseModel};
use unstart::sampling::{
    estimate_is, estimate_mc, estimate_with, likelihood_ratio, oracle_subsonic_event, sample_path_q, sample_rng,
    subsonic_inflow_event, variance_reduction, EstimatorKind, EstimatorReport, SampleBatchSpec,
};
use unstart::scenario::steady_fuel_threshold;
use unstart::solver::{llf_flux, physical_flux, Conserved, FlowSolver, RecordOptions, Stepping};
use unstart::studies::{self, Study};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Optimization results keyed by configuration, so presets that differ only
/// in their label share one run.
#[derive(Default)]
struct Cache {
    results: HashMap<String, ActionResult>,
}

impl Cache {
    fn get(&mut self, name: &str) -> &ActionResult {
        let cfg = preset(name).expect("known preset");
        let key = RunConfig {
            label: String::new(),
            ..cfg.clone()
        }
        .hash();
        self.results.entry(key).or_insert_with(|| {
            let start = Instant::now();
            let r = studies::optimize(&cfg).expect("optimization runs");
            println!(
                "    optimized {name}: value {:.6}, {} iterations, {:?}, feasible {}, {:.1} s",
                r.value,
                r.iterations,
                r.status,
                r.feasible,
                start.elapsed().as_secs_f64()
            );
            r
        })
    }

    fn value(&mut self, name: &str) -> f64 {
        self.get(name).value
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn within(values: &[(&str, f64, f64)], tol: f64) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for &(name, got, want) in values {
        let d = (got - want) / want;
        ok &= d.abs() <= tol;
        parts.push(format!("{name} {got:.5} vs {want} ({:+.2}%)", 100.0 * d));
    }
    (ok, parts.join("; "))
}

fn continuum_bound() -> Outcome {
    let cfg = RunConfig::paper_defaults();
    let path = InflowPath::linear(1300.0, 650.0, 20, 500, 1e-6);
    let got = rate_discrete(&path, &cfg.noise);
    let want = 1300.0f64.powi(2) / (8.0 * cfg.noise.sigma_u.powi(2) * cfg.horizon());
    let d = rel(got, want);
    outcome(
        d <= 1e-10 && (want - 0.21125).abs() < 1e-15,
        format!("I = {got:.12}, expected {want} (rel {d:.1e})"),
    )
}

fn cycles(cache: &mut Cache) -> Outcome {
    let rows: Vec<_> = Study::Cycles
        .cases()
        .iter()
        .map(|&(name, want)| (name, cache.value(name), want))
        .collect();
    let (ok, detail) = within(&rows, 0.05);
    outcome(ok, detail)
}

fn thresholds(cache: &mut Cache) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for cycle in ["short", "long"] {
        let v: Vec<f64> = ["0.8", "1.0", "1.2"]
            .iter()
            .map(|t| cache.value(&format!("table-5.2-{cycle}-{t}")))
            .collect();
        let decreasing = v[0] > v[1] && v[1] > v[2];
        ok &= decreasing;
        detail.push(format!(
            "{cycle} {:.5} > {:.5} > {:.5}: {decreasing}",
            v[0], v[1], v[2]
        ));
    }
    let short: Vec<_> = Study::Thresholds.cases()[..3]
        .iter()
        .map(|&(name, want)| (name, cache.value(name), want))
        .collect();
    let (values_ok, values) = within(&short, 0.05);
    ok &= values_ok;
    detail.push(values);
    for (t, want) in [("0.8", 0.3042), ("1.0", 0.21125), ("1.2", 0.1352)] {
        let b = studies::bound(&preset(&format!("table-5.2-short-{t}")).unwrap()).unwrap();
        let good = (b - want).abs() <= 1e-4;
        ok &= good;
        detail.push(format!("bound@{t} {b:.5} vs {want}"));
    }
    outcome(ok, detail.join("; "))
}

fn geometry(cache: &mut Cache) -> Outcome {
    let rows: Vec<_> = Study::Geometry
        .cases()
        .iter()
        .map(|&(name, want)| (name, cache.value(name), want))
        .collect();
    let (mut ok, values) = within(&rows, 0.10);
    let mut detail = vec![values];
    for (cycle, chunk) in ["short", "long"].iter().zip(rows.chunks(3)) {
        let monotone = chunk[0].1 <= chunk[1].1 && chunk[1].1 <= chunk[2].1;
        ok &= monotone;
        detail.push(format!("{cycle} monotone in angle: {monotone}"));
    }
    outcome(ok, detail.join("; "))
}

fn resolution(cache: &mut Cache) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for cycle in ["short", "long"] {
        let coarse = cache.value(&format!("table-5.1-{cycle}"));
        let fine = cache.value(&format!("table-5.5-{cycle}-N40"));
        let d = rel(fine, coarse);
        ok &= d < 0.01;
        detail.push(format!("{cycle} N=20 {coarse:.5}, N=40 {fine:.5} ({:.3}%)", 100.0 * d));
    }
    outcome(ok, detail.join("; "))
}

fn operability() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for cycle in ["short", "long"] {
        let cfg = preset(&format!("table-5.1-{cycle}")).unwrap();
        let scenario = cfg.scenario().unwrap();
        let rec = scenario
            .run(&cfg.constant_path(), Stepping::Uniform, &RecordOptions::default())
            .unwrap();
        let unstarts = is_unstart(&cfg.constant_path(), &cfg.event_spec(), &scenario).unwrap();
        ok &= !unstarts;
        detail.push(format!("{cycle}: min M1 {:.4}, unstart {unstarts}", rec.min_mach));
    }
    let cfg = preset("steady-fueling").unwrap();
    let scenario = cfg.scenario().unwrap();
    let phi = steady_fuel_threshold(&scenario, cfg.event.mach_threshold, (0.0, 2.0), 30).unwrap();
    match phi {
        Some(phi) => {
            let good = (0.15..=0.35).contains(&phi);
            ok &= good;
            detail.push(format!("steady-fueling threshold phi* = {phi:.4}, expected in [0.15, 0.35]"));
        }
        None => {
            ok = false;
            detail.push("steady fueling up to phi = 2 never unstarts".into());
        }
    }
    outcome(ok, detail.join("; "))
}

fn batch(cfg: &RunConfig, kind: EstimatorKind, samples: usize, epsilon: f64, center: &InflowPath) -> EstimatorReport {
    let scenario = cfg.scenario().unwrap();
    let spec = SampleBatchSpec {
        samples,
        noise: cfg.noise.with_epsilon(epsilon),
        base_seed: cfg.seed,
        estimator: kind,
        center: (kind == EstimatorKind::Is).then(|| center.clone()),
        stepping: cfg.estimator.stepping,
    };
    let r = match kind {
        EstimatorKind::Mc => estimate_mc(&spec, &scenario, &cfg.event_spec(), cfg.discretization.ntilde),
        EstimatorKind::Is => estimate_is(&spec, &scenario, &cfg.event_spec()),
    }
    .unwrap();
    println!(
        "    {kind} eps {epsilon} J {samples}: p {:.4e}, std {:.4e}, CI [{:.4e}, {:.4e}], hits {}, invalid {}, {:.1} s",
        r.p_hat, r.std_j, r.ci99_lo, r.ci99_hi, r.hits, r.invalid, r.wall_time
    );
    r
}

fn order_of_magnitude(p: f64) -> i32 {
    p.log10().round() as i32
}

fn estimators(cache: &mut Cache) -> Outcome {
    let cfg = preset("mc-vs-is-short").unwrap();
    let center = cache.get("table-5.1-short").minimizer();
    let mut ok = true;
    let mut detail = Vec::new();

    let mut full = HashMap::new();
    for eps in [0.4, 0.3, 0.2] {
        for kind in [EstimatorKind::Mc, EstimatorKind::Is] {
            full.insert((kind, (eps * 10.0) as i32), batch(&cfg, kind, 10_000, eps, &center));
        }
    }
    let mc04 = &full[&(EstimatorKind::Mc, 4)];
    let is02 = &full[&(EstimatorKind::Is, 2)];
    let scale_ok = order_of_magnitude(mc04.p_hat) == -1 && order_of_magnitude(is02.p_hat) == -3;
    ok &= scale_ok;
    detail.push(format!(
        "J=1e4 MC@0.4 {:.3e}, IS@0.2 {:.3e}",
        mc04.p_hat, is02.p_hat
    ));

    for eps in [0.4, 0.3] {
        let mc = batch(&cfg, EstimatorKind::Mc, 1000, eps, &center);
        let is = batch(&cfg, EstimatorKind::Is, 1000, eps, &center);
        let overlap = mc.ci99_lo <= is.ci99_hi && is.ci99_lo <= mc.ci99_hi;
        let smaller = is.std_j <= mc.std_j;
        ok &= overlap && smaller;
        detail.push(format!("J=1e3 eps {eps}: CIs overlap {overlap}, Std_IS <= Std_MC {smaller}"));
    }

    let factors: Vec<f64> = [4, 3, 2]
        .iter()
        .map(|&e| variance_reduction(&full[&(EstimatorKind::Mc, e)], &full[&(EstimatorKind::Is, e)]).unwrap_or(f64::NAN))
        .collect();
    let monotone = factors[0] < factors[1] && factors[1] < factors[2];
    let large = factors[2] > 20.0;
    ok &= monotone && large;
    detail.push(format!(
        "variance reduction 0.4/0.3/0.2: {:.1}/{:.1}/{:.1}",
        factors[0], factors[1], factors[2]
    ));
    let suspect = full.values().any(|r| r.suspect());
    ok &= !suspect;
    if suspect {
        detail.push("some samples failed".into());
    }
    outcome(ok, detail.join("; "))
}

/// Gauss-Hermite nodes and weights for the weight `exp(-x²)`.
fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pi4 = std::f64::consts::PI.powf(-0.25);
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pi4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.into_iter().zip(w).collect()
}

fn normal_expectation_2d(g: impl Fn(f64, f64) -> f64) -> f64 {
    let nodes = gauss_hermite(120);
    let s2 = std::f64::consts::SQRT_2;
    let mut acc = 0.0;
    for &(x1, w1) in &nodes {
        for &(x2, w2) in &nodes {
            acc += w1 * w2 * g(s2 * x1, s2 * x2);
        }
    }
    acc / std::f64::consts::PI
}

fn properties(cache: &mut Cache) -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let cfg = RunConfig::paper_defaults();
    let gas = GasModel { gamma: 1.4 };

    let mut flux_ok = true;
    for (rho, u, p) in [(0.159, 1300.0, 47842.0), (1.2, -40.0, 101325.0), (0.05, 2500.0, 900.0)] {
        let w = Conserved::from_primitive(rho, u, p, &gas);
        let f = physical_flux(&w, &gas).unwrap();
        let g = llf_flux(&w, &w, &gas).unwrap();
        flux_ok &= f.iter().zip(g).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
    checks.push(("flux consistency", flux_ok));

    let mut flat = cfg.geometry;
    flat.combustor_angle_deg = 0.0;
    flat.expansion_angle_deg = 0.0;
    let solver = FlowSolver::new(
        gas,
        EngineGeometry::new(flat).unwrap(),
        cfg.freestream_state().unwrap(),
        cfg.solver_discretization(),
    )
    .unwrap();
    let field = solver.freestream_field();
    let next = solver
        .step(&field, 1300.0, 1e-6, 0.0, &cfg.fuel_schedule().disabled())
        .unwrap();
    checks.push(("uniform-state fixed point", next.relative_change(&field) <= 1e-15));

    let scenario = cfg.scenario().unwrap();
    let ramp = InflowPath::linear(1300.0, 1000.0, 20, 500, 1e-6);
    let rec = scenario.run(&ramp, Stepping::Adaptive, &RecordOptions::default()).unwrap();
    checks.push(("CFL identity", (rec.max_cfl - 0.8).abs() < 1e-12));

    let base = rate_discrete(&ramp, &cfg.noise);
    let doubled = rate_discrete(&ramp.scaled_about_start(2.0), &cfg.noise);
    let wide = NoiseModel {
        sigma_u: 2.0 * cfg.noise.sigma_u,
        ..cfg.noise
    };
    checks.push((
        "rate scaling",
        rel(doubled, 4.0 * base) < 1e-12 && rel(rate_discrete(&ramp, &wide), base / 4.0) < 1e-12,
    ));

    let nz = cfg.noise.with_epsilon(0.4);
    let s = nz.epsilon * nz.sigma_u * 0.005f64.sqrt();
    let center2 = InflowPath::new(vec![1300.0, 975.0, 650.0], 5000, 1e-6).unwrap();
    let soft = |v: f64| 1.0 / (1.0 + ((v - 650.0) / 120.0).exp());
    let g = |u1: f64, u2: f64| 1.0 - (1.0 - soft(u1)) * (1.0 - soft(u2));
    let under_p = normal_expectation_2d(|z1, z2| g(1300.0 + s * z1, 1300.0 + s * (z1 + z2)));
    let under_q = normal_expectation_2d(|z1, z2| {
        let path = center2
            .with_coarse(vec![1300.0, 975.0 + s * z1, 650.0 + s * (z1 + z2)])
            .unwrap();
        likelihood_ratio(&path, &center2, &nz).unwrap() * g(path.coarse()[1], path.coarse()[2])
    });
    checks.push(("weight normalization, quadrature", (under_p - under_q).abs() < 1e-8));

    let nz = cfg.noise.with_epsilon(0.3);
    let center = InflowPath::linear(1300.0, 700.0, 20, 500, 1e-6);
    let n = 200_000u64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for j in 0..n {
        let p = sample_path_q(&mut sample_rng(5, j), &nz, &center);
        let w = likelihood_ratio(&p, &center, &nz).unwrap();
        sum += w;
        sum_sq += w * w;
    }
    let mean = sum / n as f64;
    let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
    checks.push(("weight normalization, sampled", (mean - 1.0).abs() < 4.0 * se));

    let flat_center = InflowPath::constant(1300.0, 20, 500, 1e-6);
    let spec = |kind| SampleBatchSpec {
        samples: 20_000,
        noise: cfg.noise.with_epsilon(0.4),
        base_seed: 3,
        estimator: kind,
        center: Some(flat_center.clone()),
        stepping: Stepping::Adaptive,
    };
    let event = subsonic_inflow_event(650.0);
    let mc = estimate_with(&spec(EstimatorKind::Mc), &flat_center, &event).unwrap();
    let is = estimate_with(&spec(EstimatorKind::Is), &flat_center, &event).unwrap();
    checks.push((
        "Q = P degeneracy",
        mc.p_hat == is.p_hat && mc.std_j == is.std_j && mc.hits == is.hits,
    ));

    let again = estimate_with(&spec(EstimatorKind::Mc), &flat_center, &event).unwrap();
    let engine_spec = SampleBatchSpec {
        samples: 64,
        ..spec(EstimatorKind::Is)
    };
    let engine_center = cache.get("table-5.1-short").minimizer();
    let engine_spec = SampleBatchSpec {
        center: Some(engine_center),
        ..engine_spec
    };
    let r1 = estimate_is(&engine_spec, &scenario, &cfg.event_spec()).unwrap();
    let r2 = estimate_is(&engine_spec, &scenario, &cfg.event_spec()).unwrap();
    checks.push((
        "seed reproducibility",
        again.without_timing() == mc.without_timing() && r1.without_timing() == r2.without_timing(),
    ));

    let mut feasible = true;
    let names: Vec<&str> = [Study::Cycles, Study::Thresholds, Study::Geometry, Study::Resolution]
        .iter()
        .flat_map(|s| s.cases().iter().map(|c| c.0))
        .collect();
    for name in names {
        let p = preset(name).unwrap();
        let r = cache.get(name).clone();
        let hit = is_unstart(&r.minimizer(), &p.event_spec(), &p.scenario().unwrap()).unwrap();
        feasible &= r.feasible && hit;
    }
    checks.push(("minimizer feasibility", feasible));

    let ok = checks.iter().all(|c| c.1);
    let detail = checks
        .iter()
        .map(|(name, pass)| format!("{name} {}", if *pass { "ok" } else { "FAILED" }))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(ok, detail)
}

fn laplace_trend() -> Outcome {
    let cfg = RunConfig::paper_defaults();
    let target = 650.0;
    let action = (1300.0f64 - target).powi(2) / (2.0 * cfg.noise.sigma_u.powi(2) * cfg.horizon());
    let values: Vec<f64> = [0.4, 0.3, 0.2]
        .iter()
        .map(|&eps| {
            let o = oracle_subsonic_event(&cfg.noise.with_epsilon(eps), 1300.0, target, 20, cfg.horizon(), 4_000_000, 99);
            -eps * eps * o.p_hat.ln()
        })
        .collect();
    let gaps: Vec<f64> = values.iter().map(|v| (v - action).abs()).collect();
    let monotone = gaps[0] > gaps[1] && gaps[1] > gaps[2];
    let last = gaps[2] / action;
    outcome(
        monotone && last <= 0.35,
        format!(
            "-eps^2 log P at 0.4/0.3/0.2: {:.4}/{:.4}/{:.4}, action {action}, gap at 0.2 {:.1}% (limit 35%)",
            values[0],
            values[1],
            values[2],
            100.0 * last
        ),
    )
}

fn main() -> ExitCode {
    let mut cache = Cache::default();
    let criteria: Vec<(&str, Box<dyn FnOnce(&mut Cache) -> Outcome>)> = vec![
        ("1 continuum bound", Box::new(|_| continuum_bound())),
        ("2 fuel-cycle optima", Box::new(cycles)),
        ("3 threshold study", Box::new(thresholds)),
        ("4 geometry study", Box::new(geometry)),
        ("5 resolution study", Box::new(resolution)),
        ("6 deterministic operability", Box::new(|_| operability())),
        ("7 estimator scale and variance reduction", Box::new(estimators)),
        ("8 property suites", Box::new(properties)),
        ("9 Laplace trend", Box::new(|_| laplace_trend())),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check(&mut cache);
        println!(
            "criterion {name}: {} ({:.1} s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {failed} of 9 criteria failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
