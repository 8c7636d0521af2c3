//! Command-line front end: configuration resolution, subcommands and
//! artifact emission.
//!
//! Every invocation writes into a fresh directory `<out>/<command>-<label>-NNN`
//! holding the resolved `config.toml` next to its outputs. JSON artifacts
//! carry `config_hash` and `seed` fields; CSV artifacts start with a
//! `# config_hash=… seed=…` comment line followed by a header row.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::{preset, ConfigError, InflowSource, RunConfig, PRESET_NAMES};
use crate::ldp::{asymptotic_probability, ActionResult, InflowPath};
use crate::sampling::{
    estimate_is, estimate_mc, sample_path_p, sample_rng, variance_reduction, EstimatorKind, EstimatorReport,
    SampleBatchSpec,
};
use crate::solver::{ConstantInflow, Inflow, RecordOptions, Stepping, TabulatedInflow};
use crate::studies::{bound, optimize, run_optimization_study, Study, StudyError};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "UNSTART_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "unstart", version, about = "Rare-event analysis of scramjet unstart")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named preset (see `unstart presets`).
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parent directory of the run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub estimator: Option<EstimatorArg>,
    #[arg(long, global = true, value_enum)]
    pub stepping: Option<SteppingArg>,
    #[arg(long, global = true)]
    pub ntilde: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Mc,
    Is,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SteppingArg {
    Uniform,
    Adaptive,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the engine once and write Mach, shock and thrust histories.
    Simulate {
        /// Two-column CSV `t,u` replacing the configured inflow.
        #[arg(long)]
        inflow: Option<PathBuf>,
        /// Draw one random inflow path instead.
        #[arg(long, conflicts_with = "inflow")]
        sampled: bool,
    },
    /// Compute the unfueled equilibrium flow.
    SpinUp,
    /// Find the most probable unstarting inflow path.
    Optimize,
    /// Estimate the unstart probability by plain or importance sampling.
    Estimate {
        /// Optimizer output (action.json) to center importance sampling on.
        #[arg(long)]
        center: Option<PathBuf>,
        /// Sweep ε over 0.20, 0.22, …, 0.40.
        #[arg(long, conflicts_with = "epsilon")]
        sweep: bool,
    },
    /// Run a reference study end to end and compare against its values.
    Reproduce {
        #[arg(value_parser = study_parser())]
        study: String,
    },
    /// List preset names.
    Presets,
    /// Print the resolved configuration as TOML.
    Config,
}

fn study_parser() -> clap::builder::PossibleValuesParser {
    clap::builder::PossibleValuesParser::new(Study::ALL.map(|s| s.name()))
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error("{0}")]
    Run(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

/// Sizes the global rayon pool from the workers environment variable.
pub fn configure_workers() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Run(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(run_err)?;
    }
    Ok(())
}

/// Configuration after applying the command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => RunConfig::paper_defaults(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(eps) = cli.epsilon {
        cfg.noise.epsilon = eps;
        cfg.estimator.epsilons.clear();
    }
    if let Some(j) = cli.samples {
        cfg.estimator.samples = j;
    }
    if let Some(e) = cli.estimator {
        cfg.estimator.kind = Some(match e {
            EstimatorArg::Mc => EstimatorKind::Mc,
            EstimatorArg::Is => EstimatorKind::Is,
        });
    }
    if let Some(s) = cli.stepping {
        let s = match s {
            SteppingArg::Uniform => Stepping::Uniform,
            SteppingArg::Adaptive => Stepping::Adaptive,
        };
        cfg.estimator.stepping = s;
        cfg.simulate.stepping = s;
    }
    if let Some(n) = cli.ntilde {
        cfg.discretization.ntilde = n;
    }
    match &cli.command {
        Command::Simulate { inflow, sampled } => {
            if let Some(path) = inflow {
                cfg.simulate.inflow = InflowSource::File { path: path.clone() };
            }
            if *sampled {
                cfg.simulate.inflow = InflowSource::Sampled;
            }
        }
        Command::Estimate { center, sweep } => {
            if let Some(path) = center {
                cfg.estimator.center = Some(path.clone());
            }
            if *sweep {
                cfg.estimator.epsilons = crate::config::epsilon_sweep();
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Output directory of one invocation; never reuses an existing one.
pub struct RunDir {
    pub path: PathBuf,
    hash: String,
    seed: u64,
}

impl RunDir {
    pub fn create(cfg: &RunConfig, command: &str) -> Result<Self, CliError> {
        let parent = &cfg.output_dir;
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let stem = format!("{command}-{}", cfg.label);
        for i in 1.. {
            let path = parent.join(format!("{stem}-{i:03}"));
            match fs::create_dir(&path) {
                Ok(()) => {
                    let dir = Self {
                        path,
                        hash: cfg.hash(),
                        seed: cfg.seed,
                    };
                    dir.write_text("config.toml", &cfg.to_toml())?;
                    return Ok(dir);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
        unreachable!()
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }

    /// JSON object with `config_hash` and `seed` merged in.
    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let mut v = serde_json::to_value(value).map_err(run_err)?;
        if let Some(obj) = v.as_object_mut() {
            obj.insert("config_hash".into(), json!(self.hash));
            obj.insert("seed".into(), json!(self.seed));
        }
        let text = serde_json::to_string_pretty(&v).map_err(run_err)?;
        self.write_text(name, &(text + "\n"))
    }

    pub fn write_csv<R>(&self, name: &str, header: &[&str], rows: R) -> Result<PathBuf, CliError>
    where
        R: IntoIterator<Item = Vec<String>>,
    {
        let path = self.path.join(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "# config_hash={} seed={}", self.hash, self.seed).map_err(io_err(&path))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header).map_err(run_err)?;
        for row in rows {
            w.write_record(&row).map_err(run_err)?;
        }
        w.flush().map_err(io_err(&path))?;
        Ok(path)
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Reads a `t,u` CSV (header row and `#` comments allowed).
pub fn read_inflow_csv(path: &Path) -> Result<TabulatedInflow, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
    let (mut times, mut speeds) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
        let parsed: Option<(f64, f64)> = match (rec.get(0), rec.get(1)) {
            (Some(t), Some(u)) => t.parse().ok().zip(u.parse().ok()),
            _ => None,
        };
        match parsed {
            Some((t, u)) => {
                times.push(t);
                speeds.push(u);
            }
            None if i == 0 => continue,
            None => {
                return Err(CliError::Run(format!(
                    "{}: line {} is not a `t,u` pair",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    TabulatedInflow::new(times, speeds).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

fn load_center(path: &Path) -> Result<ActionResult, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

/// Dispatches a parsed command line; returns the run directory, if any.
pub fn run(cli: &Cli) -> Result<Option<PathBuf>, CliError> {
    match &cli.command {
        Command::Presets => {
            let mut out = std::io::stdout().lock();
            for name in PRESET_NAMES {
                if writeln!(out, "{name}").is_err() {
                    break;
                }
            }
            Ok(None)
        }
        Command::Config => {
            let text = resolve_config(cli)?.to_toml();
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            Ok(None)
        }
        Command::Simulate { .. } => cmd_simulate(&resolve_config(cli)?).map(Some),
        Command::SpinUp => cmd_spin_up(&resolve_config(cli)?).map(Some),
        Command::Optimize => cmd_optimize(&resolve_config(cli)?).map(Some),
        Command::Estimate { .. } => cmd_estimate(&resolve_config(cli)?).map(Some),
        Command::Reproduce { study } => {
            let study = Study::from_name(study).expect("validated by clap");
            cmd_reproduce(cli, study).map(Some)
        }
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    label: String,
    inflow: String,
    stepping: Stepping,
    min_mach: f64,
    min_mach_time: f64,
    unstart: bool,
    unstart_time: Option<f64>,
    mach_threshold: f64,
    steps_taken: usize,
    final_time: f64,
    max_cfl: f64,
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let scenario = cfg.scenario()?;
    let dir = RunDir::create(cfg, "simulate")?;
    let sampled;
    let tabulated;
    let constant = ConstantInflow(cfg.freestream.velocity);
    let (inflow, label): (&dyn Inflow, String) = match &cfg.simulate.inflow {
        InflowSource::Constant => (&constant, "constant".into()),
        InflowSource::File { path } => {
            tabulated = read_inflow_csv(path)?;
            (&tabulated, format!("file:{}", path.display()))
        }
        InflowSource::Sampled => {
            sampled = sample_path_p(
                &mut sample_rng(cfg.seed, 0),
                &cfg.noise,
                cfg.freestream.velocity,
                cfg.discretization.ntilde,
                cfg.refinement(),
                cfg.discretization.dt,
            );
            write_path_csv(&dir, "inflow.csv", &sampled, cfg)?;
            (&sampled, format!("sampled:epsilon={}", cfg.noise.epsilon))
        }
    };
    let opts = RecordOptions {
        monitor_cell: cfg.event.monitor_cell,
        threshold: Some(cfg.event.mach_threshold),
        ..RecordOptions::with_histories(cfg.simulate.history_stride)
    };
    let rec = scenario
        .run(inflow, cfg.simulate.stepping, &opts)
        .map_err(run_err)?;
    let x = scenario.solver().midpoints().to_vec();
    dir.write_csv(
        "mach.csv",
        &["t", "x", "M"],
        rec.mach_history
            .iter()
            .flat_map(|(t, m)| x.iter().zip(m).map(move |(x, m)| vec![num(*t), num(*x), num(*m)])),
    )?;
    dir.write_csv(
        "shock.csv",
        &["t", "x_shock"],
        rec.shock_history.iter().map(|(t, s)| vec![num(*t), num(*s)]),
    )?;
    dir.write_csv(
        "thrust.csv",
        &["t", "thrust"],
        rec.thrust_history.iter().map(|(t, s)| vec![num(*t), num(*s)]),
    )?;
    let summary = SimulateSummary {
        label: cfg.label.clone(),
        inflow: label,
        stepping: cfg.simulate.stepping,
        min_mach: rec.min_mach,
        min_mach_time: rec.min_mach_time,
        unstart: rec.min_mach <= cfg.event.mach_threshold,
        unstart_time: rec.unstart_time,
        mach_threshold: cfg.event.mach_threshold,
        steps_taken: rec.steps_taken,
        final_time: rec.final_time,
        max_cfl: rec.max_cfl,
    };
    dir.write_json("summary.json", &summary)?;
    println!(
        "min M_{} = {:.6}  unstart: {}  -> {}",
        cfg.event.monitor_cell,
        rec.min_mach,
        match rec.unstart_time {
            Some(t) => format!("yes, t = {t:.6} s"),
            None => "no".into(),
        },
        dir.path.display()
    );
    Ok(dir.path)
}

pub fn cmd_spin_up(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let scenario = cfg.scenario()?;
    let dir = RunDir::create(cfg, "spin-up")?;
    let solver = scenario.solver();
    let eq = scenario.equilibrium();
    let gas = solver.gas();
    let pressures = eq.pressures(gas);
    let mach = eq.mach_numbers(gas);
    dir.write_csv(
        "equilibrium.csv",
        &["x", "rho", "u", "P", "M"],
        solver.midpoints().iter().enumerate().map(|(k, x)| {
            vec![
                num(*x),
                num(eq.rho[k]),
                num(eq.mom[k] / eq.rho[k]),
                num(pressures[k]),
                num(mach[k]),
            ]
        }),
    )?;
    let interior = &mach[..solver.discretization().cells];
    let min_mach = interior.iter().cloned().fold(f64::INFINITY, f64::min);
    dir.write_json(
        "summary.json",
        &json!({
            "label": cfg.label,
            "min_mach": min_mach,
            "supersonic": min_mach > 1.0,
            "thrust": solver.thrust(eq),
            "shock_location": solver.shock_location(interior),
        }),
    )?;
    println!("equilibrium min M = {min_mach:.6} -> {}", dir.path.display());
    Ok(dir.path)
}

fn write_path_csv(dir: &RunDir, name: &str, path: &InflowPath, cfg: &RunConfig) -> Result<(), CliError> {
    let c = cfg.inflow_sound_speed();
    dir.write_csv(
        name,
        &["t", "u"],
        path.control_times()
            .into_iter()
            .zip(path.coarse())
            .map(|(t, u)| vec![num(t), num(*u)]),
    )?;
    let mach_name = name.replace(".csv", "_mach.csv");
    dir.write_csv(
        &mach_name,
        &["t", "M_in"],
        path.control_times()
            .into_iter()
            .zip(path.coarse())
            .map(|(t, u)| vec![num(t), num(u / c)]),
    )?;
    Ok(())
}

fn write_action(dir: &RunDir, cfg: &RunConfig, result: &ActionResult, prefix: &str) -> Result<f64, CliError> {
    let b = bound(cfg).map_err(run_err)?;
    let mut v = serde_json::to_value(result).map_err(run_err)?;
    let obj = v.as_object_mut().expect("struct serializes to an object");
    obj.insert("label".into(), json!(cfg.label));
    obj.insert("mach_threshold".into(), json!(cfg.event.mach_threshold));
    obj.insert("subsonic_bound".into(), json!(b));
    obj.insert("ratio_to_bound".into(), json!(result.value / b));
    obj.insert(
        "log_asymptotic_probability".into(),
        json!({
            "epsilon": cfg.noise.epsilon,
            "exp_minus_value_over_eps2": asymptotic_probability(result.value, cfg.noise.epsilon),
            "note": "exponential decay rate only, not the probability itself",
        }),
    );
    dir.write_json(&format!("{prefix}action.json"), &v)?;
    write_path_csv(dir, &format!("{prefix}minimizer.csv"), &result.minimizer(), cfg)?;
    Ok(b)
}

pub fn cmd_optimize(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = RunDir::create(cfg, "optimize")?;
    let result = optimize(cfg)?;
    let b = write_action(&dir, cfg, &result, "")?;
    println!(
        "value = {:.6}  bound = {:.6}  ratio = {:.4}  iterations = {}  feasible = {}  status = {:?} -> {}",
        result.value,
        b,
        result.value / b,
        result.iterations,
        result.feasible,
        result.status,
        dir.path.display()
    );
    Ok(dir.path)
}

struct SweepOutput {
    reports: Vec<EstimatorReport>,
}

fn run_sweep(cfg: &RunConfig, dir: &RunDir) -> Result<SweepOutput, CliError> {
    let scenario = cfg.scenario()?;
    let event = cfg.event_spec();
    let kinds = match cfg.estimator.kind {
        Some(k) => vec![k],
        None => vec![EstimatorKind::Mc, EstimatorKind::Is],
    };
    let center = if kinds.contains(&EstimatorKind::Is) {
        let result = match &cfg.estimator.center {
            Some(path) => load_center(path)?,
            None => {
                let r = optimize(cfg)?;
                write_action(dir, cfg, &r, "center_")?;
                r
            }
        };
        let c = result.minimizer();
        if c.ntilde() != cfg.discretization.ntilde || c.start() != cfg.freestream.velocity {
            return Err(CliError::Run(
                "center path does not match the configured grid or inflow speed".into(),
            ));
        }
        Some(c)
    } else {
        None
    };
    let mut reports = Vec::new();
    for kind in kinds {
        for eps in cfg.epsilons() {
            let spec = SampleBatchSpec {
                samples: cfg.estimator.samples,
                noise: cfg.noise.with_epsilon(eps),
                base_seed: cfg.seed,
                estimator: kind,
                center: center.clone(),
                stepping: cfg.estimator.stepping,
            };
            let report = match kind {
                EstimatorKind::Mc => estimate_mc(&spec, &scenario, &event, cfg.discretization.ntilde),
                EstimatorKind::Is => estimate_is(&spec, &scenario, &event),
            }
            .map_err(run_err)?;
            dir.write_json(&format!("report_{kind}_eps{eps:.3}.json"), &report)?;
            println!(
                "{kind} eps={eps:.2}  p_hat={:.4e}  std={:.4e}  ci99=[{:.4e}, {:.4e}]  hits={}  invalid={}{}",
                report.p_hat,
                report.std_j,
                report.ci99_lo,
                report.ci99_hi,
                report.hits,
                report.invalid,
                if report.suspect() { "  (suspect: failed runs)" } else { "" }
            );
            reports.push(report);
        }
    }
    dir.write_csv(
        "sweep.csv",
        &[
            "estimator", "epsilon", "samples", "seed", "p_hat", "std_j", "ci99_lo", "ci99_hi", "rel_err", "hits",
            "invalid", "wall_time",
        ],
        reports.iter().map(|r| {
            vec![
                r.estimator.to_string(),
                num(r.epsilon),
                r.samples.to_string(),
                r.seed.to_string(),
                num(r.p_hat),
                num(r.std_j),
                num(r.ci99_lo),
                num(r.ci99_hi),
                r.rel_err.map(num).unwrap_or_default(),
                r.hits.to_string(),
                r.invalid.to_string(),
                num(r.wall_time),
            ]
        }),
    )?;
    let pairs = ratio_rows(&reports);
    if !pairs.is_empty() {
        dir.write_csv(
            "std_ratio.csv",
            &["epsilon", "std_mc", "std_is", "std_ratio", "variance_reduction"],
            pairs.iter().map(|(eps, mc, is)| {
                let vr = variance_reduction(mc, is);
                vec![
                    num(*eps),
                    num(mc.std_j),
                    num(is.std_j),
                    vr.map(|v| num(v.sqrt())).unwrap_or_default(),
                    vr.map(num).unwrap_or_default(),
                ]
            }),
        )?;
    }
    Ok(SweepOutput { reports })
}

fn ratio_rows(reports: &[EstimatorReport]) -> Vec<(f64, &EstimatorReport, &EstimatorReport)> {
    reports
        .iter()
        .filter(|r| r.estimator == EstimatorKind::Mc)
        .filter_map(|mc| {
            reports
                .iter()
                .find(|r| r.estimator == EstimatorKind::Is && r.epsilon == mc.epsilon)
                .map(|is| (mc.epsilon, mc, is))
        })
        .collect()
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = RunDir::create(cfg, "estimate")?;
    run_sweep(cfg, &dir)?;
    println!("-> {}", dir.path.display());
    Ok(dir.path)
}

fn markdown_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in rows {
        s += &format!("| {} |\n", r.join(" | "));
    }
    s
}

pub fn cmd_reproduce(cli: &Cli, study: Study) -> Result<PathBuf, CliError> {
    if study == Study::McVsIs {
        let mut cfg = resolve_config(cli)?;
        if cli.config.is_none() && cli.preset.is_none() {
            cfg = preset("mc-vs-is-short")?;
            if let Some(out) = &cli.out {
                cfg.output_dir = out.clone();
            }
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
        }
        cfg.label = study.name().into();
        cfg.estimator.kind = None;
        if cli.samples.is_none() {
            cfg.estimator.samples = 1000;
        }
        if cli.epsilon.is_none() {
            cfg.estimator.epsilons = vec![0.4, 0.3];
        }
        cfg.validate()?;
        let dir = RunDir::create(&cfg, "reproduce")?;
        let out = run_sweep(&cfg, &dir)?;
        let header = [
            "epsilon",
            "p_mc",
            "ci_mc",
            "p_is",
            "ci_is",
            "std_mc",
            "std_is",
            "variance_reduction",
            "cis_overlap",
            "std_is_le_std_mc",
        ];
        let rows: Vec<Vec<String>> = ratio_rows(&out.reports)
            .into_iter()
            .map(|(eps, mc, is)| {
                vec![
                    format!("{eps:.2}"),
                    format!("{:.4e}", mc.p_hat),
                    format!("[{:.3e}, {:.3e}]", mc.ci99_lo, mc.ci99_hi),
                    format!("{:.4e}", is.p_hat),
                    format!("[{:.3e}, {:.3e}]", is.ci99_lo, is.ci99_hi),
                    format!("{:.4e}", mc.std_j),
                    format!("{:.4e}", is.std_j),
                    variance_reduction(mc, is).map(|v| format!("{v:.2}")).unwrap_or_default(),
                    (mc.ci99_lo <= is.ci99_hi && is.ci99_lo <= mc.ci99_hi).to_string(),
                    (is.std_j <= mc.std_j).to_string(),
                ]
            })
            .collect();
        dir.write_csv("comparison.csv", &header, rows.clone())?;
        dir.write_text("comparison.md", &markdown_table(&header, &rows))?;
        print!("{}", markdown_table(&header, &rows));
        println!("-> {}", dir.path.display());
        return Ok(dir.path);
    }

    let mut cfg = RunConfig::paper_defaults();
    cfg.label = study.name().into();
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    let dir = RunDir::create(&cfg, "reproduce")?;
    let results = run_optimization_study(study)?;
    let header = ["case", "computed", "reference", "rel_dev", "bound", "iterations", "feasible"];
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|(row, _)| {
            vec![
                row.case.clone(),
                format!("{:.6}", row.computed),
                format!("{}", row.reference),
                format!("{:+.4}", row.rel_dev),
                format!("{:.5}", row.bound),
                row.iterations.to_string(),
                row.feasible.to_string(),
            ]
        })
        .collect();
    for (row, result) in &results {
        let case_cfg = preset(&row.case)?;
        dir.write_json(&format!("{}_action.json", row.case), result)?;
        write_path_csv(&dir, &format!("{}_minimizer.csv", row.case), &result.minimizer(), &case_cfg)?;
    }
    dir.write_csv("comparison.csv", &header, rows.clone())?;
    dir.write_text("comparison.md", &markdown_table(&header, &rows))?;
    print!("{}", markdown_table(&header, &rows));
    println!("-> {}", dir.path.display());
    Ok(dir.path)
}
