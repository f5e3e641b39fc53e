//! Benchmark front end: configuration, run and divisibility commands.

pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use unravel::ensemble::{error_vs_oracle, observable_series, run_ensemble, EnsembleResult};
use unravel::propagator::propagate;
use unravel::{DensityMatrix, MasterEquation};

pub use config::{parse_config, ConfigError, RunConfig};

/// Exit code for a successful command.
pub const EXIT_OK: i32 = 0;
/// Exit code for configuration and I/O errors.
pub const EXIT_CONFIG: i32 = 1;
/// Exit code when at least one method aborted with a method error.
pub const EXIT_METHOD: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
    #[error("reference solution failed: {0}")]
    Oracle(unravel::Error),
}

pub const CSV_HEADER: [&str; 6] = ["t", "method", "observable", "mean", "stderr", "n_traj"];

/// Twelve significant digits in scientific notation.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn out_path(prefix: &str, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}.{suffix}"))
}

#[derive(Debug, Serialize)]
pub struct MethodSummary {
    pub status: &'static str,
    pub wall_clock_ms: f64,
    pub n_traj: usize,
    pub event_counts: BTreeMap<String, u64>,
    pub max_oracle_distance: Option<f64>,
    pub error: Option<String>,
    pub abort_time: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub model: String,
    pub t_max: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub threads: usize,
    pub methods: BTreeMap<String, MethodSummary>,
}

fn write_rows(
    w: &mut csv::Writer<std::fs::File>,
    cfg: &RunConfig,
    method: &str,
    result: &EnsembleResult,
) -> Result<(), CliError> {
    let series: Vec<_> = cfg
        .observables
        .iter()
        .map(|(name, o)| (name, observable_series(result, o).expect("observables validated at parse time")))
        .collect();
    for i in 0..result.rho_hat.len() {
        for (name, s) in &series {
            let (t, mean, err) = s[i];
            w.write_record([fmt_num(t), method.into(), name.to_string(), fmt_num(mean), fmt_num(err), result.n_traj.to_string()])?;
        }
    }
    Ok(())
}

fn oracle_result(cfg: &RunConfig, me: &MasterEquation) -> Result<EnsembleResult, CliError> {
    let grid = cfg.grid()?;
    let psi0 = cfg.initial_state()?;
    let oracle = propagate(me, &DensityMatrix::pure(&psi0), &grid).map_err(CliError::Oracle)?;
    Ok(EnsembleResult {
        method: "oracle".into(),
        grid,
        spread: vec![unravel::ensemble::Spread::Batches(Vec::new()); oracle.states.len()],
        stderr: vec![0.0; oracle.states.len()],
        rho_hat: oracle.states,
        n_traj: 0,
        wall_clock_ms: 0.0,
        event_counts: BTreeMap::new(),
        norm_ratio: None,
        nmqj_events: Vec::new(),
    })
}

/// Runs every configured method, writing `{out}.{method}.csv`,
/// `{out}.oracle.csv` and `{out}.summary.json`. Returns the exit code.
pub fn run_command(cfg: &RunConfig, oracle_only: bool, threads: Option<usize>) -> Result<i32, CliError> {
    let me = cfg.master_equation();
    let grid = cfg.grid()?;
    let psi0 = cfg.initial_state()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build()?;

    let oracle = oracle_result(cfg, &me)?;
    let mut w = writer(&out_path(&cfg.output, "oracle.csv"))?;
    w.write_record(CSV_HEADER)?;
    write_rows(&mut w, cfg, "oracle", &oracle)?;
    w.flush().map_err(io_err(Path::new(&cfg.output)))?;
    if oracle_only {
        return Ok(EXIT_OK);
    }
    let oracle_solution = unravel::propagator::OracleSolution { grid, states: oracle.rho_hat.clone() };

    let mut summary = RunSummary {
        model: cfg.model.name.clone(),
        t_max: cfg.t_max,
        dt: cfg.dt,
        n_traj: cfg.n_traj,
        seed: cfg.seed,
        threads: pool.current_num_threads(),
        methods: BTreeMap::new(),
    };
    let mut code = EXIT_OK;
    for spec in &cfg.methods {
        let method = cfg.method(spec)?;
        let outcome = pool.install(|| run_ensemble(&method, &me, &psi0, &grid, cfg.n_traj, cfg.seed));
        let path = out_path(&cfg.output, &format!("{}.csv", spec.name));
        let mut w = writer(&path)?;
        w.write_record(CSV_HEADER)?;
        let (result, failure) = match outcome {
            Ok(r) => (Some(r), None),
            Err(e) => {
                code = EXIT_METHOD;
                eprintln!("error: {e}");
                (e.partial.map(|p| *p), Some((e.time, e.source)))
            }
        };
        if let Some(r) = &result {
            write_rows(&mut w, cfg, &spec.name, r)?;
        }
        if let Some((t, err)) = &failure {
            let kind = format!("{err:?}");
            let kind = kind.split([' ', '{', '(']).next().unwrap_or("Error");
            w.write_record([fmt_num(*t), spec.name.clone(), format!("abort:{kind}"), fmt_num(0.0), fmt_num(0.0), cfg.n_traj.to_string()])?;
        }
        w.flush().map_err(io_err(&path))?;
        let max_dist = result.as_ref().and_then(|r| {
            error_vs_oracle(r, &oracle_solution).ok().map(|v| v.iter().map(|x| x.1).fold(0.0, f64::max))
        });
        summary.methods.insert(
            spec.name.clone(),
            MethodSummary {
                status: if failure.is_some() { "aborted" } else { "ok" },
                wall_clock_ms: result.as_ref().map_or(0.0, |r| r.wall_clock_ms),
                n_traj: cfg.n_traj,
                event_counts: result.as_ref().map(|r| r.event_counts.clone()).unwrap_or_default(),
                max_oracle_distance: max_dist,
                error: failure.as_ref().map(|(_, e)| e.to_string()),
                abort_time: failure.as_ref().map(|(t, _)| *t),
            },
        );
    }
    let path = out_path(&cfg.output, "summary.json");
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    serde_json::to_writer_pretty(file, &summary)?;
    Ok(code)
}

/// Writes `{out}.divisibility.csv` with `t,cp,p,min_rate,min_w_eigenvalue`.
pub fn divisibility_command(cfg: &RunConfig) -> Result<i32, CliError> {
    let me = cfg.master_equation();
    let grid = cfg.grid()?;
    let path = out_path(&cfg.output, "divisibility.csv");
    let mut w = writer(&path)?;
    w.write_record(["t", "cp", "p", "min_rate", "min_w_eigenvalue"])?;
    for t in grid.times() {
        let r = me.divisibility_report(t, 64);
        w.write_record([fmt_num(t), r.cp.to_string(), r.p.to_string(), fmt_num(r.min_rate), fmt_num(r.min_w_eigenvalue)])?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(EXIT_OK)
}
