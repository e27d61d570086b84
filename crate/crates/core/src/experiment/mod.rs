//! Configuration-driven experiment runs writing CSV traces and a JSON manifest.
//!
//! CSV layouts are documented in `docs/csv_schemas.md`.

mod compare;
mod config;

pub use compare::{
    area_under_j, compare, compare_rows, read_trace, steps_to_convergence, Comparison, TraceSummary,
    CONVERGENCE_TOL, CONVERGENCE_WINDOW, TRACE_COLUMNS,
};
pub use config::{
    apply_override, ConfigError, DensitySection, DpSection, EnvSection, EvalSection, ExperimentConfig,
    ExperimentKind, LearnerSection, MpcSection, SmoothingSection,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dp::{policy_performance, value_iteration, DpError, DpGrid, DpSolution};
use crate::mpc::{MpcError, MpcPolicy, PolicyParams};
use crate::rl::{eval_seed, gradient_density, run_learning, small_gradient_fraction, RlError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: schema mismatch: {message}")]
    Schema { path: String, message: String },
    #[error("dp: {0}")]
    Dp(#[from] DpError),
    #[error("mpc: {0}")]
    Mpc(#[from] MpcError),
    #[error("seed {seed}: {source}")]
    Learning {
        seed: u64,
        #[source]
        source: RlError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One written artifact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactEntry {
    pub file: String,
    /// Data rows, header excluded.
    pub rows: usize,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub files: Vec<ArtifactEntry>,
    pub versions: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
    /// Per-seed metrics keyed by seed, plus seed-independent entries.
    pub summary: BTreeMap<String, Value>,
}

/// A CSV table held in memory until written.
struct Table {
    file: String,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(file: String, header: &[&'static str]) -> Self {
        Self {
            file,
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write(&self, dir: &Path) -> Result<ArtifactEntry, ExperimentError> {
        let path = dir.join(&self.file);
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| ExperimentError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        };
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| ExperimentError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })?;
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        Ok(ArtifactEntry {
            file: self.file.clone(),
            rows: self.rows.len(),
            bytes: bytes.len() as u64,
            sha256: hex(&Sha256::digest(&bytes)),
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Outcome of one seed: tables to write and its summary, or the error with
/// whatever tables were completed.
struct SeedOutput {
    tables: Vec<Table>,
    summary: Value,
    error: Option<ExperimentError>,
}

/// Boundaries of the DP policy's buy (`a > 0`), idle (`a = 0`) and sell
/// (`a < 0`) regions on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyRegions {
    /// Last node of the initial buying run.
    pub buy_end: Option<f64>,
    /// Last idle node.
    pub idle_end: Option<f64>,
    /// First node from which the policy sells through to the end.
    pub sell_start: Option<f64>,
}

/// Reads [`PolicyRegions`] off a tabulated policy.
pub fn policy_regions(states: &[f64], actions: &[f64], u_max: f64) -> PolicyRegions {
    let tol = 1e-9 * u_max.max(1.0);
    let pts: Vec<(f64, f64)> = states
        .iter()
        .zip(actions)
        .filter(|(s, _)| (0.0..=1.0).contains(*s))
        .map(|(s, a)| (*s, *a))
        .collect();
    let buy_end = pts.iter().take_while(|(_, a)| *a > tol).last().map(|p| p.0);
    let idle_end = pts.iter().rev().find(|(_, a)| a.abs() <= tol).map(|p| p.0);
    let sell_start = match pts.iter().rposition(|(_, a)| *a >= -tol) {
        Some(i) => pts.get(i + 1).map(|p| p.0),
        None => pts.first().map(|p| p.0),
    };
    PolicyRegions {
        buy_end,
        idle_end,
        sell_start,
    }
}

fn solve_dp(cfg: &ExperimentConfig) -> Result<DpSolution<f64>, ExperimentError> {
    let env = cfg.env_params();
    let grid = DpGrid::new(&env, &cfg.dp_grid())?;
    Ok(value_iteration(&env, &grid, cfg.dp.tol, cfg.dp.max_sweeps)?)
}

/// Runs the configured experiment into `cfg.out_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunManifest, ExperimentError> {
    cfg.validate()?;
    let started = Instant::now();
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml_string()).map_err(io_err(&cfg_path))?;

    let mut shared_tables = Vec::new();
    let mut summary = BTreeMap::new();
    let dp = if cfg.kind == ExperimentKind::DpBaseline {
        let sol = solve_dp(cfg)?;
        let mut t = Table::new("dp_policy.csv".into(), &["s", "V", "pi"]);
        for ((s, v), p) in sol.states.iter().zip(&sol.values).zip(&sol.policy) {
            t.push(vec![num(*s), num(*v), num(*p)]);
        }
        shared_tables.push(t);
        let regions = policy_regions(&sol.states, &sol.policy, cfg.env.u_max);
        summary.insert(
            "dp".to_string(),
            json!({ "sweeps": sol.sweeps, "residual": sol.residual, "regions": regions }),
        );
        Some(sol)
    } else {
        None
    };

    let policy = MpcPolicy::new(cfg.mpc_config(), cfg.env_params().tariff())?.with_tol(cfg.mpc.solver_tol);
    let outputs: Vec<(u64, SeedOutput)> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let policy = &policy;
                let dp = dp.as_ref();
                scope.spawn(move || (seed, run_seed(cfg, policy, dp, seed)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    });

    let mut files = Vec::new();
    for t in &shared_tables {
        files.push(t.write(&dir)?);
    }
    let mut first_error = None;
    for (seed, out) in outputs {
        for t in &out.tables {
            files.push(t.write(&dir)?);
        }
        summary.insert(seed.to_string(), out.summary);
        if first_error.is_none() {
            first_error = out.error;
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }

    let mut versions = BTreeMap::new();
    versions.insert(env!("CARGO_PKG_NAME").to_string(), env!("CARGO_PKG_VERSION").to_string());
    versions.insert("manifest_format".to_string(), "1".to_string());
    let manifest = RunManifest {
        kind: cfg.kind,
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        files,
        versions,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        summary,
    };
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text + "\n").map_err(io_err(&mpath))?;
    Ok(manifest)
}

fn run_seed(
    cfg: &ExperimentConfig,
    policy: &MpcPolicy<f64>,
    dp: Option<&DpSolution<f64>>,
    seed: u64,
) -> SeedOutput {
    let prefix = format!("{}_{seed}", cfg.kind.name());
    let res = match cfg.kind {
        ExperimentKind::DpBaseline => dp_seed(cfg, dp.expect("dp solved"), seed, &prefix),
        ExperimentKind::LearnFixedTau => learn_seed(cfg, policy, seed, &prefix, true),
        ExperimentKind::LearnHomotopy => learn_seed(cfg, policy, seed, &prefix, false),
        ExperimentKind::SmoothingProfile => smoothing_seed(cfg, policy, seed, &prefix),
        ExperimentKind::GradientDensity => density_seed(cfg, policy, seed, &prefix),
    };
    res.unwrap_or_else(|(tables, error)| SeedOutput {
        tables,
        summary: json!({ "error": error.to_string() }),
        error: Some(error),
    })
}

type SeedResult = Result<SeedOutput, (Vec<Table>, ExperimentError)>;

fn ok(tables: Vec<Table>, summary: Value) -> SeedResult {
    Ok(SeedOutput {
        tables,
        summary,
        error: None,
    })
}

fn dp_seed(cfg: &ExperimentConfig, sol: &DpSolution<f64>, seed: u64, prefix: &str) -> SeedResult {
    let env = cfg.env_params();
    let rc = cfg.rollout_config(eval_seed(seed));
    let perf = policy_performance(|s| sol.optimal_action(s).0, &env, &rc);
    let mut t = Table::new(format!("{prefix}.csv"), &["seed", "J", "J_se", "rollouts", "horizon"]);
    t.push(vec![
        seed.to_string(),
        num(perf.mean),
        num(perf.std_error),
        rc.rollouts.to_string(),
        rc.horizon.to_string(),
    ]);
    ok(vec![t], json!({ "J": perf.mean, "J_se": perf.std_error }))
}

fn learn_seed(cfg: &ExperimentConfig, policy: &MpcPolicy<f64>, seed: u64, prefix: &str, fixed: bool) -> SeedResult {
    let env = cfg.env_params();
    let lc = cfg.learner_config(fixed);
    let mut t = Table::new(format!("{prefix}.csv"), &TRACE_COLUMNS);
    let trace = match run_learning(&env, policy, &lc, seed) {
        Ok(tr) => tr,
        Err(RlError::TooManyFailures {
            failures,
            step,
            last,
            trace,
        }) => {
            for r in &trace.rows {
                t.push(compare::trace_record(r).to_vec());
            }
            let source = RlError::TooManyFailures {
                failures,
                step,
                last,
                trace,
            };
            return Err((vec![t], ExperimentError::Learning { seed, source }));
        }
        Err(source) => return Err((vec![], ExperimentError::Learning { seed, source })),
    };
    for r in &trace.rows {
        t.push(compare::trace_record(r).to_vec());
    }
    let theta = PolicyParams(trace.final_theta);
    let tau = trace.rows.last().map_or(lc.schedule.floor, |r| r.tau);
    let final_perf = policy
        .tabulate(&theta, tau, lc.table_lo, lc.table_hi, lc.table_points)
        .map(|table| policy_performance(|s| table.eval(s), &env, &cfg.rollout_config(eval_seed(seed))));
    let summary = TraceSummary::new(t.file.clone(), &trace.rows);
    let mut s = json!({
        "final_theta": trace.final_theta,
        "steps_to_convergence": summary.steps_to_convergence,
        "area_under_j": summary.area_under_j,
        "skipped_samples": trace.skipped_samples,
        "critic_failures": trace.critic_failures,
    });
    match final_perf {
        Ok(p) => {
            s["final_J"] = json!(p.mean);
            s["final_J_se"] = json!(p.std_error);
        }
        Err(e) => return Err((vec![t], ExperimentError::Mpc(e))),
    }
    ok(vec![t], s)
}

fn smoothing_seed(cfg: &ExperimentConfig, policy: &MpcPolicy<f64>, seed: u64, prefix: &str) -> SeedResult {
    let sm = &cfg.smoothing;
    let env = cfg.env_params();
    let theta = PolicyParams(sm.theta);
    let n = sm.grid_points;
    let grid: Vec<f64> = (0..n)
        .map(|k| sm.grid_lo + (sm.grid_hi - sm.grid_lo) * k as f64 / (n - 1) as f64)
        .collect();
    let mut prof = Table::new(
        format!("{prefix}.csv"),
        &["tau", "s", "action", "dpi_dtheta1", "dpi_dtheta2", "grad_norm"],
    );
    let mut states = Table::new(format!("{prefix}-states.csv"), &["tau", "step", "s", "a"]);
    let mut max_norm = BTreeMap::new();
    for &tau in &sm.taus {
        let mut worst = 0.0_f64;
        for p in policy.smoothness_profile(&theta, tau, &grid) {
            match p.result {
                Ok((a, g)) => {
                    let norm = g[0].hypot(g[1]);
                    worst = worst.max(norm);
                    prof.push(vec![num(tau), num(p.s), num(a), num(g[0]), num(g[1]), num(norm)]);
                }
                Err(e) => return Err((vec![prof, states], ExperimentError::Mpc(e))),
            }
        }
        max_norm.insert(num(tau), worst);
        let mut noise = env.noise_stream(seed, 0);
        let mut s = sm.initial_state;
        let mut warm = None;
        for k in 0..sm.closed_loop_steps {
            let (a, y) = match policy.action(s, &theta, tau, warm.as_ref()) {
                Ok(v) => v,
                Err(e) => return Err((vec![prof, states], ExperimentError::Mpc(e))),
            };
            let a = env.clamp_action(a);
            states.push(vec![num(tau), k.to_string(), num(s), num(a)]);
            s = env.step(s, a, noise.sample());
            warm = Some(y);
        }
    }
    ok(vec![prof, states], json!({ "max_grad_norm": max_norm }))
}

fn density_seed(cfg: &ExperimentConfig, policy: &MpcPolicy<f64>, seed: u64, prefix: &str) -> SeedResult {
    let d = &cfg.density;
    let env = cfg.env_params();
    let theta = PolicyParams(d.theta);
    let mut t = Table::new(
        format!("{prefix}.csv"),
        &[
            "tau",
            "step",
            "s",
            "a",
            "dpi_dtheta1",
            "dpi_dtheta2",
            "contribution1",
            "contribution2",
            "normalized1",
            "normalized2",
        ],
    );
    let mut fractions = BTreeMap::new();
    for &tau in &d.taus {
        let samples = match gradient_density(
            &env,
            policy,
            &theta,
            tau,
            d.initial_state,
            d.steps,
            cfg.learner.exploration_std,
            cfg.env.discount,
            cfg.learner.ridge,
            seed,
        ) {
            Ok(v) => v,
            Err(source) => return Err((vec![t], ExperimentError::Learning { seed, source })),
        };
        for x in &samples {
            t.push(vec![
                num(tau),
                x.step.to_string(),
                num(x.s),
                num(x.a),
                num(x.gradient[0]),
                num(x.gradient[1]),
                num(x.contribution[0]),
                num(x.contribution[1]),
                num(x.normalized[0]),
                num(x.normalized[1]),
            ]);
        }
        fractions.insert(num(tau), small_gradient_fraction(&samples, d.small_threshold));
    }
    ok(vec![t], json!({ "small_fraction": fractions }))
}

/// Output path of a per-seed artifact.
pub fn artifact_path(dir: &Path, kind: ExperimentKind, seed: u64) -> PathBuf {
    dir.join(format!("{}_{seed}.csv", kind.name()))
}
