use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::battery::EnvParams;
use crate::dp::{DpGridConfig, RolloutConfig};
use crate::mpc::MpcConfig;
use crate::rl::{LearnerConfig, TauSchedule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{path}: cannot read config: {message}")]
    Read { path: String, message: String },
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("override `{key}`: {message}")]
    Override { key: String, message: String },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    DpBaseline,
    LearnFixedTau,
    LearnHomotopy,
    SmoothingProfile,
    GradientDensity,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::DpBaseline,
        ExperimentKind::LearnFixedTau,
        ExperimentKind::LearnHomotopy,
        ExperimentKind::SmoothingProfile,
        ExperimentKind::GradientDensity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::DpBaseline => "dp-baseline",
            ExperimentKind::LearnFixedTau => "learn-fixed-tau",
            ExperimentKind::LearnHomotopy => "learn-homotopy",
            ExperimentKind::SmoothingProfile => "smoothing-profile",
            ExperimentKind::GradientDensity => "gradient-density",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                format!("unknown experiment kind `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Battery dynamics, tariff, RL penalty and the MDP discount.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub alpha: f64,
    pub buy_price: f64,
    pub sell_price: f64,
    pub u_max: f64,
    pub noise_mean: f64,
    /// Second parameter of the power-imbalance normal law.
    pub noise_scale: f64,
    /// Read `noise_scale` as a variance (true) or a standard deviation.
    pub noise_scale_is_variance: bool,
    pub penalty: f64,
    /// Discount of the closed-loop cost, shared by DP, the critic and performance estimates.
    pub discount: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        let env = EnvParams::<f64>::default();
        Self {
            alpha: env.alpha,
            buy_price: env.buy_price,
            sell_price: env.sell_price,
            u_max: env.u_max,
            noise_mean: env.noise_mean,
            noise_scale: env.noise_variance,
            noise_scale_is_variance: true,
            penalty: env.penalty,
            discount: DpGridConfig::<f64>::default().discount,
        }
    }
}

impl EnvSection {
    pub fn params(&self) -> EnvParams<f64> {
        let noise_variance = if self.noise_scale_is_variance {
            self.noise_scale
        } else {
            self.noise_scale * self.noise_scale
        };
        EnvParams {
            alpha: self.alpha,
            buy_price: self.buy_price,
            sell_price: self.sell_price,
            u_max: self.u_max,
            noise_mean: self.noise_mean,
            noise_variance,
            penalty: self.penalty,
        }
    }
}

/// MPC scheme; its model gain and input bound follow the `env` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSection {
    pub horizon: usize,
    pub discount: f64,
    pub x_ref: f64,
    pub stage_weight: f64,
    pub slack_weight: f64,
    pub terminal_slack_weight: f64,
    /// KKT residual tolerance of the interior-point solver.
    pub solver_tol: f64,
}

impl Default for MpcSection {
    fn default() -> Self {
        let m = MpcConfig::<f64>::default();
        Self {
            horizon: m.horizon,
            discount: m.discount,
            x_ref: m.x_ref,
            stage_weight: m.stage_weight,
            slack_weight: m.slack_weight,
            terminal_slack_weight: m.terminal_slack_weight,
            solver_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpSection {
    pub state_nodes: usize,
    pub state_lo: f64,
    pub state_hi: f64,
    pub action_nodes: usize,
    pub quadrature_nodes: usize,
    /// Sup-norm Bellman residual at which value iteration stops.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for DpSection {
    fn default() -> Self {
        let g = DpGridConfig::<f64>::default();
        Self {
            state_nodes: g.state_nodes,
            state_lo: g.state_lo,
            state_hi: g.state_hi,
            action_nodes: g.action_nodes,
            quadrature_nodes: g.quadrature_nodes,
            tol: 1e-9,
            max_sweeps: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSection {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub exploration_std: f64,
    pub ridge: f64,
    pub initial_theta: [f64; 2],
    pub initial_state: f64,
    pub tau_initial: f64,
    pub tau_step: f64,
    pub tau_floor: f64,
    pub max_failures: usize,
}

impl Default for LearnerSection {
    fn default() -> Self {
        let l = LearnerConfig::<f64>::default();
        Self {
            steps: l.steps,
            batch_size: l.batch_size,
            learning_rate: l.learning_rate,
            grad_clip: l.grad_clip,
            exploration_std: l.exploration_std,
            ridge: l.ridge,
            initial_theta: l.initial_theta,
            initial_state: l.initial_state,
            tau_initial: l.schedule.initial,
            tau_step: l.schedule.step,
            tau_floor: l.schedule.floor,
            max_failures: l.max_failures,
        }
    }
}

/// Monte-Carlo performance estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Learning traces re-estimate performance every `every` steps.
    pub every: usize,
    pub rollouts: usize,
    pub horizon: usize,
    pub table_points: usize,
    pub table_lo: f64,
    pub table_hi: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let l = LearnerConfig::<f64>::default();
        Self {
            every: l.eval_every,
            rollouts: l.eval_rollouts,
            horizon: l.eval_horizon,
            table_points: l.table_points,
            table_lo: l.table_lo,
            table_hi: l.table_hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingSection {
    pub theta: [f64; 2],
    pub taus: Vec<f64>,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    /// Length of the exploration-free closed loop recorded for the state distribution.
    pub closed_loop_steps: usize,
    pub initial_state: f64,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        Self {
            theta: [3.0, 3.0],
            taus: vec![1e-2, 1e-4],
            grid_lo: 0.0,
            grid_hi: 1.0,
            grid_points: 201,
            closed_loop_steps: 5000,
            initial_state: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensitySection {
    pub theta: [f64; 2],
    pub taus: Vec<f64>,
    pub steps: usize,
    pub initial_state: f64,
    /// Normalized magnitude below which a sample counts as a vanishing gradient.
    pub small_threshold: f64,
}

impl Default for DensitySection {
    fn default() -> Self {
        Self {
            theta: [3.0, 3.0],
            taus: vec![1e-2, 1e-4],
            steps: 1000,
            initial_state: 0.5,
            small_threshold: 0.01,
        }
    }
}

/// Everything one CLI invocation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub env: EnvSection,
    pub mpc: MpcSection,
    pub dp: DpSection,
    pub learner: LearnerSection,
    pub eval: EvalSection,
    pub smoothing: SmoothingSection,
    pub density: DensitySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::LearnHomotopy,
            seeds: vec![1, 2, 3, 4, 5],
            out_dir: PathBuf::from("out"),
            env: EnvSection::default(),
            mpc: MpcSection::default(),
            dp: DpSection::default(),
            learner: LearnerSection::default(),
            eval: EvalSection::default(),
            smoothing: SmoothingSection::default(),
            density: DensitySection::default(),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn parse_error(origin: &str, text: &str, e: &toml::de::Error) -> ConfigError {
    let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
    ConfigError::Parse {
        origin: origin.to_string(),
        line,
        column,
        message: e.message().trim().to_string(),
    }
}

/// Parses `raw` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets a dotted `key=value` in a TOML tree.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override {
        key: assignment.to_string(),
        message: "expected key=value".into(),
    })?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override {
            key: key.to_string(),
            message: "empty key segment".into(),
        });
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| ConfigError::Override {
            key: key.to_string(),
            message: format!("`{part}` is not a table"),
        })?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parses a TOML document; missing fields take their defaults.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| parse_error(origin, text, &e))
    }

    /// Reads the optional config file, applies `--set` overrides in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let (text, origin) = match path {
            Some(p) => (
                std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?,
                p.display().to_string(),
            ),
            None => (String::new(), "<defaults>".to_string()),
        };
        // typed parse first so field errors point at the file
        Self::from_toml_str(&text, &origin)?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| parse_error(&origin, &text, &e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = if overrides.is_empty() {
            Self::from_toml_str(&text, &origin)?
        } else {
            let merged = toml::to_string(&table).map_err(|e| ConfigError::Override {
                key: overrides.join(" "),
                message: e.to_string(),
            })?;
            toml::from_str(&merged).map_err(|e: toml::de::Error| ConfigError::Override {
                key: overrides.join(" "),
                message: e.message().trim().to_string(),
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the effective configuration, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = PathBuf::new();
        let digest = Sha256::digest(canon.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn env_params(&self) -> EnvParams<f64> {
        self.env.params()
    }

    pub fn mpc_config(&self) -> MpcConfig<f64> {
        MpcConfig {
            horizon: self.mpc.horizon,
            discount: self.mpc.discount,
            x_ref: self.mpc.x_ref,
            stage_weight: self.mpc.stage_weight,
            slack_weight: self.mpc.slack_weight,
            terminal_slack_weight: self.mpc.terminal_slack_weight,
            u_max: self.env.u_max,
            model_gain: self.env.alpha,
        }
    }

    pub fn dp_grid(&self) -> DpGridConfig<f64> {
        DpGridConfig {
            state_nodes: self.dp.state_nodes,
            state_lo: self.dp.state_lo,
            state_hi: self.dp.state_hi,
            action_nodes: self.dp.action_nodes,
            quadrature_nodes: self.dp.quadrature_nodes,
            discount: self.env.discount,
        }
    }

    /// Learner settings; `fixed_tau` pins `τ` at the floor.
    pub fn learner_config(&self, fixed_tau: bool) -> LearnerConfig<f64> {
        let l = &self.learner;
        let schedule = if fixed_tau {
            TauSchedule::fixed(l.tau_floor)
        } else {
            TauSchedule {
                initial: l.tau_initial,
                step: l.tau_step,
                floor: l.tau_floor,
            }
        };
        LearnerConfig {
            steps: l.steps,
            batch_size: l.batch_size,
            learning_rate: l.learning_rate,
            grad_clip: l.grad_clip,
            exploration_std: l.exploration_std,
            ridge: l.ridge,
            discount: self.env.discount,
            initial_theta: l.initial_theta,
            initial_state: l.initial_state,
            schedule,
            eval_every: self.eval.every,
            eval_rollouts: self.eval.rollouts,
            eval_horizon: self.eval.horizon,
            table_points: self.eval.table_points,
            table_lo: self.eval.table_lo,
            table_hi: self.eval.table_hi,
            max_failures: l.max_failures,
        }
    }

    pub fn rollout_config(&self, seed: u64) -> RolloutConfig<f64> {
        RolloutConfig {
            discount: self.env.discount,
            rollouts: self.eval.rollouts,
            horizon: self.eval.horizon,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "seed list must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(invalid("seeds", "seeds must be distinct"));
        }
        if !(self.env.noise_scale >= 0.0) {
            return Err(invalid("env.noise_scale", "must be nonnegative"));
        }
        if !(self.env.discount > 0.0 && self.env.discount < 1.0) {
            return Err(invalid("env.discount", "must lie in (0, 1)"));
        }
        self.env_params().validate().map_err(|e| invalid("env", e))?;
        self.mpc_config().validate().map_err(|e| invalid("mpc", e))?;
        if !(self.mpc.solver_tol > 0.0) {
            return Err(invalid("mpc.solver_tol", "must be positive"));
        }
        if self.dp.state_nodes < 2 || self.dp.action_nodes < 2 || self.dp.quadrature_nodes == 0 {
            return Err(invalid("dp", "need at least two state and action nodes and one quadrature node"));
        }
        if !(self.dp.state_hi > self.dp.state_lo) {
            return Err(invalid("dp.state_hi", "must exceed dp.state_lo"));
        }
        if !(self.dp.tol > 0.0) || self.dp.max_sweeps == 0 {
            return Err(invalid("dp.tol", "tolerance and sweep budget must be positive"));
        }
        if !(self.learner.tau_step >= 0.0) {
            return Err(invalid("learner.tau_step", "must be nonnegative"));
        }
        self.learner_config(false)
            .validate()
            .map_err(|e| invalid("learner", e))?;
        for (name, taus) in [("smoothing.taus", &self.smoothing.taus), ("density.taus", &self.density.taus)] {
            if taus.is_empty() || taus.iter().any(|t| !(*t > 0.0)) {
                return Err(invalid(name, "need at least one positive τ"));
            }
        }
        if self.smoothing.grid_points < 2 || !(self.smoothing.grid_hi > self.smoothing.grid_lo) {
            return Err(invalid("smoothing.grid_points", "need two points and grid_hi > grid_lo"));
        }
        if self.density.steps < 5 {
            return Err(invalid("density.steps", "need at least 5 transitions for the critic"));
        }
        if !(self.density.small_threshold > 0.0) {
            return Err(invalid("density.small_threshold", "must be positive"));
        }
        Ok(())
    }
}
