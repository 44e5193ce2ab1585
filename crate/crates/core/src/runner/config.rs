//! TOML run configurations.
//!
//! ```toml
//! strategy = "spmi"            # spmi | spmi_sup | spmi_alt | spi | smi | spi_then_smi | smi_then_spi
//! target_mode = "persistent"   # greedy | persistent
//! epsilon = 0.0
//! max_iterations = 50000
//! gamma = 0.99                 # environment default when omitted
//! delta_q = "computed"         # or a constant; environment default when omitted
//! output_dir = "out/st"        # relative to this file
//! seed = 0
//!
//! [environment]
//! type = "student_teacher"
//! n_literals = 2
//! max_value = 1
//! max_update = 1
//! max_statement_literals = 2
//! ```
//!
//! Unknown keys are rejected. Relative paths resolve against the directory
//! holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::algorithm::{Strategy, StrategyConfig, TargetMode};
use crate::envs::racetrack::{
    build_racetrack, BoostParams, Grid, RacetrackSpec, StabilityParams, Vertex,
    DEFAULT_SPEED_THRESHOLD, DEFAULT_V_MAX, DEFAULT_V_MIN,
};
use crate::envs::random::{build_random, RandomSpec};
use crate::envs::student_teacher::{build_student_teacher, StudentTeacherSpec};
use crate::envs::two_chain::{build_two_chain, TwoChainSpec};
use crate::envs::{Environment, ModelSpace, PolicySpace};
use crate::error::{ConfMdpError, Result};
use crate::mdp::{horizon_constant, DeltaQMode};

pub const DEFAULT_MAX_ITERATIONS: usize = 100_000;
pub const STUDENT_TEACHER_MAX_ITERATIONS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaQSetting {
    Constant(f64),
    Computed,
}

impl DeltaQSetting {
    pub fn mode(self) -> DeltaQMode {
        match self {
            DeltaQSetting::Constant(c) => DeltaQMode::Constant(c),
            DeltaQSetting::Computed => DeltaQMode::ComputedSup,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvironmentConfig {
    StudentTeacher {
        n_literals: usize,
        max_value: usize,
        max_update: usize,
        max_statement_literals: usize,
        horizon: u32,
    },
    Racetrack {
        /// Resolved track path.
        track: PathBuf,
        vertices: Vec<Vertex>,
        v_min: i32,
        v_max: i32,
        speed_threshold: i32,
        stability: StabilityParams,
        boost: BoostParams,
        initial_omega: Option<Vec<f64>>,
    },
    TwoChain {
        p: f64,
        /// Initial hull coefficient on the first vertex.
        omega: f64,
    },
    Random {
        n_states: usize,
        n_actions: usize,
        density: f64,
        /// 0 for an unconstrained model space.
        n_vertices: usize,
    },
}

impl EnvironmentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvironmentConfig::StudentTeacher { .. } => "student_teacher",
            EnvironmentConfig::Racetrack { .. } => "racetrack",
            EnvironmentConfig::TwoChain { .. } => "two_chain",
            EnvironmentConfig::Random { .. } => "random",
        }
    }

    fn default_gamma(&self) -> f64 {
        match self {
            EnvironmentConfig::StudentTeacher { .. } => 0.99,
            EnvironmentConfig::Racetrack { .. } | EnvironmentConfig::TwoChain { .. } => 0.9,
            EnvironmentConfig::Random { .. } => 0.95,
        }
    }

    fn default_delta_q(&self, gamma: f64) -> DeltaQSetting {
        match self {
            EnvironmentConfig::StudentTeacher { horizon, .. } => {
                DeltaQSetting::Constant(horizon_constant(gamma, *horizon))
            }
            EnvironmentConfig::Racetrack { .. } => DeltaQSetting::Constant(1.0),
            EnvironmentConfig::TwoChain { .. } | EnvironmentConfig::Random { .. } => {
                DeltaQSetting::Computed
            }
        }
    }

    fn default_max_iterations(&self) -> usize {
        match self {
            EnvironmentConfig::StudentTeacher { .. } => STUDENT_TEACHER_MAX_ITERATIONS,
            _ => DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// A fully validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub environment: EnvironmentConfig,
    pub strategy: Strategy,
    pub target_mode: TargetMode,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub gamma: f64,
    pub delta_q: DeltaQSetting,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    /// Defaults for everything but the environment.
    pub fn new(environment: EnvironmentConfig) -> Self {
        let gamma = environment.default_gamma();
        Self {
            strategy: Strategy::default(),
            target_mode: TargetMode::default(),
            epsilon: 0.0,
            max_iterations: environment.default_max_iterations(),
            gamma,
            delta_q: environment.default_delta_q(gamma),
            output_dir: PathBuf::from("output"),
            seed: 0,
            environment,
        }
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig::new(self.strategy)
            .with_epsilon(self.epsilon)
            .with_max_iterations(self.max_iterations)
    }

    /// Builds the configured instance.
    pub fn build_environment(&self) -> Result<Environment> {
        let delta_q = self.delta_q.mode();
        match &self.environment {
            EnvironmentConfig::StudentTeacher {
                n_literals,
                max_value,
                max_update,
                max_statement_literals,
                horizon,
            } => {
                let mut spec = StudentTeacherSpec::new(
                    *n_literals,
                    *max_value,
                    *max_update,
                    *max_statement_literals,
                );
                spec.horizon = *horizon;
                spec.gamma = self.gamma;
                let mut env = build_student_teacher(&spec)?.env;
                env.mdp = env.mdp.with_delta_q(delta_q);
                Ok(env)
            }
            EnvironmentConfig::Racetrack {
                track,
                vertices,
                v_min,
                v_max,
                speed_threshold,
                stability,
                boost,
                initial_omega,
            } => {
                let mut spec = RacetrackSpec::new(Grid::load(track)?, vertices.clone());
                spec.v_min = *v_min;
                spec.v_max = *v_max;
                spec.speed_threshold = *speed_threshold;
                spec.stability = *stability;
                spec.boost = *boost;
                spec.gamma = self.gamma;
                spec.delta_q = delta_q;
                spec.initial_omega = initial_omega.clone();
                Ok(build_racetrack(&spec)?.env)
            }
            EnvironmentConfig::TwoChain { p, omega } => {
                let chain = build_two_chain(&TwoChainSpec {
                    p: *p,
                    gamma: self.gamma,
                })?;
                let mut env = chain.environment(*omega)?;
                env.mdp = env.mdp.with_delta_q(delta_q);
                Ok(env)
            }
            EnvironmentConfig::Random {
                n_states,
                n_actions,
                density,
                n_vertices,
            } => {
                let inst = build_random(
                    &RandomSpec::new(self.seed, *n_states, *n_actions, *density)
                        .with_gamma(self.gamma)
                        .with_vertices(*n_vertices),
                );
                let (model_space, initial_model, initial_omega) = match inst.hull_model() {
                    Some(m) => (
                        ModelSpace::ConvexHull {
                            vertices: inst.vertices.clone(),
                        },
                        m,
                        Some(inst.omega.clone()),
                    ),
                    None => (
                        ModelSpace::Unconstrained { support: None },
                        inst.model.clone(),
                        None,
                    ),
                };
                Ok(Environment {
                    name: format!("random seed {}", self.seed),
                    mdp: inst.mdp.with_delta_q(delta_q),
                    policy_space: PolicySpace::default(),
                    model_space,
                    initial_model,
                    initial_omega,
                })
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawDeltaQ {
    Value(f64),
    Name(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    environment: RawEnvironment,
    strategy: Option<Strategy>,
    target_mode: Option<TargetMode>,
    epsilon: Option<f64>,
    max_iterations: Option<usize>,
    gamma: Option<f64>,
    delta_q: Option<RawDeltaQ>,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum RawEnvironment {
    StudentTeacher(RawStudentTeacher),
    Racetrack(RawRacetrack),
    TwoChain(RawTwoChain),
    Random(RawRandom),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStudentTeacher {
    n_literals: usize,
    max_value: usize,
    max_update: usize,
    max_statement_literals: usize,
    #[serde(default = "default_horizon")]
    horizon: u32,
}

fn default_horizon() -> u32 {
    10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRacetrack {
    track: PathBuf,
    #[serde(default = "default_vertices")]
    vertices: Vec<Vertex>,
    v_min: Option<i32>,
    v_max: Option<i32>,
    speed_threshold: Option<i32>,
    #[serde(default)]
    stability: StabilityParams,
    #[serde(default)]
    boost: BoostParams,
    initial_omega: Option<Vec<f64>>,
}

fn default_vertices() -> Vec<Vertex> {
    vec![Vertex::HsNb, Vertex::LsNb]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTwoChain {
    #[serde(default = "default_chain_p")]
    p: f64,
    #[serde(default)]
    omega: f64,
}

fn default_chain_p() -> f64 {
    0.1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRandom {
    n_states: usize,
    n_actions: usize,
    #[serde(default = "default_density")]
    density: f64,
    #[serde(default)]
    n_vertices: usize,
}

fn default_density() -> f64 {
    0.6
}

fn check_probability(key: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(ConfMdpError::config(
            key,
            format!("must lie in [0, 1], got {x}"),
        ))
    }
}

fn convert_environment(raw: RawEnvironment, base: &Path) -> Result<EnvironmentConfig> {
    Ok(match raw {
        RawEnvironment::StudentTeacher(st) => EnvironmentConfig::StudentTeacher {
            n_literals: st.n_literals,
            max_value: st.max_value,
            max_update: st.max_update,
            max_statement_literals: st.max_statement_literals,
            horizon: st.horizon,
        },
        RawEnvironment::Racetrack(rt) => {
            let track = base.join(&rt.track);
            if !track.is_file() {
                return Err(ConfMdpError::config(
                    "environment.track",
                    format!("no such file {}", track.display()),
                ));
            }
            if rt.vertices.is_empty() {
                return Err(ConfMdpError::config(
                    "environment.vertices",
                    "at least one vertex is required",
                ));
            }
            EnvironmentConfig::Racetrack {
                track,
                vertices: rt.vertices,
                v_min: rt.v_min.unwrap_or(DEFAULT_V_MIN),
                v_max: rt.v_max.unwrap_or(DEFAULT_V_MAX),
                speed_threshold: rt.speed_threshold.unwrap_or(DEFAULT_SPEED_THRESHOLD),
                stability: rt.stability,
                boost: rt.boost,
                initial_omega: rt.initial_omega,
            }
        }
        RawEnvironment::TwoChain(tc) => {
            check_probability("environment.p", tc.p)?;
            check_probability("environment.omega", tc.omega)?;
            EnvironmentConfig::TwoChain {
                p: tc.p,
                omega: tc.omega,
            }
        }
        RawEnvironment::Random(r) => {
            if r.n_states == 0 {
                return Err(ConfMdpError::config(
                    "environment.n_states",
                    "must be positive",
                ));
            }
            if r.n_actions == 0 {
                return Err(ConfMdpError::config(
                    "environment.n_actions",
                    "must be positive",
                ));
            }
            if !(r.density > 0.0 && r.density <= 1.0) {
                return Err(ConfMdpError::config(
                    "environment.density",
                    format!("must lie in (0, 1], got {}", r.density),
                ));
            }
            EnvironmentConfig::Random {
                n_states: r.n_states,
                n_actions: r.n_actions,
                density: r.density,
                n_vertices: r.n_vertices,
            }
        }
    })
}

/// Parses and validates configuration text; `base` anchors relative paths.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig> {
    let value: toml::Value =
        toml::from_str(text).map_err(|e| ConfMdpError::config("", e.message()))?;
    let raw: RawConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let key = e.path().to_string();
        ConfMdpError::config(
            if key == "." { String::new() } else { key },
            e.into_inner().to_string(),
        )
    })?;

    let environment = convert_environment(raw.environment, base)?;
    let mut config = RunConfig::new(environment);
    if let Some(gamma) = raw.gamma {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(ConfMdpError::config(
                "gamma",
                format!("must lie in (0, 1), got {gamma}"),
            ));
        }
        config.gamma = gamma;
        config.delta_q = config.environment.default_delta_q(gamma);
    }
    if let Some(dq) = raw.delta_q {
        config.delta_q = match dq {
            RawDeltaQ::Value(c) if c >= 0.0 && c.is_finite() => DeltaQSetting::Constant(c),
            RawDeltaQ::Value(c) => {
                return Err(ConfMdpError::config(
                    "delta_q",
                    format!("must be finite and >= 0, got {c}"),
                ))
            }
            RawDeltaQ::Name(s) if s == "computed" => DeltaQSetting::Computed,
            RawDeltaQ::Name(s) => {
                return Err(ConfMdpError::config(
                    "delta_q",
                    format!("expected a number or \"computed\", got \"{s}\""),
                ))
            }
        };
    }
    if let Some(eps) = raw.epsilon {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(ConfMdpError::config(
                "epsilon",
                format!("must be finite and >= 0, got {eps}"),
            ));
        }
        config.epsilon = eps;
    }
    if let Some(n) = raw.max_iterations {
        if n == 0 {
            return Err(ConfMdpError::config("max_iterations", "must be positive"));
        }
        config.max_iterations = n;
    }
    if let Some(s) = raw.strategy {
        config.strategy = s;
    }
    if let Some(m) = raw.target_mode {
        config.target_mode = m;
    }
    if let Some(dir) = raw.output_dir {
        config.output_dir = dir;
    }
    config.output_dir = base.join(&config.output_dir);
    if let Some(seed) = raw.seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| ConfMdpError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_config_str(&text, base)
}
