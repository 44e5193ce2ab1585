//! Target choice, update strategies and the safe iteration loop.
//!
//! Each iteration evaluates the current pair exactly, picks a policy target
//! and a model target, and moves toward them with the step sizes that
//! maximize the decoupled lower bound:
//!
//! ```text
//! π ← α π̄ + (1-α) π        P ← β P̄ + (1-β) P
//! ```
//!
//! In a convex-hull model space the model targets are vertices and the hull
//! coefficients are tracked explicitly: `ω ← β e_target + (1-β) ω`.

use serde::Deserialize;

use crate::advantage::vertex_advantages_from;
use crate::bounds::{
    decoupled_bound_terms, optimal_coefficients_with, BoundVariant, CandidateKind, UpdateSides,
};
use crate::envs::{Environment, ModelSpace};
use crate::error::{ConfMdpError, Result};
use crate::mdp::{evaluate, Evaluation, Policy, TransitionModel, ValueFunctions};

/// Advantages at or below this count as non-positive even when `ε = 0`.
pub const EPSILON_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Greedy policy and model w.r.t. the current `Q` and `U`.
    #[default]
    Greedy,
    /// Keep the previous target while its bound beats the greedy one.
    Persistent,
}

impl TargetMode {
    pub fn name(self) -> &'static str {
        match self {
            TargetMode::Greedy => "greedy",
            TargetMode::Persistent => "persistent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Joint policy and model updates.
    #[default]
    Spmi,
    /// Joint updates with `D_∞` in place of every `D_E`.
    SpmiSup,
    /// Joint targets, but each update moves only one side, alternating.
    SpmiAlt,
    /// Policy updates only.
    Spi,
    /// Model updates only.
    Smi,
    /// Policy updates to convergence, then model updates.
    SpiThenSmi,
    /// Model updates to convergence, then policy updates.
    SmiThenSpi,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Spmi,
        Strategy::SpmiSup,
        Strategy::SpmiAlt,
        Strategy::Spi,
        Strategy::Smi,
        Strategy::SpiThenSmi,
        Strategy::SmiThenSpi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Spmi => "spmi",
            Strategy::SpmiSup => "spmi_sup",
            Strategy::SpmiAlt => "spmi_alt",
            Strategy::Spi => "spi",
            Strategy::Smi => "smi",
            Strategy::SpiThenSmi => "spi_then_smi",
            Strategy::SmiThenSpi => "smi_then_spi",
        }
    }

    fn phases(self) -> Vec<StepMode> {
        use UpdateSides::*;
        let fixed = |sides| StepMode {
            sides: Sides::Fixed(sides),
            variant: BoundVariant::Expected,
        };
        match self {
            Strategy::Spmi => vec![fixed(Both)],
            Strategy::SpmiSup => vec![StepMode {
                sides: Sides::Fixed(Both),
                variant: BoundVariant::Sup,
            }],
            Strategy::SpmiAlt => vec![StepMode {
                sides: Sides::Alternating,
                variant: BoundVariant::Expected,
            }],
            Strategy::Spi => vec![fixed(PolicyOnly)],
            Strategy::Smi => vec![fixed(ModelOnly)],
            Strategy::SpiThenSmi => vec![fixed(PolicyOnly), fixed(ModelOnly)],
            Strategy::SmiThenSpi => vec![fixed(ModelOnly), fixed(PolicyOnly)],
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = ConfMdpError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| ConfMdpError::Usage(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            epsilon: 0.0,
            max_iterations: 100_000,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    fn threshold(&self) -> f64 {
        self.epsilon.max(EPSILON_FLOOR)
    }
}

/// Which sides an iteration may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sides {
    Fixed(UpdateSides),
    /// Policy and model in turn, starting with the policy.
    Alternating,
}

impl Sides {
    fn policy_active(self) -> bool {
        !matches!(self, Sides::Fixed(UpdateSides::ModelOnly))
    }

    fn model_active(self) -> bool {
        !matches!(self, Sides::Fixed(UpdateSides::PolicyOnly))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepMode {
    pub sides: Sides,
    pub variant: BoundVariant,
}

/// A model target, with its vertex index in convex-hull spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTarget {
    pub model: TransitionModel,
    pub vertex: Option<usize>,
}

/// Target-choice mode plus the targets it remembers.
#[derive(Debug, Clone, Default)]
pub struct TargetChoice {
    pub mode: TargetMode,
    pub previous_policy_target: Option<Policy>,
    pub previous_model_target: Option<ModelTarget>,
}

impl TargetChoice {
    pub fn new(mode: TargetMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

/// The pair being improved, plus the hull coefficients of its model.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub policy: Policy,
    pub model: TransitionModel,
    pub omega: Option<Vec<f64>>,
    /// Side the next alternating update tries first.
    pub alternate_policy_next: bool,
}

impl SolverState {
    pub fn initial(env: &Environment) -> Result<Self> {
        Ok(Self {
            policy: env.initial_policy()?,
            model: env.initial_model.clone(),
            omega: env.initial_omega.clone(),
            alternate_policy_next: true,
        })
    }
}

/// One row of the iteration log. `j`, the advantages, dissimilarities and
/// `omega` describe the pair at the start of the iteration; `alpha`, `beta`
/// and `bound_value` the update taken from it.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub j: f64,
    pub alpha: f64,
    pub beta: f64,
    pub adv_policy: f64,
    pub adv_model: f64,
    pub bound_value: f64,
    pub d_e_pi: f64,
    pub d_inf_pi: f64,
    pub d_e_p: f64,
    pub d_inf_p: f64,
    pub omega: Option<Vec<f64>>,
    pub target_policy_id: String,
    pub target_model_id: String,
    /// Set on the last row of a run: no update was taken.
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Every active expected advantage is at most `ε`.
    Converged,
    /// Advantages remain but no candidate step has a positive bound.
    NoPositiveBound,
}

#[derive(Debug, Clone)]
pub struct Step {
    pub record: IterationRecord,
    /// The updated pair, or `None` when the iteration stopped the run.
    pub next: Option<SolverState>,
    pub stop: Option<StopReason>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<IterationRecord>,
    pub policy: Policy,
    pub model: TransitionModel,
    pub omega: Option<Vec<f64>>,
    pub converged: bool,
    /// `max_iterations` was reached before convergence.
    pub truncated: bool,
}

impl RunResult {
    pub fn final_j(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.j)
    }

    /// Number of updates actually applied.
    pub fn updates(&self) -> usize {
        self.records.iter().filter(|r| !r.terminal).count()
    }
}

/// Deterministic policy on `argmax_a Q(s, a)` over each state's allowed
/// actions; ties go to the lowest action index.
pub fn greedy_policy_target(vf: &ValueFunctions, current: &Policy) -> Result<Policy> {
    let (ns, na) = (current.n_states(), current.n_actions());
    let mut actions = Vec::with_capacity(ns);
    for s in 0..ns {
        let best = argmax((0..na).filter(|&a| current.allowed(s, a)), |a| vf.q(s, a)).ok_or_else(
            || ConfMdpError::Structural(format!("state {s} has an empty action support")),
        )?;
        actions.push(best);
    }
    let support = current.support().map(<[bool]>::to_vec);
    Policy::deterministic(ns, na, &actions, support)
}

/// Deterministic model on `argmax_{s'} U(s, a, s')` over allowed next
/// states; ties go to the lowest state index.
pub fn greedy_model_target_unconstrained(
    vf: &ValueFunctions,
    n_states: usize,
    n_actions: usize,
    support: Option<&[bool]>,
) -> Result<TransitionModel> {
    let mut p = vec![0.0; n_states * n_actions * n_states];
    for s in 0..n_states {
        for a in 0..n_actions {
            let base = (s * n_actions + a) * n_states;
            let u = vf.u_row(s, a);
            let best = argmax(
                (0..n_states).filter(|&s2| support.map_or(true, |m| m[base + s2])),
                |s2| u[s2],
            )
            .ok_or_else(|| {
                ConfMdpError::Structural(format!("({s}, {a}) has an empty next-state support"))
            })?;
            p[base + best] = 1.0;
        }
    }
    TransitionModel::new(n_states, n_actions, p)
}

/// Index of the vertex with the largest expected relative advantage; ties go
/// to the lowest index.
pub fn greedy_model_target_parametric(
    ev: &Evaluation,
    vertices: &[TransitionModel],
) -> Result<usize> {
    let adv = vertex_advantages_from(ev, vertices);
    argmax(0..adv.len(), |i| adv[i])
        .ok_or_else(|| ConfMdpError::Structural("model space has no vertices".into()))
}

fn argmax(items: impl Iterator<Item = usize>, key: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in items {
        let k = key(i);
        if best.map_or(true, |(_, bk)| k > bk) {
            best = Some((i, k));
        }
    }
    best.map(|(i, _)| i)
}

/// Greedy target, or the previous one when its bound is strictly larger.
pub fn persistent_target<T: Clone + PartialEq>(
    mode: TargetMode,
    greedy: T,
    previous: Option<&T>,
    mut bound: impl FnMut(&T) -> Result<f64>,
) -> Result<T> {
    match (mode, previous) {
        (TargetMode::Persistent, Some(prev)) if *prev != greedy => {
            if bound(prev)? > bound(&greedy)? {
                Ok(prev.clone())
            } else {
                Ok(greedy)
            }
        }
        _ => Ok(greedy),
    }
}

fn fnv1a(values: &[f64]) -> u64 {
    values.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, x| {
        x.to_bits()
            .to_le_bytes()
            .iter()
            .fold(h, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
    })
}

fn policy_id(pi: &Policy, active: bool) -> String {
    if active {
        format!("pi-{:016x}", fnv1a(pi.as_slice()))
    } else {
        "current".into()
    }
}

fn model_id(target: &ModelTarget, active: bool) -> String {
    match (active, target.vertex) {
        (false, _) => "current".into(),
        (true, Some(i)) => format!("v{i}"),
        (true, None) => format!("p-{:016x}", fnv1a(target.model.as_slice())),
    }
}

/// One iteration: choose targets, maximize the bound, apply the update.
pub fn spmi_step(
    env: &Environment,
    state: &SolverState,
    mode: StepMode,
    choice: &mut TargetChoice,
    iteration: usize,
    threshold: f64,
) -> Result<Step> {
    let mdp = &env.mdp;
    let gamma = mdp.gamma();
    let ev = evaluate(mdp, &state.model, &state.policy)?;
    let policy_active = mode.sides.policy_active();
    let model_active = mode.sides.model_active();

    let greedy_pi = if policy_active {
        greedy_policy_target(&ev.values, &state.policy)?
    } else {
        state.policy.clone()
    };
    let greedy_p = if !model_active {
        ModelTarget {
            model: state.model.clone(),
            vertex: None,
        }
    } else {
        match &env.model_space {
            ModelSpace::Unconstrained { support } => ModelTarget {
                model: greedy_model_target_unconstrained(
                    &ev.values,
                    mdp.n_states(),
                    mdp.n_actions(),
                    support.as_deref(),
                )?,
                vertex: None,
            },
            ModelSpace::ConvexHull { vertices } => {
                let i = greedy_model_target_parametric(&ev, vertices)?;
                ModelTarget {
                    model: vertices[i].clone(),
                    vertex: Some(i),
                }
            }
        }
    };

    let score_sides = match mode.sides {
        Sides::Fixed(s) => s,
        Sides::Alternating => UpdateSides::Both,
    };
    let score = |pi_t: &Policy, p_t: &TransitionModel| -> Result<f64> {
        let t = decoupled_bound_terms(mdp, &ev, &state.model, &state.policy, p_t, pi_t)?;
        Ok(
            optimal_coefficients_with(&t, gamma, mode.variant, score_sides)
                .chosen
                .value,
        )
    };
    let pi_target = if policy_active {
        persistent_target(
            choice.mode,
            greedy_pi,
            choice.previous_policy_target.as_ref(),
            |t| score(t, &greedy_p.model),
        )?
    } else {
        greedy_pi
    };
    let p_target = if model_active {
        persistent_target(
            choice.mode,
            greedy_p,
            choice.previous_model_target.as_ref(),
            |t| score(&pi_target, &t.model),
        )?
    } else {
        greedy_p
    };

    let terms = decoupled_bound_terms(
        mdp,
        &ev,
        &state.model,
        &state.policy,
        &p_target.model,
        &pi_target,
    )?;
    let (coeffs, used_policy_side) = match mode.sides {
        Sides::Fixed(s) => (
            optimal_coefficients_with(&terms, gamma, mode.variant, s),
            None,
        ),
        Sides::Alternating => {
            let (first, second) = if state.alternate_policy_next {
                (UpdateSides::PolicyOnly, UpdateSides::ModelOnly)
            } else {
                (UpdateSides::ModelOnly, UpdateSides::PolicyOnly)
            };
            let c = optimal_coefficients_with(&terms, gamma, mode.variant, first);
            if c.chosen.kind == CandidateKind::NoUpdate {
                let c2 = optimal_coefficients_with(&terms, gamma, mode.variant, second);
                (c2, Some(second == UpdateSides::PolicyOnly))
            } else {
                (c, Some(first == UpdateSides::PolicyOnly))
            }
        }
    };

    let converged = (!policy_active || terms.adv_policy <= threshold)
        && (!model_active || terms.adv_model <= threshold);
    let stop = if converged {
        Some(StopReason::Converged)
    } else if coeffs.chosen.kind == CandidateKind::NoUpdate {
        Some(StopReason::NoPositiveBound)
    } else {
        None
    };
    let (alpha, beta, bound_value) = match stop {
        Some(_) => (0.0, 0.0, 0.0),
        None => (coeffs.chosen.alpha, coeffs.chosen.beta, coeffs.chosen.value),
    };

    let d = terms.dissim;
    let record = IterationRecord {
        iteration,
        j: ev.j,
        alpha,
        beta,
        adv_policy: terms.adv_policy,
        adv_model: terms.adv_model,
        bound_value,
        d_e_pi: d.d_e_pi,
        d_inf_pi: d.d_inf_pi,
        d_e_p: d.d_e_p,
        d_inf_p: d.d_inf_p,
        omega: state.omega.clone(),
        target_policy_id: policy_id(&pi_target, policy_active),
        target_model_id: model_id(&p_target, model_active),
        terminal: stop.is_some(),
    };

    if policy_active {
        choice.previous_policy_target = Some(pi_target.clone());
    }
    if model_active {
        choice.previous_model_target = Some(p_target.clone());
    }
    if stop.is_some() {
        return Ok(Step {
            record,
            next: None,
            stop,
        });
    }

    let policy = state.policy.mix(&pi_target, alpha)?;
    let (model, omega) = match (&state.omega, &env.model_space, p_target.vertex) {
        (Some(omega), ModelSpace::ConvexHull { vertices }, Some(target)) if beta > 0.0 => {
            let omega: Vec<f64> = omega
                .iter()
                .enumerate()
                .map(|(i, &w)| (1.0 - beta) * w + if i == target { beta } else { 0.0 })
                .collect();
            (
                TransitionModel::combine_unchecked(vertices, &omega),
                Some(omega),
            )
        }
        (Some(_), _, None) if beta > 0.0 => {
            return Err(ConfMdpError::Structural(
                "parametric update toward a non-vertex model".into(),
            ))
        }
        _ => (state.model.mix(&p_target.model, beta)?, state.omega.clone()),
    };
    let alternate_policy_next = match used_policy_side {
        Some(policy_side) => !policy_side,
        None => state.alternate_policy_next,
    };
    Ok(Step {
        record,
        next: Some(SolverState {
            policy,
            model,
            omega,
            alternate_policy_next,
        }),
        stop: None,
    })
}

/// Runs a strategy from the environment's initial pair.
pub fn run(env: &Environment, config: &StrategyConfig, mode: TargetMode) -> Result<RunResult> {
    run_from(env, config, mode, SolverState::initial(env)?)
}

/// Runs a strategy from a given pair.
///
/// Two-phase strategies run their first phase to its own stopping point,
/// drop that phase's terminal row and continue with the second phase; the
/// iteration budget is shared. When the budget runs out a terminal row for
/// the final pair is still appended.
pub fn run_from(
    env: &Environment,
    config: &StrategyConfig,
    mode: TargetMode,
    initial: SolverState,
) -> Result<RunResult> {
    let gamma = env.mdp.gamma();
    if !(gamma < 1.0) {
        return Err(ConfMdpError::Structural(format!(
            "safe iteration needs gamma < 1, got {gamma}"
        )));
    }
    if config.epsilon < 0.0 || !config.epsilon.is_finite() {
        return Err(ConfMdpError::Structural(
            "epsilon must be finite and >= 0".into(),
        ));
    }
    let threshold = config.threshold();
    let phases = config.strategy.phases();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut state = initial;
    let mut iteration = 0;
    let mut converged = false;
    let mut truncated = false;

    for (k, phase) in phases.iter().enumerate() {
        let last_phase = k + 1 == phases.len();
        let mut choice = TargetChoice::new(mode);
        loop {
            let step =
                spmi_step(env, &state, *phase, &mut choice, iteration, threshold).map_err(|e| {
                    ConfMdpError::Solver {
                        iteration,
                        source: Box::new(e),
                    }
                })?;
            if step.stop.is_some() {
                converged = step.stop == Some(StopReason::Converged);
                if last_phase {
                    records.push(step.record);
                }
                break;
            }
            if iteration >= config.max_iterations {
                let mut record = step.record;
                record.alpha = 0.0;
                record.beta = 0.0;
                record.bound_value = 0.0;
                record.terminal = true;
                records.push(record);
                truncated = true;
                break;
            }
            records.push(step.record);
            state = step.next.expect("non-terminal step yields a state");
            iteration += 1;
        }
        if truncated {
            converged = false;
            break;
        }
    }

    Ok(RunResult {
        records,
        policy: state.policy,
        model: state.model,
        omega: state.omega,
        converged,
        truncated,
    })
}
