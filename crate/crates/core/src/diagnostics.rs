//! Numerical oracles for the model-gradient identities, the performance-gap
//! bound and the premetric property, plus the `verify` suite.
//!
//! Derivatives are compared against central finite differences with step
//! [`FD_STEP`]. A match means `|analytic - numeric| <= FD_RTOL·|numeric| +
//! FD_ATOL`; the absolute floor only matters where the derivative itself
//! vanishes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::advantage::{model_relative_advantage, return_scale, vertex_advantages_from};
use crate::algorithm::{run, Strategy, StrategyConfig, TargetMode};
use crate::bounds::{model_dissimilarity, policy_dissimilarity};
use crate::envs::random::{build_random, RandomSpec};
use crate::envs::two_chain::{build_two_chain, TwoChainSpec};
use crate::envs::{Environment, ModelSpace, PolicySpace};
use crate::error::{ConfMdpError, Result};
use crate::mdp::{evaluate, Evaluation, Policy, TabularConfMdp, TransitionModel};

pub const FD_STEP: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-6;
pub const FD_ATOL: f64 = 1e-9;

/// Largest vertex advantage still treated as non-positive.
pub const GAP_PRECONDITION_TOL: f64 = 1e-9;

pub const PREMETRIC_TOL: f64 = 1e-10;

pub fn fd_matches(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= FD_RTOL * numeric.abs() + FD_ATOL
}

/// `∇_ω J` at a hull point in two parameterizations.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    /// `1/(1-γ) Σ δ(s,a) Σ_{s'} P_i(s'|s,a) U(s,a,s')`: the free-coordinate
    /// gradient, defined up to an additive constant on the simplex.
    pub free: Vec<f64>,
    /// Derivative along `e_i - ω` from the free gradient.
    pub directional: Vec<f64>,
    /// The same derivative in advantage form, `𝔸_i / (1-γ)`.
    pub advantage_form: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_abs_error: f64,
}

impl GradientReport {
    fn new(analytic: Vec<f64>, numeric: Vec<f64>) -> Self {
        let max_abs_error = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        Self {
            analytic,
            numeric,
            max_abs_error,
        }
    }

    pub fn within_tolerance(&self) -> bool {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .all(|(&a, &n)| fd_matches(a, n))
    }
}

fn check_hull(mdp: &TabularConfMdp, vertices: &[TransitionModel], weights: &[f64]) -> Result<()> {
    if vertices.is_empty() {
        return Err(ConfMdpError::Structural("no vertex models".into()));
    }
    if weights.len() != vertices.len() {
        return Err(ConfMdpError::Dimension(format!(
            "{} weights for {} vertices",
            weights.len(),
            vertices.len()
        )));
    }
    if let Some(i) = vertices
        .iter()
        .position(|v| v.n_states() != mdp.n_states() || v.n_actions() != mdp.n_actions())
    {
        return Err(ConfMdpError::Dimension(format!(
            "vertex {i} has the wrong shape"
        )));
    }
    Ok(())
}

fn free_gradient(ev: &Evaluation, gamma: f64, vertices: &[TransitionModel]) -> Vec<f64> {
    let vf = &ev.values;
    let ns = vf.v.len();
    let na = vf.q.len() / ns;
    vertices
        .iter()
        .map(|p_i| {
            let mut acc = 0.0;
            for s in 0..ns {
                for a in 0..na {
                    let w = ev.occupancy.state_action(s, a);
                    if w == 0.0 {
                        continue;
                    }
                    let inner: f64 = p_i
                        .row(s, a)
                        .iter()
                        .zip(vf.u_row(s, a))
                        .map(|(p, u)| p * u)
                        .sum();
                    acc += w * inner;
                }
            }
            acc / (1.0 - gamma)
        })
        .collect()
}

/// Gradient of `J` w.r.t. the hull coefficients `omega` of `vertices`.
pub fn model_gradient(
    mdp: &TabularConfMdp,
    pi: &Policy,
    vertices: &[TransitionModel],
    omega: &[f64],
) -> Result<ModelGradient> {
    check_hull(mdp, vertices, omega)?;
    let p = TransitionModel::convex_combination(vertices, omega)?;
    let ev = evaluate(mdp, &p, pi)?;
    let gamma = mdp.gamma();
    let free = free_gradient(&ev, gamma, vertices);
    let gauge: f64 = free.iter().zip(omega).map(|(g, w)| g * w).sum();
    let directional = free.iter().map(|g| g - gauge).collect();
    let advantage_form = vertex_advantages_from(&ev, vertices)
        .into_iter()
        .map(|a| return_scale(gamma, a))
        .collect();
    Ok(ModelGradient {
        free,
        directional,
        advantage_form,
    })
}

fn j_at(
    mdp: &TabularConfMdp,
    pi: &Policy,
    vertices: &[TransitionModel],
    weights: &[f64],
) -> Result<f64> {
    Ok(evaluate(
        mdp,
        &TransitionModel::combine_unchecked(vertices, weights),
        pi,
    )?
    .j)
}

/// Analytic directional derivatives along `e_i - ω` against central finite
/// differences of `J(ω + t (e_i - ω))`.
pub fn gradient_check(
    mdp: &TabularConfMdp,
    pi: &Policy,
    vertices: &[TransitionModel],
    omega: &[f64],
) -> Result<GradientReport> {
    let grad = model_gradient(mdp, pi, vertices, omega)?;
    let mut numeric = Vec::with_capacity(vertices.len());
    for i in 0..vertices.len() {
        let shifted = |t: f64| -> Vec<f64> {
            omega
                .iter()
                .enumerate()
                .map(|(j, &w)| w + t * (if i == j { 1.0 } else { 0.0 } - w))
                .collect()
        };
        let plus = j_at(mdp, pi, vertices, &shifted(FD_STEP))?;
        let minus = j_at(mdp, pi, vertices, &shifted(-FD_STEP))?;
        numeric.push((plus - minus) / (2.0 * FD_STEP));
    }
    Ok(GradientReport::new(grad.directional, numeric))
}

/// `∂J/∂β` at `β = 0` for `P' = β Σ η_i P_i + (1-β) P`: `Σ η_i 𝔸_i / (1-γ)`.
pub fn beta_derivative(
    mdp: &TabularConfMdp,
    p: &TransitionModel,
    pi: &Policy,
    vertices: &[TransitionModel],
    eta: &[f64],
) -> Result<f64> {
    check_hull(mdp, vertices, eta)?;
    let ev = evaluate(mdp, p, pi)?;
    let adv = vertex_advantages_from(&ev, vertices);
    Ok(return_scale(
        mdp.gamma(),
        adv.iter().zip(eta).map(|(a, e)| a * e).sum(),
    ))
}

/// Central finite difference of `J` along `β` at `β = 0`.
pub fn beta_derivative_numeric(
    mdp: &TabularConfMdp,
    p: &TransitionModel,
    pi: &Policy,
    vertices: &[TransitionModel],
    eta: &[f64],
) -> Result<f64> {
    check_hull(mdp, vertices, eta)?;
    let target = TransitionModel::combine_unchecked(vertices, eta);
    let at = |beta: f64| -> Result<f64> {
        let mixed =
            TransitionModel::combine_unchecked(&[target.clone(), p.clone()], &[beta, 1.0 - beta]);
        Ok(evaluate(mdp, &mixed, pi)?.j)
    };
    Ok((at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP))
}

/// Upper bound on `J(P_ω*) - J(P̄)` at a point whose vertex advantages are
/// all non-positive: `1/(1-γ) max_{s,a} max_i A^{P_i}(s,a)`.
pub fn performance_gap_bound(
    mdp: &TabularConfMdp,
    p_bar: &TransitionModel,
    pi: &Policy,
    vertices: &[TransitionModel],
) -> Result<f64> {
    if vertices.is_empty() {
        return Err(ConfMdpError::Structural("no vertex models".into()));
    }
    let ev = evaluate(mdp, p_bar, pi)?;
    let adv = vertex_advantages_from(&ev, vertices);
    if let Some((i, a)) = adv
        .iter()
        .enumerate()
        .find(|(_, &a)| a > GAP_PRECONDITION_TOL)
    {
        return Err(ConfMdpError::Diagnostic(format!(
            "vertex {i} has positive expected advantage {a:e}"
        )));
    }
    let sup = vertices
        .iter()
        .flat_map(|v| model_relative_advantage(&ev, v))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(sup / (1.0 - mdp.gamma()))
}

/// If both expected dissimilarities of `b` from `a` vanish, the returns must
/// agree. Vacuously true otherwise.
pub fn premetric_check(
    mdp: &TabularConfMdp,
    a: (&TransitionModel, &Policy),
    b: (&TransitionModel, &Policy),
) -> Result<bool> {
    let ev_a = evaluate(mdp, a.0, a.1)?;
    let (d_e_pi, _) = policy_dissimilarity(&ev_a.occupancy, a.1, b.1);
    let (d_e_p, _) = model_dissimilarity(&ev_a.occupancy, a.0, b.0);
    if d_e_pi > 0.0 || d_e_p > 0.0 {
        return Ok(true);
    }
    let j_b = evaluate(mdp, b.0, b.1)?.j;
    Ok((ev_a.j - j_b).abs() <= PREMETRIC_TOL)
}

/// Outcome of one `verify` check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_hull(
    seed: u64,
    vertices: usize,
) -> (TabularConfMdp, Policy, Vec<TransitionModel>, Vec<f64>) {
    let inst = build_random(&RandomSpec::new(seed, 6, 3, 0.7).with_vertices(vertices));
    (inst.mdp, inst.policy, inst.vertices, inst.omega)
}

fn check_gradients() -> Result<CheckResult> {
    let mut worst = 0.0f64;
    let mut passed = true;
    for seed in 0..20 {
        let (mdp, pi, vertices, omega) = random_hull(seed, 2);
        let report = gradient_check(&mdp, &pi, &vertices, &omega)?;
        let grad = model_gradient(&mdp, &pi, &vertices, &omega)?;
        passed &= report.within_tolerance();
        passed &= grad
            .advantage_form
            .iter()
            .zip(&report.numeric)
            .all(|(&a, &n)| fd_matches(a, n));
        worst = worst.max(report.max_abs_error);
    }
    Ok(CheckResult {
        name: "model gradient vs finite differences",
        passed,
        detail: format!("20 seeds, max abs error {worst:.3e}"),
    })
}

fn check_beta_derivative() -> Result<CheckResult> {
    let mut passed = true;
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let inst = build_random(&RandomSpec::new(100 + seed, 6, 3, 0.7).with_vertices(3));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut eta: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
        let sum: f64 = eta.iter().sum();
        eta.iter_mut().for_each(|x| *x /= sum);
        let a = beta_derivative(&inst.mdp, &inst.model, &inst.policy, &inst.vertices, &eta)?;
        let n =
            beta_derivative_numeric(&inst.mdp, &inst.model, &inst.policy, &inst.vertices, &eta)?;
        passed &= fd_matches(a, n);
        worst = worst.max((a - n).abs());
    }
    Ok(CheckResult {
        name: "beta derivative vs finite differences",
        passed,
        detail: format!("20 seeds, max abs error {worst:.3e}"),
    })
}

fn check_zero_sum_vertex_advantages() -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (mdp, pi, vertices, omega) = random_hull(200 + seed, 4);
        let p = TransitionModel::convex_combination(&vertices, &omega)?;
        let ev = evaluate(&mdp, &p, &pi)?;
        let adv = vertex_advantages_from(&ev, &vertices);
        let total: f64 = adv.iter().zip(&omega).map(|(a, w)| a * w).sum();
        worst = worst.max(total.abs());
    }
    Ok(CheckResult {
        name: "weighted vertex advantages sum to zero",
        passed: worst <= 1e-10,
        detail: format!("max |Σ ω_i 𝔸_i| {worst:.3e}"),
    })
}

fn check_two_chain() -> Result<CheckResult> {
    let chain = build_two_chain(&TwoChainSpec::default())?;
    let env = chain.environment(0.0)?;
    let r = run(
        &env,
        &StrategyConfig::new(Strategy::Smi),
        TargetMode::Greedy,
    )?;
    let omega = r.omega.clone().unwrap_or_default();
    let p = chain.model_at(omega[0])?;
    let gap = performance_gap_bound(&chain.mdp, &p, &chain.policy(), &chain.vertices)?;
    let best = (0..=10_000)
        .map(|k| chain.closed_form_v_a(k as f64 / 10_000.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let ok =
        r.converged && (r.final_j() - 0.2025).abs() <= 1e-6 && best - r.final_j() <= gap + 1e-12;
    Ok(CheckResult {
        name: "two-chain mixed optimum and gap bound",
        passed: ok,
        detail: format!("final J {:.10}, gap bound {gap:.3e}", r.final_j()),
    })
}

fn check_premetric() -> Result<CheckResult> {
    // State 2 is unreachable from μ; perturbing it leaves D_E at zero.
    let mdp = TabularConfMdp::new(
        3,
        2,
        vec![0.1, 0.5, 0.3, 0.9, 1.0, 0.0],
        0.9,
        vec![1.0, 0.0, 0.0],
    )?;
    let p = TransitionModel::from_fn(3, 2, |s, _, s2| match (s, s2) {
        (2, 2) => 1.0,
        (2, _) => 0.0,
        (_, 2) => 0.0,
        _ => 0.5,
    })?;
    let p2 = TransitionModel::from_fn(3, 2, |s, _, s2| match (s, s2) {
        (2, 0) => 1.0,
        (2, _) => 0.0,
        (_, 2) => 0.0,
        _ => 0.5,
    })?;
    let pi = Policy::uniform(3, 2, None)?;
    let pi2 = Policy::new(3, 2, vec![0.5, 0.5, 0.5, 0.5, 1.0, 0.0], None)?;
    let ok = premetric_check(&mdp, (&p, &pi), (&p2, &pi2))?
        && premetric_check(&mdp, (&p, &pi), (&p, &pi))?;
    Ok(CheckResult {
        name: "zero expected dissimilarity implies equal return",
        passed: ok,
        detail: "unreachable-state perturbation".into(),
    })
}

fn check_safety() -> Result<CheckResult> {
    let mut worst = f64::INFINITY;
    for seed in 0..20 {
        let inst = build_random(&RandomSpec::new(300 + seed, 6, 3, 0.6));
        let env = Environment {
            name: "random".into(),
            mdp: inst.mdp,
            policy_space: PolicySpace::default(),
            model_space: ModelSpace::Unconstrained { support: None },
            initial_model: inst.model,
            initial_omega: None,
        };
        let r = run(
            &env,
            &StrategyConfig::new(Strategy::Spmi).with_max_iterations(500),
            TargetMode::Persistent,
        )?;
        for w in r.records.windows(2) {
            worst = worst.min(w[1].j - w[0].j - w[0].bound_value);
        }
    }
    Ok(CheckResult {
        name: "improvement never below the bound",
        passed: worst >= -1e-9,
        detail: format!("min slack {worst:.3e}"),
    })
}

/// Runs every check; errors inside a check count as failures.
pub fn verify_suite() -> Vec<CheckResult> {
    let checks: [(&'static str, fn() -> Result<CheckResult>); 6] = [
        ("model gradient vs finite differences", check_gradients),
        (
            "beta derivative vs finite differences",
            check_beta_derivative,
        ),
        (
            "weighted vertex advantages sum to zero",
            check_zero_sum_vertex_advantages,
        ),
        ("two-chain mixed optimum and gap bound", check_two_chain),
        (
            "zero expected dissimilarity implies equal return",
            check_premetric,
        ),
        ("improvement never below the bound", check_safety),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            f().unwrap_or_else(|e| CheckResult {
                name,
                passed: false,
                detail: e.to_string(),
            })
        })
        .collect()
}
