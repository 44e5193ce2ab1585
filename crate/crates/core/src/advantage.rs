//! Policy, model and coupled advantages, and their relative and expected forms.
//!
//! Expected relative advantages are taken under the normalized discounted
//! distributions `d_μ` and `δ_μ` of the current pair, so they sum to the
//! first-order change of `(1 - γ) J`. Multiply by `1 / (1 - γ)` (see
//! [`return_scale`]) to get the directional derivative of `J` itself.

use crate::error::{ConfMdpError, Result};
use crate::mdp::{evaluate, Evaluation, Policy, TabularConfMdp, TransitionModel, ValueFunctions};

/// Pointwise advantage tables of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    n_states: usize,
    n_actions: usize,
    /// `Q(s,a) - V(s)`
    pub policy_adv: Vec<f64>,
    /// `U(s,a,s') - Q(s,a)`
    pub model_adv: Vec<f64>,
    /// `U(s,a,s') - V(s)`
    pub tilde_adv: Vec<f64>,
}

impl AdvantageSet {
    pub fn policy(&self, s: usize, a: usize) -> f64 {
        self.policy_adv[s * self.n_actions + a]
    }

    pub fn model(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.model_adv[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn tilde(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.tilde_adv[(s * self.n_actions + a) * self.n_states + s2]
    }
}

pub fn advantages(mdp: &TabularConfMdp, vf: &ValueFunctions) -> Result<AdvantageSet> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if vf.v.len() != ns || vf.q.len() != ns * na || vf.u.len() != ns * na * ns {
        return Err(ConfMdpError::Dimension(
            "value functions do not match the MDP".into(),
        ));
    }
    let mut policy_adv = vec![0.0; ns * na];
    let mut model_adv = vec![0.0; ns * na * ns];
    let mut tilde_adv = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            let q = vf.q(s, a);
            policy_adv[s * na + a] = q - vf.v(s);
            let base = (s * na + a) * ns;
            for (s2, &u) in vf.u_row(s, a).iter().enumerate() {
                model_adv[base + s2] = u - q;
                tilde_adv[base + s2] = u - vf.v(s);
            }
        }
    }
    Ok(AdvantageSet {
        n_states: ns,
        n_actions: na,
        policy_adv,
        model_adv,
        tilde_adv,
    })
}

/// Relative advantages of a target pair `(P', π')` over the evaluated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeAdvantages {
    /// `Σ_a π'(a|s) A(s,a)` per state.
    pub policy_rel: Vec<f64>,
    /// `Σ_s' P'(s'|s,a) A(s,a,s')` per state-action pair.
    pub model_rel: Vec<f64>,
    /// `Σ_{a,s'} π'(a|s) P'(s'|s,a) Ã(s,a,s')` per state.
    pub coupled_rel: Vec<f64>,
    pub expected_policy: f64,
    pub expected_model: f64,
    pub expected_coupled: f64,
}

fn check_targets(ev: &Evaluation, p_target: &TransitionModel, pi_target: &Policy) -> Result<()> {
    let ns = ev.values.v.len();
    let na = ev.values.q.len() / ns;
    if p_target.n_states() != ns
        || p_target.n_actions() != na
        || pi_target.n_states() != ns
        || pi_target.n_actions() != na
    {
        return Err(ConfMdpError::Dimension(
            "target pair does not match the evaluated pair".into(),
        ));
    }
    Ok(())
}

/// Relative advantages of `(P', π')` given the evaluation of the current pair.
pub fn relative_advantages_from(
    ev: &Evaluation,
    p_target: &TransitionModel,
    pi_target: &Policy,
) -> Result<RelativeAdvantages> {
    check_targets(ev, p_target, pi_target)?;
    let vf = &ev.values;
    let ns = vf.v.len();
    let na = vf.q.len() / ns;
    let policy_rel = policy_relative_advantage(ev, pi_target);
    let model_rel = model_relative_advantage(ev, p_target);
    let coupled_rel: Vec<f64> = (0..ns)
        .map(|s| {
            let v = vf.v(s);
            (0..na)
                .map(|a| {
                    let w = pi_target.prob(s, a);
                    if w == 0.0 {
                        return 0.0;
                    }
                    let inner: f64 = p_target
                        .row(s, a)
                        .iter()
                        .zip(vf.u_row(s, a))
                        .map(|(p, u)| p * (u - v))
                        .sum();
                    w * inner
                })
                .sum()
        })
        .collect();
    let occ = &ev.occupancy;
    let expected_policy = dot(&occ.d_state, &policy_rel);
    let expected_model = dot(&occ.d_state_action, &model_rel);
    let expected_coupled = dot(&occ.d_state, &coupled_rel);
    Ok(RelativeAdvantages {
        policy_rel,
        model_rel,
        coupled_rel,
        expected_policy,
        expected_model,
        expected_coupled,
    })
}

/// Evaluates `(P, π)` and returns the relative advantages of `(P', π')`.
pub fn relative_advantages(
    mdp: &TabularConfMdp,
    p: &TransitionModel,
    pi: &Policy,
    p_target: &TransitionModel,
    pi_target: &Policy,
) -> Result<RelativeAdvantages> {
    let ev = evaluate(mdp, p, pi)?;
    relative_advantages_from(&ev, p_target, pi_target)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `A_{P,π}^{P,π'}(s)` for every state.
pub fn policy_relative_advantage(ev: &Evaluation, pi_target: &Policy) -> Vec<f64> {
    let vf = &ev.values;
    (0..vf.v.len())
        .map(|s| {
            let v = vf.v(s);
            pi_target
                .row(s)
                .iter()
                .zip(vf.q_row(s))
                .map(|(w, q)| w * (q - v))
                .sum()
        })
        .collect()
}

/// `A_{P,π}^{P',π}(s,a)` for every state-action pair.
pub fn model_relative_advantage(ev: &Evaluation, p_target: &TransitionModel) -> Vec<f64> {
    let vf = &ev.values;
    let ns = vf.v.len();
    let na = vf.q.len() / ns;
    let mut out = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let q = vf.q(s, a);
            let exp_u: f64 = p_target
                .row(s, a)
                .iter()
                .zip(vf.u_row(s, a))
                .map(|(p, u)| p * u)
                .sum();
            out.push(exp_u - q);
        }
    }
    out
}

/// `𝔸_{P,π,μ}^{P,π'}` without building the full relative-advantage set.
pub fn expected_policy_advantage(ev: &Evaluation, pi_target: &Policy) -> f64 {
    dot(
        &ev.occupancy.d_state,
        &policy_relative_advantage(ev, pi_target),
    )
}

/// `𝔸_{P,π,μ}^{P',π}` without building the full relative-advantage set.
pub fn expected_model_advantage(ev: &Evaluation, p_target: &TransitionModel) -> f64 {
    dot(
        &ev.occupancy.d_state_action,
        &model_relative_advantage(ev, p_target),
    )
}

/// Expected relative advantage of every vertex model over the current pair.
pub fn vertex_advantages_from(ev: &Evaluation, vertices: &[TransitionModel]) -> Vec<f64> {
    vertices
        .iter()
        .map(|v| expected_model_advantage(ev, v))
        .collect()
}

pub fn vertex_advantages(
    mdp: &TabularConfMdp,
    p_omega: &TransitionModel,
    pi: &Policy,
    vertices: &[TransitionModel],
) -> Result<Vec<f64>> {
    if let Some(bad) = vertices
        .iter()
        .position(|v| v.n_states() != mdp.n_states() || v.n_actions() != mdp.n_actions())
    {
        return Err(ConfMdpError::Dimension(format!(
            "vertex {bad} has the wrong shape"
        )));
    }
    let ev = evaluate(mdp, p_omega, pi)?;
    Ok(vertex_advantages_from(&ev, vertices))
}

/// Converts an occupancy-normalized expected advantage to the scale of `J`.
pub fn return_scale(gamma: f64, expected_advantage: f64) -> f64 {
    expected_advantage / (1.0 - gamma)
}
