//! Dissimilarities between pairs and the performance-improvement lower bounds.
//!
//! The decoupled bound for the update `π' = απ̄ + (1-α)π`,
//! `P' = βP̄ + (1-β)P` is the concave-in-each-coordinate quadratic
//!
//! ```text
//! B(α, β) = (α 𝔸_π + β 𝔸_P) / (1-γ)
//!         - γ ΔQ / (2 (1-γ)²) · ( α² D_E^π D_∞^π
//!                               + αβ (D_E^π D_∞^P + D_∞^π D_E^P)
//!                               + γ β² D_∞^P D_E^P )
//! ```
//!
//! whose Hessian is indefinite whenever both sides move, so its maximum over
//! `[0,1]²` lies on an edge. [`optimal_coefficients`] evaluates the clipped
//! stationary point of each edge and keeps the best.

use crate::advantage::{
    expected_model_advantage, expected_policy_advantage, relative_advantages_from,
};
use crate::error::{ConfMdpError, Result};
use crate::mdp::{
    evaluate, spread, state_kernel, Evaluation, OccupancyMeasures, Policy, TabularConfMdp,
    TransitionModel,
};

/// L1 dissimilarities of a target pair from the current pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dissimilarities {
    /// `E_{s~d} ‖π̄(·|s) - π(·|s)‖₁`
    pub d_e_pi: f64,
    /// `sup_s ‖π̄(·|s) - π(·|s)‖₁`
    pub d_inf_pi: f64,
    /// `E_{(s,a)~δ} ‖P̄(·|s,a) - P(·|s,a)‖₁`
    pub d_e_p: f64,
    /// `sup_{s,a} ‖P̄(·|s,a) - P(·|s,a)‖₁`
    pub d_inf_p: f64,
    /// `E_{s~d} ‖P̄^π̄(·|s) - P^π(·|s)‖₁`
    pub d_e_kernel: f64,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn check_shapes(
    p: &TransitionModel,
    pi: &Policy,
    p_t: &TransitionModel,
    pi_t: &Policy,
) -> Result<()> {
    let (ns, na) = (p.n_states(), p.n_actions());
    for (what, s, a) in [
        ("policy", pi.n_states(), pi.n_actions()),
        ("target model", p_t.n_states(), p_t.n_actions()),
        ("target policy", pi_t.n_states(), pi_t.n_actions()),
    ] {
        if s != ns || a != na {
            return Err(ConfMdpError::Dimension(format!(
                "{what} is {s}x{a}, model is {ns}x{na}"
            )));
        }
    }
    Ok(())
}

/// Policy-side dissimilarities `(D_E^π, D_∞^π)`.
pub fn policy_dissimilarity(
    occ: &OccupancyMeasures,
    pi: &Policy,
    pi_target: &Policy,
) -> (f64, f64) {
    (0..pi.n_states()).fold((0.0, 0.0), |(de, di), s| {
        let dist = l1(pi_target.row(s), pi.row(s));
        (de + occ.state(s) * dist, f64::max(di, dist))
    })
}

/// Model-side dissimilarities `(D_E^P, D_∞^P)`.
pub fn model_dissimilarity(
    occ: &OccupancyMeasures,
    p: &TransitionModel,
    p_target: &TransitionModel,
) -> (f64, f64) {
    let mut de = 0.0;
    let mut di = 0.0f64;
    for s in 0..p.n_states() {
        for a in 0..p.n_actions() {
            let dist = l1(p_target.row(s, a), p.row(s, a));
            de += occ.state_action(s, a) * dist;
            di = di.max(dist);
        }
    }
    (de, di)
}

pub fn dissimilarities(
    p: &TransitionModel,
    pi: &Policy,
    p_target: &TransitionModel,
    pi_target: &Policy,
    occ: &OccupancyMeasures,
) -> Result<Dissimilarities> {
    check_shapes(p, pi, p_target, pi_target)?;
    let (d_e_pi, d_inf_pi) = policy_dissimilarity(occ, pi, pi_target);
    let (d_e_p, d_inf_p) = model_dissimilarity(occ, p, p_target);
    let k = state_kernel(p, pi)?;
    let k_t = state_kernel(p_target, pi_target)?;
    let d_e_kernel = (0..p.n_states())
        .map(|s| occ.state(s) * l1(k_t.row(s), k.row(s)))
        .sum();
    Ok(Dissimilarities {
        d_e_pi,
        d_inf_pi,
        d_e_p,
        d_inf_p,
        d_e_kernel,
    })
}

/// Which of the four edge candidates a coefficient pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateKind {
    /// `(α*₀, 0)`
    PolicyOnly,
    /// `(0, β*₀)`
    ModelOnly,
    /// `(α*₁, 1)`
    PolicyFullModel,
    /// `(1, β*₁)`
    ModelFullPolicy,
    /// `(0, 0)`: no candidate has a positive bound.
    NoUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub kind: CandidateKind,
    pub alpha: f64,
    pub beta: f64,
    pub value: f64,
}

impl Candidate {
    pub const NONE: Candidate = Candidate {
        kind: CandidateKind::NoUpdate,
        alpha: 0.0,
        beta: 0.0,
        value: 0.0,
    };
}

/// Decoupled (`D_E`) or sup (`D_∞` everywhere) form of the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundVariant {
    #[default]
    Expected,
    Sup,
}

/// Which sides of the pair an update may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateSides {
    #[default]
    Both,
    PolicyOnly,
    ModelOnly,
}

impl UpdateSides {
    fn policy(self) -> bool {
        matches!(self, UpdateSides::Both | UpdateSides::PolicyOnly)
    }

    fn model(self) -> bool {
        matches!(self, UpdateSides::Both | UpdateSides::ModelOnly)
    }
}

/// Everything the bound needs about one (current, target) configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundTerms {
    /// `𝔸_{P,π,μ}^{P,π̄}`
    pub adv_policy: f64,
    /// `𝔸_{P,π,μ}^{P̄,π}`
    pub adv_model: f64,
    pub delta_q: f64,
    /// `ΔA` of the coupled relative advantage; diagnostics only.
    pub delta_a_coupled: f64,
    pub dissim: Dissimilarities,
    pub candidates: Vec<Candidate>,
    pub chosen: Candidate,
}

impl BoundTerms {
    pub fn new(adv_policy: f64, adv_model: f64, delta_q: f64, dissim: Dissimilarities) -> Self {
        Self {
            adv_policy,
            adv_model,
            delta_q,
            delta_a_coupled: f64::NAN,
            dissim,
            candidates: Vec::new(),
            chosen: Candidate::NONE,
        }
    }

    /// Terms whose `D_E` values are replaced by the matching `D_∞`.
    fn sup_substituted(&self) -> Self {
        let mut t = self.clone();
        t.dissim.d_e_pi = t.dissim.d_inf_pi;
        t.dissim.d_e_p = t.dissim.d_inf_p;
        t
    }
}

/// Computes advantages, `ΔQ`, `ΔA` and dissimilarities of a target pair.
pub fn bound_terms(
    mdp: &TabularConfMdp,
    ev: &Evaluation,
    p: &TransitionModel,
    pi: &Policy,
    p_target: &TransitionModel,
    pi_target: &Policy,
) -> Result<BoundTerms> {
    let dissim = dissimilarities(p, pi, p_target, pi_target, &ev.occupancy)?;
    let mut terms = BoundTerms::new(
        expected_policy_advantage(ev, pi_target),
        expected_model_advantage(ev, p_target),
        ev.delta_q(mdp),
        dissim,
    );
    let rel = relative_advantages_from(ev, p_target, pi_target)?;
    terms.delta_a_coupled = spread(&rel.coupled_rel);
    Ok(terms)
}

/// The terms the decoupled bound needs, skipping the kernel dissimilarity
/// and the coupled `ΔA` (both left `NaN`). Used inside the iteration loop.
pub fn decoupled_bound_terms(
    mdp: &TabularConfMdp,
    ev: &Evaluation,
    p: &TransitionModel,
    pi: &Policy,
    p_target: &TransitionModel,
    pi_target: &Policy,
) -> Result<BoundTerms> {
    check_shapes(p, pi, p_target, pi_target)?;
    let (d_e_pi, d_inf_pi) = policy_dissimilarity(&ev.occupancy, pi, pi_target);
    let (d_e_p, d_inf_p) = model_dissimilarity(&ev.occupancy, p, p_target);
    Ok(BoundTerms::new(
        expected_policy_advantage(ev, pi_target),
        expected_model_advantage(ev, p_target),
        ev.delta_q(mdp),
        Dissimilarities {
            d_e_pi,
            d_inf_pi,
            d_e_p,
            d_inf_p,
            d_e_kernel: f64::NAN,
        },
    ))
}

/// `B(α, β)` of the decoupled bound.
pub fn decoupled_bound_quadratic(terms: &BoundTerms, alpha: f64, beta: f64, gamma: f64) -> f64 {
    let d = &terms.dissim;
    let gain = (alpha * terms.adv_policy + beta * terms.adv_model) / (1.0 - gamma);
    let penalty = alpha * alpha * d.d_e_pi * d.d_inf_pi
        + alpha * beta * (d.d_e_pi * d.d_inf_p + d.d_inf_pi * d.d_e_p)
        + gamma * beta * beta * d.d_inf_p * d.d_e_p;
    gain - gamma * terms.delta_q / (2.0 * (1.0 - gamma).powi(2)) * penalty
}

/// `B(α, β)` with every `D_E` replaced by `D_∞`.
pub fn sup_variant_bound(terms: &BoundTerms, alpha: f64, beta: f64, gamma: f64) -> f64 {
    decoupled_bound_quadratic(&terms.sup_substituted(), alpha, beta, gamma)
}

/// Coupled bound: `𝔸/(1-γ) - γ ΔA D_E^{kernel} / (2(1-γ)²)`.
pub fn coupled_bound(
    mdp: &TabularConfMdp,
    p: &TransitionModel,
    pi: &Policy,
    p_target: &TransitionModel,
    pi_target: &Policy,
) -> Result<f64> {
    let ev = evaluate(mdp, p, pi)?;
    coupled_bound_from(mdp, &ev, p, pi, p_target, pi_target)
}

pub fn coupled_bound_from(
    mdp: &TabularConfMdp,
    ev: &Evaluation,
    p: &TransitionModel,
    pi: &Policy,
    p_target: &TransitionModel,
    pi_target: &Policy,
) -> Result<f64> {
    let gamma = mdp.gamma();
    let rel = relative_advantages_from(ev, p_target, pi_target)?;
    let dissim = dissimilarities(p, pi, p_target, pi_target, &ev.occupancy)?;
    let delta_a = spread(&rel.coupled_rel);
    Ok(rel.expected_coupled / (1.0 - gamma)
        - gamma * delta_a * dissim.d_e_kernel / (2.0 * (1.0 - gamma).powi(2)))
}

/// Maximizer over `[0, 1]` of `slope·x - curvature·x²` (`curvature ≥ 0`):
/// the clipped stationary point, or its limit when the curvature vanishes.
fn edge_argmax(slope: f64, curvature: f64) -> f64 {
    if curvature > 0.0 {
        (slope / (2.0 * curvature)).clamp(0.0, 1.0)
    } else if slope > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Table-1 candidates for the full decoupled bound.
pub fn optimal_coefficients(terms: &BoundTerms, gamma: f64) -> BoundTerms {
    optimal_coefficients_with(terms, gamma, BoundVariant::Expected, UpdateSides::Both)
}

/// Table-1 candidates restricted to `sides`, for the chosen bound variant.
///
/// A coefficient whose denominator vanishes (the bound is linear along that
/// edge) takes its limiting value: 1 for a positive slope, else 0. When the
/// policy target equals the current policy (`D_∞^π = 0`) only `(0, β*₀)`
/// remains, and symmetrically for the model. Ties keep the earlier candidate in the order
/// `(α*₀,0)`, `(0,β*₀)`, `(α*₁,1)`, `(1,β*₁)`; if no candidate is positive
/// the chosen pair is `(0, 0)`.
pub fn optimal_coefficients_with(
    terms: &BoundTerms,
    gamma: f64,
    variant: BoundVariant,
    sides: UpdateSides,
) -> BoundTerms {
    let eff = match variant {
        BoundVariant::Expected => terms.clone(),
        BoundVariant::Sup => terms.sup_substituted(),
    };
    let d = eff.dissim;
    let policy_moves = d.d_inf_pi > 0.0;
    let model_moves = d.d_inf_p > 0.0;
    // B(α, β) = g_α α + g_β β - c (k_α α² + k_× αβ + k_β β²)
    let c = gamma * eff.delta_q / (2.0 * (1.0 - gamma).powi(2));
    let (g_a, g_b) = (
        eff.adv_policy / (1.0 - gamma),
        eff.adv_model / (1.0 - gamma),
    );
    let k_a = c * d.d_e_pi * d.d_inf_pi;
    let k_x = c * (d.d_e_pi * d.d_inf_p + d.d_inf_pi * d.d_e_p);
    let k_b = c * gamma * d.d_inf_p * d.d_e_p;

    let eval = |alpha: f64, beta: f64| decoupled_bound_quadratic(&eff, alpha, beta, gamma);
    let mut candidates = Vec::with_capacity(4);
    let mut push = |kind, alpha, beta| {
        candidates.push(Candidate {
            kind,
            alpha,
            beta,
            value: eval(alpha, beta),
        })
    };
    if sides.policy() && policy_moves {
        push(CandidateKind::PolicyOnly, edge_argmax(g_a, k_a), 0.0);
    }
    if sides.model() && model_moves {
        push(CandidateKind::ModelOnly, 0.0, edge_argmax(g_b, k_b));
    }
    // With one side fixed the full-step edges repeat the single-side edge.
    if sides == UpdateSides::Both && policy_moves && model_moves {
        push(
            CandidateKind::PolicyFullModel,
            edge_argmax(g_a - k_x, k_a),
            1.0,
        );
        push(
            CandidateKind::ModelFullPolicy,
            1.0,
            edge_argmax(g_b - k_x, k_b),
        );
    }
    let chosen = candidates.iter().fold(Candidate::NONE, |best, c| {
        if c.value > best.value {
            *c
        } else {
            best
        }
    });
    BoundTerms {
        candidates,
        chosen,
        ..terms.clone()
    }
}

/// Bound value at `(α*₀, 0)` when `α*₀` is not clipped:
/// `𝔸_π² / (2 γ ΔQ D_∞^π D_E^π)`.
pub fn closed_form_policy_only(terms: &BoundTerms, gamma: f64) -> f64 {
    let d = &terms.dissim;
    terms.adv_policy.powi(2) / (2.0 * gamma * terms.delta_q * d.d_inf_pi * d.d_e_pi)
}

/// Bound value at `(0, β*₀)` when `β*₀` is not clipped:
/// `𝔸_P² / (2 γ² ΔQ D_∞^P D_E^P)`.
pub fn closed_form_model_only(terms: &BoundTerms, gamma: f64) -> f64 {
    let d = &terms.dissim;
    terms.adv_model.powi(2) / (2.0 * gamma * gamma * terms.delta_q * d.d_inf_p * d.d_e_p)
}
