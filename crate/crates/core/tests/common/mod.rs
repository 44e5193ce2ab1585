//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use std::path::PathBuf;

use confmdp::advantage::{relative_advantages_from, vertex_advantages_from};
use confmdp::algorithm::RunResult;
use confmdp::bounds::{bound_terms, decoupled_bound_quadratic, BoundTerms, Dissimilarities};
use confmdp::envs::random::{build_random, RandomInstance, RandomSpec};
use confmdp::envs::{Environment, ModelSpace, PolicySpace};
use confmdp::mdp::{evaluate, Policy, TransitionModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config_path(name: &str) -> PathBuf {
    repo_root().join("configs").join(name)
}

/// A random instance of at most 10 states and 4 actions.
pub fn small_instance(seed: u64, n_vertices: usize) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ns = rng.gen_range(2..=10);
    let na = rng.gen_range(1..=4);
    let density = rng.gen_range(0.3..=1.0);
    build_random(&RandomSpec::new(seed, ns, na, density).with_vertices(n_vertices))
}

/// Unconstrained environment over a random instance.
pub fn random_environment(inst: &RandomInstance) -> Environment {
    Environment {
        name: "random".into(),
        mdp: inst.mdp.clone(),
        policy_space: PolicySpace::default(),
        model_space: ModelSpace::Unconstrained { support: None },
        initial_model: inst.model.clone(),
        initial_omega: None,
    }
}

/// Convex-hull environment over a random instance with vertices.
pub fn random_hull_environment(inst: &RandomInstance) -> Environment {
    Environment {
        name: "random hull".into(),
        mdp: inst.mdp.clone(),
        policy_space: PolicySpace::default(),
        model_space: ModelSpace::ConvexHull {
            vertices: inst.vertices.clone(),
        },
        initial_model: inst.hull_model().expect("instance has vertices"),
        initial_omega: Some(inst.omega.clone()),
    }
}

/// Smallest `J(i+1) - J(i) - bound(i)` over consecutive records and the
/// largest decrease of `J`.
pub fn safety_slack(r: &RunResult) -> (f64, f64) {
    let mut slack = f64::INFINITY;
    let mut drop = 0.0f64;
    for w in r.records.windows(2) {
        slack = slack.min(w[1].j - w[0].j - w[0].bound_value);
        drop = drop.max(w[0].j - w[1].j);
    }
    (slack, drop)
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Violation amounts (positive = violated) of every identity and inequality
/// on one random pair. Computed from first principles where possible.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityResiduals {
    /// `|J' - J - 1/(1-γ) Σ d'(s) A_coupled(s)|`
    pub improvement_identity: f64,
    /// `‖d' - d‖₁ - γ/(1-γ) D_E^{kernel}`
    pub kernel_distribution_bound: f64,
    /// `‖d' - d‖₁ - γ/(1-γ) (D_E^π + D_E^P)`
    pub split_distribution_bound: f64,
    /// `max_s |A_coupled(s) - A_π(s) - Σ_a π'(a|s) A_P(s,a)|`
    pub decomposition: f64,
    /// `|𝔸_c - 𝔸_P - 𝔸_π| - γ D_E^π D_∞^P ΔQ / 2`
    pub cross_term_bound: f64,
    /// `ΔA/2 - (D_∞^π + γ D_∞^P) ΔQ / 2`
    pub spread_bound: f64,
    /// `|Σ ω_i 𝔸_i|`
    pub vertex_zero_sum: f64,
    /// `max_{α,β} B(α,β) - (J(α,β) - J)` over a coarse grid.
    pub lower_bound: f64,
}

impl IdentityResiduals {
    pub fn worst_violation(&self) -> f64 {
        [
            self.improvement_identity,
            self.kernel_distribution_bound,
            self.split_distribution_bound,
            self.decomposition,
            self.cross_term_bound,
            self.spread_bound,
            self.vertex_zero_sum,
            self.lower_bound,
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn identity_residuals(seed: u64) -> IdentityResiduals {
    let inst = small_instance(seed, 3);
    let mdp = &inst.mdp;
    let gamma = mdp.gamma();
    let (p, pi, pt, pit) = (&inst.model, &inst.policy, &inst.alt_model, &inst.alt_policy);
    let ev = evaluate(mdp, p, pi).unwrap();
    let ev_new = evaluate(mdp, pt, pit).unwrap();
    let rel = relative_advantages_from(&ev, pt, pit).unwrap();
    let terms = bound_terms(mdp, &ev, p, pi, pt, pit).unwrap();
    let d = &terms.dissim;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());

    let weighted: f64 = (0..ns)
        .map(|s| ev_new.occupancy.state(s) * rel.coupled_rel[s])
        .sum();
    let improvement_identity = (ev_new.j - ev.j - weighted / (1.0 - gamma)).abs();

    let dist = l1(&ev_new.occupancy.d_state, &ev.occupancy.d_state);
    let kernel_distribution_bound = dist - gamma / (1.0 - gamma) * d.d_e_kernel;
    let split_distribution_bound = dist - gamma / (1.0 - gamma) * (d.d_e_pi + d.d_e_p);

    let decomposition = (0..ns)
        .map(|s| {
            let model_part: f64 = (0..na)
                .map(|a| pit.prob(s, a) * rel.model_rel[s * na + a])
                .sum();
            (rel.coupled_rel[s] - rel.policy_rel[s] - model_part).abs()
        })
        .fold(0.0, f64::max);

    let dq = ev.delta_q_sup();
    let cross_term_bound = (rel.expected_coupled - rel.expected_model - rel.expected_policy).abs()
        - gamma * d.d_e_pi * d.d_inf_p * dq / 2.0;
    let spread_bound = terms.delta_a_coupled / 2.0 - (d.d_inf_pi + gamma * d.d_inf_p) * dq / 2.0;

    let hull = inst.hull_model().unwrap();
    let ev_hull = evaluate(mdp, &hull, pi).unwrap();
    let vertex_zero_sum = vertex_advantages_from(&ev_hull, &inst.vertices)
        .iter()
        .zip(&inst.omega)
        .map(|(a, w)| a * w)
        .sum::<f64>()
        .abs();

    let mut lower_bound = f64::NEG_INFINITY;
    for i in 0..=4 {
        for k in 0..=4 {
            let (alpha, beta) = (i as f64 / 4.0, k as f64 / 4.0);
            let pi_mix = pi.mix(pit, alpha).unwrap();
            let p_mix = p.mix(pt, beta).unwrap();
            let gain = evaluate(mdp, &p_mix, &pi_mix).unwrap().j - ev.j;
            lower_bound =
                lower_bound.max(decoupled_bound_quadratic(&terms, alpha, beta, gamma) - gain);
        }
    }

    IdentityResiduals {
        improvement_identity,
        kernel_distribution_bound,
        split_distribution_bound,
        decomposition,
        cross_term_bound,
        spread_bound,
        vertex_zero_sum,
        lower_bound,
    }
}

/// Random bound terms with `D_E ≤ D_∞ ≤ 2`, occasional zero entries and
/// `ΔQ` possibly 0.
pub fn random_bound_terms(rng: &mut impl Rng) -> BoundTerms {
    let mut pick = |scale: f64| -> f64 {
        if rng.gen_bool(0.1) {
            0.0
        } else {
            rng.gen_range(0.0..scale)
        }
    };
    let d_inf_pi = pick(2.0);
    let d_inf_p = pick(2.0);
    let d_e_pi = d_inf_pi * pick(1.0);
    let d_e_p = d_inf_p * pick(1.0);
    let dq = pick(10.0);
    // A side whose target matches the current pair wherever it is visited
    // has no expected advantage.
    let a_pi = if d_e_pi > 0.0 { pick(2.0) - 0.5 } else { 0.0 };
    let a_p = if d_e_p > 0.0 { pick(2.0) - 0.5 } else { 0.0 };
    BoundTerms::new(
        a_pi,
        a_p,
        dq,
        Dissimilarities {
            d_e_pi,
            d_inf_pi,
            d_e_p,
            d_inf_p,
            d_e_kernel: f64::NAN,
        },
    )
}

/// Maximum of `B` on an `n × n` grid over `[a0, a1] × [b0, b1]`, with its
/// location.
pub fn grid_max(
    terms: &BoundTerms,
    gamma: f64,
    (a0, a1): (f64, f64),
    (b0, b1): (f64, f64),
    n: usize,
) -> (f64, f64, f64) {
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..n {
        let alpha = a0 + (a1 - a0) * i as f64 / (n - 1) as f64;
        for k in 0..n {
            let beta = b0 + (b1 - b0) * k as f64 / (n - 1) as f64;
            let v = decoupled_bound_quadratic(terms, alpha, beta, gamma);
            if v > best.0 {
                best = (v, alpha, beta);
            }
        }
    }
    best
}

/// Coarse 1001² grid, then a 1001² refinement over `±10⁻³` around the
/// coarse argmax (clipped to the unit square).
pub fn refined_grid_max(terms: &BoundTerms, gamma: f64) -> (f64, f64) {
    let (coarse, a, b) = grid_max(terms, gamma, (0.0, 1.0), (0.0, 1.0), 1001);
    let window = |x: f64| ((x - 1e-3).max(0.0), (x + 1e-3).min(1.0));
    let (fine, _, _) = grid_max(terms, gamma, window(a), window(b), 1001);
    (coarse, fine.max(coarse))
}

pub fn is_stochastic_policy(pi: &Policy) -> bool {
    pi.stochasticity_error() <= 1e-12
}

pub fn is_stochastic_model(p: &TransitionModel) -> bool {
    p.stochasticity_error() <= 1e-12
}
