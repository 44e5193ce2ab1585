//! Finite configurable MDPs and exact evaluation of a model-policy pair.
//!
//! Every table is dense and row-major. Evaluation solves the Bellman and
//! discounted-occupancy linear systems directly with an LU factorization for
//! up to [`DIRECT_SOLVE_LIMIT`] states and falls back to fixed-point
//! iteration above that.
//!
//! With `gamma == 1` only episodic instances are admitted: every state that
//! is not a zero-reward absorbing state must be transient under the
//! evaluated kernel. In that mode the occupancy is the normalized expected
//! visitation of the transient states and `J = Σ μ(s) V(s)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{ConfMdpError, Result};

/// Row sums of stochastic tables must be within this of one.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Largest state count solved by dense factorization.
pub const DIRECT_SOLVE_LIMIT: usize = 2000;

const FIXED_POINT_RESIDUAL: f64 = 1e-12;
const FIXED_POINT_MAX_ITERS: usize = 1_000_000;

/// `(1 - γ^H) / (1 - γ)`, the largest spread of discounted returns collected
/// in `H` steps with rewards in `[0, 1]`.
pub fn horizon_constant(gamma: f64, horizon: u32) -> f64 {
    if gamma == 1.0 {
        horizon as f64
    } else {
        (1.0 - gamma.powi(horizon as i32)) / (1.0 - gamma)
    }
}

/// How the `ΔQ` spread entering the decoupled bound is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaQMode {
    /// A fixed constant, typically [`horizon_constant`].
    Constant(f64),
    /// `sup Q - inf Q` over the current Q table.
    ComputedSup,
}

impl DeltaQMode {
    pub fn horizon(gamma: f64, horizon: u32) -> Self {
        DeltaQMode::Constant(horizon_constant(gamma, horizon))
    }

    /// Resolves the spread for a given Q table.
    pub fn resolve(&self, q: &[f64]) -> f64 {
        match *self {
            DeltaQMode::Constant(c) => c,
            DeltaQMode::ComputedSup => spread(q),
        }
    }
}

pub(crate) fn spread(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if values.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

fn check_probability_vector(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&x| !(x >= 0.0) || x > 1.0 + STOCHASTIC_TOL) {
        return Err(ConfMdpError::Structural(format!(
            "{what} has entries outside [0, 1]"
        )));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(ConfMdpError::Structural(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// The MDP without its transition model: `(S, A, R, γ, μ)` plus the `ΔQ`
/// convention used by the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularConfMdp {
    n_states: usize,
    n_actions: usize,
    reward: Vec<f64>,
    gamma: f64,
    mu: Vec<f64>,
    delta_q_mode: DeltaQMode,
}

impl TabularConfMdp {
    /// Builds an MDP whose `ΔQ` defaults to the 10-step horizon constant.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        reward: Vec<f64>,
        gamma: f64,
        mu: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(ConfMdpError::Structural(
                "state and action counts must be positive".into(),
            ));
        }
        if reward.len() != n_states * n_actions {
            return Err(ConfMdpError::Dimension(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if reward.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(ConfMdpError::Structural(
                "rewards must lie in [0, 1]".into(),
            ));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(ConfMdpError::Structural(format!(
                "gamma must lie in (0, 1], got {gamma}"
            )));
        }
        if mu.len() != n_states {
            return Err(ConfMdpError::Dimension(format!(
                "mu has {} entries, expected {n_states}",
                mu.len()
            )));
        }
        check_probability_vector(&mu, "initial distribution")?;
        Ok(Self {
            n_states,
            n_actions,
            reward,
            gamma,
            mu,
            delta_q_mode: DeltaQMode::horizon(gamma, 10),
        })
    }

    pub fn with_delta_q(mut self, mode: DeltaQMode) -> Self {
        self.delta_q_mode = mode;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(ConfMdpError::Structural(format!(
                "gamma must lie in (0, 1], got {gamma}"
            )));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn delta_q_mode(&self) -> DeltaQMode {
        self.delta_q_mode
    }

    fn check_model(&self, p: &TransitionModel) -> Result<()> {
        if p.n_states != self.n_states || p.n_actions != self.n_actions {
            return Err(ConfMdpError::Dimension(format!(
                "model is {}x{}, MDP is {}x{}",
                p.n_states, p.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }

    fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.n_states != self.n_states || pi.n_actions != self.n_actions {
            return Err(ConfMdpError::Dimension(format!(
                "policy is {}x{}, MDP is {}x{}",
                pi.n_states, pi.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }
}

/// `P(s' | s, a)`, stored as `p[(s * A + a) * S + s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    n_states: usize,
    n_actions: usize,
    p: Vec<f64>,
}

impl TransitionModel {
    pub fn new(n_states: usize, n_actions: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != n_states * n_actions * n_states {
            return Err(ConfMdpError::Dimension(format!(
                "transition table has {} entries, expected {}",
                p.len(),
                n_states * n_actions * n_states
            )));
        }
        let model = Self {
            n_states,
            n_actions,
            p,
        };
        for s in 0..n_states {
            for a in 0..n_actions {
                check_probability_vector(model.row(s, a), &format!("P(.|{s},{a})"))?;
            }
        }
        Ok(model)
    }

    pub fn from_fn(
        n_states: usize,
        n_actions: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut p = Vec::with_capacity(n_states * n_actions * n_states);
        for s in 0..n_states {
            for a in 0..n_actions {
                for s2 in 0..n_states {
                    p.push(f(s, a, s2));
                }
            }
        }
        Self::new(n_states, n_actions, p)
    }

    /// Model that moves `(s, a)` to `next(s, a)` with probability one.
    pub fn deterministic(
        n_states: usize,
        n_actions: usize,
        next: impl Fn(usize, usize) -> usize,
    ) -> Result<Self> {
        Self::from_fn(n_states, n_actions, |s, a, s2| {
            if next(s, a) == s2 {
                1.0
            } else {
                0.0
            }
        })
    }

    /// No validation; callers guarantee the layout. Used for finite-difference
    /// perturbations that leave the simplex.
    pub(crate) fn from_raw(n_states: usize, n_actions: usize, p: Vec<f64>) -> Self {
        debug_assert_eq!(p.len(), n_states * n_actions * n_states);
        Self {
            n_states,
            n_actions,
            p,
        }
    }

    /// `Σ_i ω_i P_i`.
    pub fn convex_combination(vertices: &[TransitionModel], omega: &[f64]) -> Result<Self> {
        let first = vertices
            .first()
            .ok_or_else(|| ConfMdpError::Structural("empty vertex set".into()))?;
        if omega.len() != vertices.len() {
            return Err(ConfMdpError::Dimension(format!(
                "{} coefficients for {} vertices",
                omega.len(),
                vertices.len()
            )));
        }
        check_probability_vector(omega, "coefficient vector")?;
        for v in vertices {
            if v.n_states != first.n_states || v.n_actions != first.n_actions {
                return Err(ConfMdpError::Dimension("vertices differ in shape".into()));
            }
        }
        Ok(Self::combine_unchecked(vertices, omega))
    }

    /// `Σ_i w_i P_i` for arbitrary weights; rows need not be stochastic.
    pub(crate) fn combine_unchecked(vertices: &[TransitionModel], weights: &[f64]) -> Self {
        let first = &vertices[0];
        let mut p = vec![0.0; first.p.len()];
        for (v, &w) in vertices.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            for (acc, &x) in p.iter_mut().zip(&v.p) {
                *acc += w * x;
            }
        }
        Self::from_raw(first.n_states, first.n_actions, p)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.p[start..start + self.n_states]
    }

    pub fn prob(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.p[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    /// `β · target + (1 - β) · self`.
    pub fn mix(&self, target: &TransitionModel, beta: f64) -> Result<Self> {
        if self.n_states != target.n_states || self.n_actions != target.n_actions {
            return Err(ConfMdpError::Dimension(
                "mixing models of different shape".into(),
            ));
        }
        if beta == 0.0 {
            return Ok(self.clone());
        }
        let p = self
            .p
            .iter()
            .zip(&target.p)
            .map(|(&cur, &tgt)| beta * tgt + (1.0 - beta) * cur)
            .collect();
        Ok(Self::from_raw(self.n_states, self.n_actions, p))
    }

    /// Largest deviation of a row sum from one, and whether any entry is negative.
    pub fn stochasticity_error(&self) -> f64 {
        self.p
            .chunks(self.n_states)
            .map(|row| {
                let neg = row.iter().fold(0.0f64, |m, &x| m.max(-x));
                (row.iter().sum::<f64>() - 1.0).abs().max(neg)
            })
            .fold(0.0, f64::max)
    }
}

/// `π(a | s)`, optionally restricted to a support mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    pi: Vec<f64>,
    support: Option<Vec<bool>>,
}

impl Policy {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        pi: Vec<f64>,
        support: Option<Vec<bool>>,
    ) -> Result<Self> {
        if pi.len() != n_states * n_actions {
            return Err(ConfMdpError::Dimension(format!(
                "policy table has {} entries, expected {}",
                pi.len(),
                n_states * n_actions
            )));
        }
        if let Some(mask) = &support {
            if mask.len() != pi.len() {
                return Err(ConfMdpError::Dimension("support mask shape".into()));
            }
        }
        let policy = Self {
            n_states,
            n_actions,
            pi,
            support,
        };
        for s in 0..n_states {
            check_probability_vector(policy.row(s), &format!("pi(.|{s})"))?;
            for a in 0..n_actions {
                if !policy.allowed(s, a) && policy.prob(s, a) != 0.0 {
                    return Err(ConfMdpError::Structural(format!(
                        "pi({a}|{s}) is positive outside the support"
                    )));
                }
            }
        }
        Ok(policy)
    }

    /// Uniform over the allowed actions of each state.
    pub fn uniform(n_states: usize, n_actions: usize, support: Option<Vec<bool>>) -> Result<Self> {
        let mut pi = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            let allowed: Vec<usize> = (0..n_actions)
                .filter(|&a| support.as_ref().map_or(true, |m| m[s * n_actions + a]))
                .collect();
            if allowed.is_empty() {
                return Err(ConfMdpError::Structural(format!(
                    "state {s} has an empty action support"
                )));
            }
            let w = 1.0 / allowed.len() as f64;
            for a in allowed {
                pi[s * n_actions + a] = w;
            }
        }
        Self::new(n_states, n_actions, pi, support)
    }

    pub fn deterministic(
        n_states: usize,
        n_actions: usize,
        actions: &[usize],
        support: Option<Vec<bool>>,
    ) -> Result<Self> {
        if actions.len() != n_states {
            return Err(ConfMdpError::Dimension(
                "one action per state required".into(),
            ));
        }
        let mut pi = vec![0.0; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(ConfMdpError::Dimension(format!("action {a} out of range")));
            }
            pi[s * n_actions + a] = 1.0;
        }
        Self::new(n_states, n_actions, pi, support)
    }

    pub(crate) fn from_raw(
        n_states: usize,
        n_actions: usize,
        pi: Vec<f64>,
        support: Option<Vec<bool>>,
    ) -> Self {
        Self {
            n_states,
            n_actions,
            pi,
            support,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.pi[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.pi[s * self.n_actions + a]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }

    pub fn support(&self) -> Option<&[bool]> {
        self.support.as_deref()
    }

    pub fn allowed(&self, s: usize, a: usize) -> bool {
        self.support
            .as_ref()
            .map_or(true, |m| m[s * self.n_actions + a])
    }

    /// `α · target + (1 - α) · self`, keeping this policy's support.
    pub fn mix(&self, target: &Policy, alpha: f64) -> Result<Self> {
        if self.n_states != target.n_states || self.n_actions != target.n_actions {
            return Err(ConfMdpError::Dimension(
                "mixing policies of different shape".into(),
            ));
        }
        if alpha == 0.0 {
            return Ok(self.clone());
        }
        let pi = self
            .pi
            .iter()
            .zip(&target.pi)
            .map(|(&cur, &tgt)| alpha * tgt + (1.0 - alpha) * cur)
            .collect();
        Ok(Self::from_raw(
            self.n_states,
            self.n_actions,
            pi,
            self.support.clone(),
        ))
    }

    pub fn stochasticity_error(&self) -> f64 {
        self.pi
            .chunks(self.n_actions)
            .map(|row| {
                let neg = row.iter().fold(0.0f64, |m, &x| m.max(-x));
                (row.iter().sum::<f64>() - 1.0).abs().max(neg)
            })
            .fold(0.0, f64::max)
    }
}

/// `P^π(s' | s) = Σ_a π(a|s) P(s'|s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateKernel {
    n_states: usize,
    k: Vec<f64>,
}

impl StateKernel {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.k[s * self.n_states..(s + 1) * self.n_states]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.k
    }
}

pub fn state_kernel(p: &TransitionModel, pi: &Policy) -> Result<StateKernel> {
    if p.n_states != pi.n_states || p.n_actions != pi.n_actions {
        return Err(ConfMdpError::Dimension(format!(
            "model is {}x{}, policy is {}x{}",
            p.n_states, p.n_actions, pi.n_states, pi.n_actions
        )));
    }
    let n = p.n_states;
    let mut k = vec![0.0; n * n];
    for s in 0..n {
        let out = &mut k[s * n..(s + 1) * n];
        for a in 0..p.n_actions {
            let w = pi.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for (acc, &x) in out.iter_mut().zip(p.row(s, a)) {
                *acc += w * x;
            }
        }
    }
    Ok(StateKernel { n_states: n, k })
}

/// `d_μ` and `δ_μ(s, a) = π(a|s) d_μ(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasures {
    n_actions: usize,
    pub d_state: Vec<f64>,
    pub d_state_action: Vec<f64>,
}

impl OccupancyMeasures {
    pub fn state(&self, s: usize) -> f64 {
        self.d_state[s]
    }

    pub fn state_action(&self, s: usize, a: usize) -> f64 {
        self.d_state_action[s * self.n_actions + a]
    }
}

/// `V`, `Q` and the next-state value `U(s,a,s') = R(s,a) + γ V(s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctions {
    n_states: usize,
    n_actions: usize,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
}

impl ValueFunctions {
    pub fn v(&self, s: usize) -> f64 {
        self.v[s]
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn u(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.u[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn u_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.u[start..start + self.n_states]
    }
}

/// Everything computed from one model-policy pair.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub kernel: StateKernel,
    pub occupancy: OccupancyMeasures,
    pub values: ValueFunctions,
    pub j: f64,
}

impl Evaluation {
    /// `ΔQ` under the MDP's configured mode.
    pub fn delta_q(&self, mdp: &TabularConfMdp) -> f64 {
        mdp.delta_q_mode().resolve(&self.values.q)
    }

    pub fn delta_q_sup(&self) -> f64 {
        spread(&self.values.q)
    }
}

fn policy_reward(mdp: &TabularConfMdp, pi: &Policy) -> Vec<f64> {
    (0..mdp.n_states)
        .map(|s| {
            pi.row(s)
                .iter()
                .enumerate()
                .map(|(a, &w)| w * mdp.reward(s, a))
                .sum()
        })
        .collect()
}

/// Solves `(I - γK) x = b` or, with `transpose`, `(I - γKᵀ) x = b`.
fn solve_discounted(
    kernel: &StateKernel,
    gamma: f64,
    b: &[f64],
    transpose: bool,
) -> Result<Vec<f64>> {
    let n = kernel.n_states;
    if n <= DIRECT_SOLVE_LIMIT {
        let a = DMatrix::from_fn(n, n, |i, j| {
            let kij = if transpose {
                kernel.k[j * n + i]
            } else {
                kernel.k[i * n + j]
            };
            let diag = if i == j { 1.0 } else { 0.0 };
            diag - gamma * kij
        });
        let rhs = DVector::from_column_slice(b);
        let x = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| ConfMdpError::Evaluation("singular evaluation system".into()))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ConfMdpError::Evaluation("non-finite solution".into()));
        }
        Ok(x.as_slice().to_vec())
    } else {
        fixed_point(kernel, gamma, b, transpose)
    }
}

/// Solves `(I - γK) v = r` and `(I - γKᵀ) d = b` from one factorization.
///
/// With `PA = LU`, `Aᵀ = Uᵀ Lᵀ P`, so the transposed system is two
/// triangular solves followed by the inverse row permutation.
fn solve_discounted_both(
    kernel: &StateKernel,
    gamma: f64,
    r: &[f64],
    b: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = kernel.n_states;
    let a = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { 1.0 } else { 0.0 };
        diag - gamma * kernel.k[i * n + j]
    });
    let lu = a.lu();
    let singular = || ConfMdpError::Evaluation("singular evaluation system".into());
    let v = lu
        .solve(&DVector::from_column_slice(r))
        .ok_or_else(singular)?;
    let y = lu
        .u()
        .tr_solve_upper_triangular(&DVector::from_column_slice(b))
        .ok_or_else(singular)?;
    let mut d = lu.l().tr_solve_lower_triangular(&y).ok_or_else(singular)?;
    lu.p().inv_permute_rows(&mut d);
    if v.iter().chain(d.iter()).any(|x| !x.is_finite()) {
        return Err(ConfMdpError::Evaluation("non-finite solution".into()));
    }
    Ok((v.as_slice().to_vec(), d.as_slice().to_vec()))
}

fn fixed_point(kernel: &StateKernel, gamma: f64, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
    let n = kernel.n_states;
    let mut x = b.to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..FIXED_POINT_MAX_ITERS {
        next.copy_from_slice(b);
        if transpose {
            for s in 0..n {
                let xs = x[s];
                if xs == 0.0 {
                    continue;
                }
                for (acc, &k) in next.iter_mut().zip(kernel.row(s)) {
                    *acc += gamma * k * xs;
                }
            }
        } else {
            for (s, acc) in next.iter_mut().enumerate() {
                *acc += gamma
                    * kernel
                        .row(s)
                        .iter()
                        .zip(&x)
                        .map(|(k, v)| k * v)
                        .sum::<f64>();
            }
        }
        let residual = next
            .iter()
            .zip(&x)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        std::mem::swap(&mut x, &mut next);
        if residual <= FIXED_POINT_RESIDUAL {
            return Ok(x);
        }
    }
    Err(ConfMdpError::Evaluation(
        "fixed-point evaluation did not converge".into(),
    ))
}

/// Splits the states of an undiscounted instance into transient states and
/// zero-reward absorbing states, rejecting anything else.
fn episodic_transients(kernel: &StateKernel, r_pi: &[f64]) -> Result<Vec<usize>> {
    let n = kernel.n_states;
    let transient: Vec<usize> = (0..n)
        .filter(|&s| !((kernel.row(s)[s] - 1.0).abs() <= STOCHASTIC_TOL && r_pi[s] == 0.0))
        .collect();
    // Spectral check: the mass left in the transient set must vanish.
    let mut mass = vec![1.0; transient.len()];
    let cap = 100_000usize.max(10 * n);
    for _ in 0..cap {
        let next: Vec<f64> = transient
            .iter()
            .map(|&s| {
                let row = kernel.row(s);
                transient.iter().zip(&mass).map(|(&t, m)| row[t] * m).sum()
            })
            .collect();
        mass = next;
        if mass.iter().all(|&m| m <= 1e-13) {
            return Ok(transient);
        }
    }
    Err(ConfMdpError::Evaluation(
        "gamma = 1 requires every reward-bearing state to reach a zero-reward absorbing state"
            .into(),
    ))
}

fn solve_episodic(
    kernel: &StateKernel,
    transient: &[usize],
    b: &[f64],
    transpose: bool,
) -> Result<Vec<f64>> {
    let n = kernel.n_states;
    let m = transient.len();
    let mut out = vec![0.0; n];
    if m == 0 {
        return Ok(out);
    }
    let a = DMatrix::from_fn(m, m, |i, j| {
        let (si, sj) = (transient[i], transient[j]);
        let k = if transpose {
            kernel.row(sj)[si]
        } else {
            kernel.row(si)[sj]
        };
        (if i == j { 1.0 } else { 0.0 }) - k
    });
    let rhs = DVector::from_iterator(m, transient.iter().map(|&s| b[s]));
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| ConfMdpError::Evaluation("singular episodic system".into()))?;
    for (i, &s) in transient.iter().enumerate() {
        out[s] = x[i];
    }
    Ok(out)
}

fn check_pair(mdp: &TabularConfMdp, p: &TransitionModel, pi: &Policy) -> Result<()> {
    mdp.check_model(p)?;
    mdp.check_policy(pi)
}

fn occupancy_from_kernel(
    mdp: &TabularConfMdp,
    pi: &Policy,
    kernel: &StateKernel,
    episodic: Option<&[usize]>,
    solved: Option<Vec<f64>>,
) -> Result<OccupancyMeasures> {
    let gamma = mdp.gamma;
    let d_state = match episodic {
        _ if solved.is_some() => solved.unwrap_or_default(),
        None => {
            let b: Vec<f64> = mdp.mu.iter().map(|&m| (1.0 - gamma) * m).collect();
            solve_discounted(kernel, gamma, &b, true)?
        }
        Some(transient) => {
            let visits = solve_episodic(kernel, transient, &mdp.mu, true)?;
            let total: f64 = visits.iter().sum();
            if total <= 0.0 {
                visits
            } else {
                visits.iter().map(|v| v / total).collect()
            }
        }
    };
    let na = mdp.n_actions;
    let mut d_state_action = vec![0.0; mdp.n_states * na];
    for s in 0..mdp.n_states {
        for a in 0..na {
            d_state_action[s * na + a] = pi.prob(s, a) * d_state[s];
        }
    }
    Ok(OccupancyMeasures {
        n_actions: na,
        d_state,
        d_state_action,
    })
}

fn values_from_kernel(
    mdp: &TabularConfMdp,
    p: &TransitionModel,
    pi: &Policy,
    kernel: &StateKernel,
    episodic: Option<&[usize]>,
    solved: Option<Vec<f64>>,
) -> Result<ValueFunctions> {
    let r_pi = policy_reward(mdp, pi);
    let v = match episodic {
        _ if solved.is_some() => solved.unwrap_or_default(),
        None => solve_discounted(kernel, mdp.gamma, &r_pi, false)?,
        Some(transient) => solve_episodic(kernel, transient, &r_pi, false)?,
    };
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let gamma = mdp.gamma;
    let mut q = vec![0.0; ns * na];
    let mut u = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            let r = mdp.reward(s, a);
            let row = p.row(s, a);
            let urow = &mut u[(s * na + a) * ns..(s * na + a + 1) * ns];
            let mut acc = 0.0;
            for s2 in 0..ns {
                let val = r + gamma * v[s2];
                urow[s2] = val;
                acc += row[s2] * val;
            }
            q[s * na + a] = acc;
        }
    }
    Ok(ValueFunctions {
        n_states: ns,
        n_actions: na,
        v,
        q,
        u,
    })
}

fn episodic_structure(
    mdp: &TabularConfMdp,
    pi: &Policy,
    kernel: &StateKernel,
) -> Result<Option<Vec<usize>>> {
    if mdp.gamma < 1.0 {
        return Ok(None);
    }
    let r_pi = policy_reward(mdp, pi);
    episodic_transients(kernel, &r_pi).map(Some)
}

/// Discounted state and state-action distributions of `(P, π)`.
pub fn occupancy(
    mdp: &TabularConfMdp,
    p: &TransitionModel,
    pi: &Policy,
) -> Result<OccupancyMeasures> {
    check_pair(mdp, p, pi)?;
    let kernel = state_kernel(p, pi)?;
    let episodic = episodic_structure(mdp, pi, &kernel)?;
    occupancy_from_kernel(mdp, pi, &kernel, episodic.as_deref(), None)
}

/// `V`, `Q` and `U` of `(P, π)`.
pub fn value_functions(
    mdp: &TabularConfMdp,
    p: &TransitionModel,
    pi: &Policy,
) -> Result<ValueFunctions> {
    check_pair(mdp, p, pi)?;
    let kernel = state_kernel(p, pi)?;
    let episodic = episodic_structure(mdp, pi, &kernel)?;
    values_from_kernel(mdp, p, pi, &kernel, episodic.as_deref(), None)
}

/// `J = 1/(1-γ) Σ δ(s,a) R(s,a)`, or `Σ μ V` in the episodic `γ = 1` mode.
pub fn expected_return(mdp: &TabularConfMdp, p: &TransitionModel, pi: &Policy) -> Result<f64> {
    Ok(evaluate(mdp, p, pi)?.j)
}

/// Kernel, occupancy, value functions and return of one pair.
pub fn evaluate(mdp: &TabularConfMdp, p: &TransitionModel, pi: &Policy) -> Result<Evaluation> {
    check_pair(mdp, p, pi)?;
    let kernel = state_kernel(p, pi)?;
    let episodic = episodic_structure(mdp, pi, &kernel)?;
    let (v, d) = if episodic.is_none() && mdp.n_states <= DIRECT_SOLVE_LIMIT {
        let b: Vec<f64> = mdp.mu.iter().map(|&m| (1.0 - mdp.gamma) * m).collect();
        let (v, d) = solve_discounted_both(&kernel, mdp.gamma, &policy_reward(mdp, pi), &b)?;
        (Some(v), Some(d))
    } else {
        (None, None)
    };
    let occupancy = occupancy_from_kernel(mdp, pi, &kernel, episodic.as_deref(), d)?;
    let values = values_from_kernel(mdp, p, pi, &kernel, episodic.as_deref(), v)?;
    let j = if episodic.is_some() {
        mdp.mu.iter().zip(&values.v).map(|(m, v)| m * v).sum()
    } else {
        occupancy
            .d_state_action
            .iter()
            .zip(&mdp.reward)
            .map(|(d, r)| d * r)
            .sum::<f64>()
            / (1.0 - mdp.gamma)
    };
    Ok(Evaluation {
        kernel,
        occupancy,
        values,
        j,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_factorization_matches_separate_solves() {
        let inst =
            crate::envs::random::build_random(&crate::envs::random::RandomSpec::new(8, 9, 3, 0.5));
        let ev = evaluate(&inst.mdp, &inst.model, &inst.policy).unwrap();
        let occ = occupancy(&inst.mdp, &inst.model, &inst.policy).unwrap();
        let vf = value_functions(&inst.mdp, &inst.model, &inst.policy).unwrap();
        for (a, b) in ev.occupancy.d_state.iter().zip(&occ.d_state) {
            assert!((a - b).abs() < 1e-13);
        }
        for (a, b) in ev.values.v.iter().zip(&vf.v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn single_state(reward: f64, gamma: f64) -> (TabularConfMdp, TransitionModel, Policy) {
        let mdp = TabularConfMdp::new(1, 1, vec![reward], gamma, vec![1.0]).unwrap();
        let p = TransitionModel::new(1, 1, vec![1.0]).unwrap();
        let pi = Policy::uniform(1, 1, None).unwrap();
        (mdp, p, pi)
    }

    #[test]
    fn self_loop_kernel_is_identity() {
        let p = TransitionModel::new(1, 2, vec![1.0, 1.0]).unwrap();
        let pi = Policy::new(1, 2, vec![0.3, 0.7], None).unwrap();
        assert_eq!(state_kernel(&p, &pi).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn deterministic_policy_selects_action_rows() {
        let p = TransitionModel::new(2, 2, vec![0.2, 0.8, 0.6, 0.4, 1.0, 0.0, 0.5, 0.5]).unwrap();
        let pi = Policy::deterministic(2, 2, &[0, 0], None).unwrap();
        let k = state_kernel(&p, &pi).unwrap();
        assert_eq!(k.row(0), p.row(0, 0));
        assert_eq!(k.row(1), p.row(1, 0));
    }

    #[test]
    fn kernel_dimension_mismatch() {
        let p = TransitionModel::new(1, 2, vec![1.0, 1.0]).unwrap();
        let pi = Policy::uniform(1, 3, None).unwrap();
        assert!(matches!(
            state_kernel(&p, &pi),
            Err(ConfMdpError::Dimension(_))
        ));
    }

    #[test]
    fn single_state_values() {
        let (mdp, p, pi) = single_state(1.0, 0.9);
        let ev = evaluate(&mdp, &p, &pi).unwrap();
        assert_eq!(ev.occupancy.d_state, vec![1.0]);
        assert!((ev.values.v[0] - 10.0).abs() < 1e-12);
        assert!((ev.values.q[0] - 10.0).abs() < 1e-12);
        assert!((ev.values.u[0] - 10.0).abs() < 1e-12);
        assert!((ev.j - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_zero_return() {
        let (mdp, p, pi) = single_state(0.0, 0.5);
        assert_eq!(expected_return(&mdp, &p, &pi).unwrap(), 0.0);
    }

    #[test]
    fn jump_to_absorbing_occupancy() {
        let mdp = TabularConfMdp::new(2, 1, vec![0.0, 0.0], 0.5, vec![1.0, 0.0]).unwrap();
        let p = TransitionModel::new(2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let pi = Policy::uniform(2, 1, None).unwrap();
        let d = occupancy(&mdp, &p, &pi).unwrap();
        assert!((d.d_state[0] - 0.5).abs() < 1e-15);
        assert!((d.d_state[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(TabularConfMdp::new(1, 1, vec![1.5], 0.9, vec![1.0]).is_err());
        assert!(TabularConfMdp::new(1, 1, vec![0.5], 1.2, vec![1.0]).is_err());
        assert!(TabularConfMdp::new(2, 1, vec![0.5, 0.5], 0.9, vec![0.5, 0.4]).is_err());
        assert!(TransitionModel::new(1, 1, vec![0.9]).is_err());
        assert!(Policy::new(1, 2, vec![0.5, 0.5], Some(vec![true, false])).is_err());
        assert!(Policy::uniform(1, 2, Some(vec![false, false])).is_err());
    }

    #[test]
    fn undiscounted_cycle_is_rejected() {
        let (mdp, p, pi) = single_state(1.0, 1.0);
        assert!(matches!(
            evaluate(&mdp, &p, &pi),
            Err(ConfMdpError::Evaluation(_))
        ));
    }

    #[test]
    fn undiscounted_episode_is_finite_horizon_sum() {
        // 0 -> 1 -> 2 (absorbing); reward 1 in states 0 and 1.
        let mdp = TabularConfMdp::new(3, 1, vec![1.0, 1.0, 0.0], 1.0, vec![1.0, 0.0, 0.0]).unwrap();
        let p = TransitionModel::deterministic(3, 1, |s, _| (s + 1).min(2)).unwrap();
        let pi = Policy::uniform(3, 1, None).unwrap();
        let ev = evaluate(&mdp, &p, &pi).unwrap();
        assert_eq!(ev.values.v, vec![2.0, 1.0, 0.0]);
        assert_eq!(ev.j, 2.0);
        assert!((ev.occupancy.d_state.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn horizon_constant_matches_table_value() {
        assert!((horizon_constant(0.99, 10) - 9.561792499119552).abs() < 1e-12);
    }
}
