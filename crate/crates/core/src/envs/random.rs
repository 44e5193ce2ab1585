//! Seeded random instances for property tests.
//!
//! All tables come from a `ChaCha8Rng` seeded with `seed`, drawn in a fixed
//! order (rewards, μ, model, policy, alternative model, alternative policy,
//! vertices, ω), so a failing seed replays exactly. `density` is the
//! probability that an entry of a stochastic row is nonzero; every row keeps
//! at least one positive entry.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{DeltaQMode, Policy, TabularConfMdp, TransitionModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomSpec {
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub density: f64,
    pub gamma: f64,
    pub n_vertices: usize,
}

impl RandomSpec {
    pub fn new(seed: u64, n_states: usize, n_actions: usize, density: f64) -> Self {
        Self {
            seed,
            n_states: n_states.max(1),
            n_actions: n_actions.max(1),
            density,
            gamma: 0.95,
            n_vertices: 0,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_vertices(mut self, n_vertices: usize) -> Self {
        self.n_vertices = n_vertices;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub mdp: TabularConfMdp,
    pub model: TransitionModel,
    pub policy: Policy,
    pub alt_model: TransitionModel,
    pub alt_policy: Policy,
    pub vertices: Vec<TransitionModel>,
    /// A point on the simplex over `vertices` (empty without vertices).
    pub omega: Vec<f64>,
}

impl RandomInstance {
    /// `Σ ω_i P_i`, or `None` when the instance has no vertices.
    pub fn hull_model(&self) -> Option<TransitionModel> {
        if self.vertices.is_empty() {
            return None;
        }
        TransitionModel::convex_combination(&self.vertices, &self.omega).ok()
    }
}

fn stochastic_row(rng: &mut ChaCha8Rng, len: usize, density: f64) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len)
        .map(|_| {
            if rng.gen::<f64>() < density {
                rng.gen_range(0.05..1.0)
            } else {
                0.0
            }
        })
        .collect();
    if row.iter().all(|&x| x == 0.0) {
        let i = rng.gen_range(0..len);
        row[i] = 1.0;
    }
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= sum);
    row
}

fn random_model(rng: &mut ChaCha8Rng, ns: usize, na: usize, density: f64) -> TransitionModel {
    let mut p = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        p.extend(stochastic_row(rng, ns, density));
    }
    TransitionModel::new(ns, na, p).expect("normalized rows")
}

fn random_policy(rng: &mut ChaCha8Rng, ns: usize, na: usize, density: f64) -> Policy {
    let mut pi = Vec::with_capacity(ns * na);
    for _ in 0..ns {
        pi.extend(stochastic_row(rng, na, density));
    }
    Policy::new(ns, na, pi, None).expect("normalized rows")
}

pub fn build_random(spec: &RandomSpec) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (ns, na) = (spec.n_states, spec.n_actions);
    let reward: Vec<f64> = (0..ns * na).map(|_| rng.gen::<f64>()).collect();
    let mu = stochastic_row(&mut rng, ns, spec.density);
    let mdp = TabularConfMdp::new(ns, na, reward, spec.gamma, mu)
        .expect("valid random MDP")
        .with_delta_q(DeltaQMode::ComputedSup);
    let model = random_model(&mut rng, ns, na, spec.density);
    let policy = random_policy(&mut rng, ns, na, spec.density);
    let alt_model = random_model(&mut rng, ns, na, spec.density);
    let alt_policy = random_policy(&mut rng, ns, na, spec.density);
    let vertices: Vec<TransitionModel> = (0..spec.n_vertices)
        .map(|_| random_model(&mut rng, ns, na, spec.density))
        .collect();
    let omega = if vertices.is_empty() {
        Vec::new()
    } else {
        stochastic_row(&mut rng, vertices.len(), 1.0)
    };
    RandomInstance {
        mdp,
        model,
        policy,
        alt_model,
        alt_policy,
        vertices,
        omega,
    }
}

/// A deterministic policy drawn uniformly at random.
pub fn random_deterministic_policy(rng: &mut impl Rng, ns: usize, na: usize) -> Policy {
    let actions: Vec<usize> = (0..ns).map(|_| rng.gen_range(0..na)).collect();
    Policy::deterministic(ns, na, &actions, None).expect("in-range actions")
}

/// A random stochastic policy (not seeded from a spec; for comparison oracles).
pub fn random_stochastic_policy(rng: &mut impl Rng, ns: usize, na: usize) -> Policy {
    let mut pi = Vec::with_capacity(ns * na);
    for _ in 0..ns {
        let mut row: Vec<f64> = (0..na).map(|_| rng.gen_range(0.0..1.0)).collect();
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= sum);
        pi.extend(row);
    }
    Policy::new(ns, na, pi, None).expect("normalized rows")
}

/// A random stochastic model (for comparison oracles).
pub fn random_stochastic_model(rng: &mut impl Rng, ns: usize, na: usize) -> TransitionModel {
    let mut p = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let mut row: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.0..1.0)).collect();
        // Occasionally concentrate mass to reach the vertices of the simplex.
        if rng.gen_bool(0.3) {
            let mut idx: Vec<usize> = (0..ns).collect();
            idx.shuffle(rng);
            for &i in idx.iter().skip(1) {
                row[i] = 0.0;
            }
        }
        let sum: f64 = row.iter().sum();
        if sum == 0.0 {
            row[0] = 1.0;
        } else {
            row.iter_mut().for_each(|x| *x /= sum);
        }
        p.extend(row);
    }
    TransitionModel::new(ns, na, p).expect("normalized rows")
}
