//! Four-state chain whose best model is a strict mixture of its two vertices.
//!
//! States `A -> B -> C`, with `D` as a zero-reward sink. From `A` the chain
//! advances with probability `ωp + (1-ω)(1-p)`, from `B` with
//! `ω(1-p) + (1-ω)p`; otherwise it falls into `D`. `C` pays 1 and then
//! moves to `D`. The start state is `A`, so `J = γ² q_A q_B`, which peaks at
//! `ω = 1/2` although `V(B)` alone peaks at `ω = 1`.

use crate::envs::{Environment, ModelSpace, PolicySpace};
use crate::error::{ConfMdpError, Result};
use crate::mdp::{DeltaQMode, Policy, TabularConfMdp, TransitionModel};

pub const STATE_A: usize = 0;
pub const STATE_B: usize = 1;
pub const STATE_C: usize = 2;
pub const STATE_D: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoChainSpec {
    pub p: f64,
    pub gamma: f64,
}

impl Default for TwoChainSpec {
    fn default() -> Self {
        Self { p: 0.1, gamma: 0.9 }
    }
}

#[derive(Debug, Clone)]
pub struct TwoChain {
    pub spec: TwoChainSpec,
    pub mdp: TabularConfMdp,
    /// `[P_1, P_2]`: the `ω = 1` and `ω = 0` models.
    pub vertices: Vec<TransitionModel>,
}

fn chain_model(omega: f64, p: f64) -> Result<TransitionModel> {
    let q_a = omega * p + (1.0 - omega) * (1.0 - p);
    let q_b = omega * (1.0 - p) + (1.0 - omega) * p;
    let mut table = vec![0.0; 16];
    table[STATE_A * 4 + STATE_B] = q_a;
    table[STATE_A * 4 + STATE_D] = 1.0 - q_a;
    table[STATE_B * 4 + STATE_C] = q_b;
    table[STATE_B * 4 + STATE_D] = 1.0 - q_b;
    table[STATE_C * 4 + STATE_D] = 1.0;
    table[STATE_D * 4 + STATE_D] = 1.0;
    TransitionModel::new(4, 1, table)
}

pub fn build_two_chain(spec: &TwoChainSpec) -> Result<TwoChain> {
    if !(0.0..=1.0).contains(&spec.p) {
        return Err(ConfMdpError::Structural(format!(
            "two-chain p must lie in [0, 1], got {}",
            spec.p
        )));
    }
    let mdp = TabularConfMdp::new(
        4,
        1,
        vec![0.0, 0.0, 1.0, 0.0],
        spec.gamma,
        vec![1.0, 0.0, 0.0, 0.0],
    )?
    .with_delta_q(DeltaQMode::ComputedSup);
    let vertices = vec![chain_model(1.0, spec.p)?, chain_model(0.0, spec.p)?];
    Ok(TwoChain {
        spec: *spec,
        mdp,
        vertices,
    })
}

impl TwoChain {
    pub fn model_space(&self) -> ModelSpace {
        ModelSpace::ConvexHull {
            vertices: self.vertices.clone(),
        }
    }

    /// The chain as an iterable instance starting from `P_ω`.
    pub fn environment(&self, omega: f64) -> Result<Environment> {
        Ok(Environment {
            name: "two_chain".into(),
            mdp: self.mdp.clone(),
            policy_space: PolicySpace::default(),
            model_space: self.model_space(),
            initial_model: self.model_at(omega)?,
            initial_omega: Some(Self::omega(omega)),
        })
    }

    /// Coefficients of `P_ω` over `[P_1, P_2]`.
    pub fn omega(omega: f64) -> Vec<f64> {
        vec![omega, 1.0 - omega]
    }

    pub fn model_at(&self, omega: f64) -> Result<TransitionModel> {
        TransitionModel::convex_combination(&self.vertices, &Self::omega(omega))
    }

    pub fn policy(&self) -> Policy {
        Policy::uniform(4, 1, None).expect("single-action policy")
    }

    pub fn closed_form_v_a(&self, omega: f64) -> f64 {
        let (g, p) = (self.spec.gamma, self.spec.p);
        g * g * (omega * p + (1.0 - omega) * (1.0 - p)) * (omega * (1.0 - p) + (1.0 - omega) * p)
    }

    pub fn closed_form_v_b(&self, omega: f64) -> f64 {
        let (g, p) = (self.spec.gamma, self.spec.p);
        g * (omega * (1.0 - p) + (1.0 - omega) * p)
    }

    /// Return-scale advantages of `[P_1, P_2]` at `P_ω`.
    pub fn closed_form_advantages(&self, omega: f64) -> [f64; 2] {
        let (g, p) = (self.spec.gamma, self.spec.p);
        let k = g * g * (1.0 - 2.0 * p).powi(2) * (1.0 - 2.0 * omega);
        [k * (1.0 - omega), -k * omega]
    }
}
