//! Benchmark configurable MDPs.

pub mod racetrack;
pub mod random;
pub mod student_teacher;
pub mod two_chain;

use crate::mdp::TransitionModel;

/// The set of transition models the configurator may choose from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpace {
    /// Any model whose rows put mass only on allowed next states. The mask is
    /// indexed like the transition table; `None` allows every next state.
    Unconstrained { support: Option<Vec<bool>> },
    /// Convex hull of a finite set of vertex models.
    ConvexHull { vertices: Vec<TransitionModel> },
}

impl ModelSpace {
    pub fn vertices(&self) -> Option<&[TransitionModel]> {
        match self {
            ModelSpace::ConvexHull { vertices } => Some(vertices),
            ModelSpace::Unconstrained { .. } => None,
        }
    }
}

/// Policies the agent may play: any stochastic policy within a support mask.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicySpace {
    pub support: Option<Vec<bool>>,
}

/// A benchmark instance ready to be iterated on.
#[derive(Debug, Clone)]
pub struct Environment {
    pub name: String,
    pub mdp: crate::mdp::TabularConfMdp,
    pub policy_space: PolicySpace,
    pub model_space: ModelSpace,
    pub initial_model: TransitionModel,
    /// Hull coefficients of `initial_model` in parametric model spaces.
    pub initial_omega: Option<Vec<f64>>,
}

impl Environment {
    /// Uniform over the allowed actions of each state.
    pub fn initial_policy(&self) -> crate::error::Result<crate::mdp::Policy> {
        crate::mdp::Policy::uniform(
            self.mdp.n_states(),
            self.mdp.n_actions(),
            self.policy_space.support.clone(),
        )
    }
}
