//! Tabular configurable MDPs and safe joint policy/model iteration.
//!
//! A configurable MDP lets an agent choose its policy and, within a model
//! space, the environment's transition model. This crate evaluates
//! model-policy pairs exactly, computes the relative advantages and
//! dissimilarities entering the performance-improvement lower bounds, and
//! runs the bound-maximizing iteration that moves both the policy and the
//! model toward greedy (or persistent) targets without ever decreasing the
//! expected return.
//!
//! Modules build bottom-up: [`mdp`] (evaluation), [`advantage`], [`bounds`],
//! [`algorithm`], [`envs`] (benchmark instances), [`diagnostics`] (numerical
//! oracles) and [`runner`] (configs, CSV output).

pub mod advantage;
pub mod algorithm;
pub mod bounds;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod mdp;
pub mod runner;

pub use algorithm::{run, RunResult, Strategy, StrategyConfig, TargetMode};
pub use envs::{Environment, ModelSpace, PolicySpace};
pub use error::{ConfMdpError, Result};
pub use mdp::{evaluate, DeltaQMode, Evaluation, Policy, TabularConfMdp, TransitionModel};
