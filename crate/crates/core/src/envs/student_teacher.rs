//! Alphabet-arithmetic concept learning.
//!
//! A student assigns values `0..=m` to `n` literals; a teacher shows
//! examples `Σ_{i∈I} L_i = l` with `2 ≤ |I| ≤ p`. A state is an
//! (example, current assignment) pair and an action is the next assignment,
//! reachable only if it changes the literals by at most `k` in L1 distance.
//! The reward is 1 when the chosen assignment satisfies the shown example.
//! The teacher (the configurable model) picks the next example given the
//! state and action; the next assignment is always the chosen one.
//!
//! States are indexed `example * |A| + assignment`. Assignments use mixed
//! radix `m + 1` with `L_1` most significant; examples are ordered by
//! literal subset (by size, then lexicographically) and then by answer.

use crate::envs::{Environment, ModelSpace, PolicySpace};
use crate::error::{ConfMdpError, Result};
use crate::mdp::{horizon_constant, DeltaQMode, TabularConfMdp, TransitionModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentTeacherSpec {
    /// `n`
    pub n_literals: usize,
    /// `m`
    pub max_value: usize,
    /// `k`
    pub max_update: usize,
    /// `p`
    pub max_statement_literals: usize,
    /// `H`, used only through the `ΔQ` constant.
    pub horizon: u32,
    pub gamma: f64,
}

impl StudentTeacherSpec {
    pub fn new(n: usize, m: usize, k: usize, p: usize) -> Self {
        Self {
            n_literals: n,
            max_value: m,
            max_update: k,
            max_statement_literals: p,
            horizon: 10,
            gamma: 0.99,
        }
    }

    /// `"n-m-k-p"`, e.g. `"2-1-1-2"`.
    pub fn label(&self) -> String {
        format!(
            "{}-{}-{}-{}",
            self.n_literals, self.max_value, self.max_update, self.max_statement_literals
        )
    }

    fn validate(&self) -> Result<()> {
        let (n, m, k, p) = (
            self.n_literals,
            self.max_value,
            self.max_update,
            self.max_statement_literals,
        );
        if p < 2 || p > n {
            return Err(ConfMdpError::Structural(format!(
                "statement size p = {p} must satisfy 2 <= p <= n = {n}"
            )));
        }
        if m < 1 || k < 1 {
            return Err(ConfMdpError::Structural(
                "max_value and max_update must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `Σ_{i ∈ literals} L_i = answer`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub literals: Vec<usize>,
    pub answer: usize,
}

impl Example {
    pub fn satisfied_by(&self, assignment: &[usize]) -> bool {
        self.literals.iter().map(|&i| assignment[i]).sum::<usize>() == self.answer
    }
}

#[derive(Debug, Clone)]
pub struct StudentTeacher {
    pub spec: StudentTeacherSpec,
    pub examples: Vec<Example>,
    pub assignments: Vec<Vec<usize>>,
    pub env: Environment,
}

impl StudentTeacher {
    pub fn n_examples(&self) -> usize {
        self.examples.len()
    }

    pub fn state(&self, example: usize, assignment: usize) -> usize {
        example * self.assignments.len() + assignment
    }

    /// `(example, assignment)` of a state index.
    pub fn decode(&self, s: usize) -> (usize, usize) {
        (s / self.assignments.len(), s % self.assignments.len())
    }
}

fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, size, &mut Vec::new(), &mut out);
    out
}

fn enumerate_examples(spec: &StudentTeacherSpec) -> Vec<Example> {
    let mut out = Vec::new();
    for size in 2..=spec.max_statement_literals {
        for literals in subsets(spec.n_literals, size) {
            for answer in 0..=size * spec.max_value {
                out.push(Example {
                    literals: literals.clone(),
                    answer,
                });
            }
        }
    }
    out
}

fn enumerate_assignments(n: usize, m: usize) -> Vec<Vec<usize>> {
    let radix = m + 1;
    let count = radix.pow(n as u32);
    (0..count)
        .map(|mut idx| {
            let mut a = vec![0; n];
            for slot in a.iter_mut().rev() {
                *slot = idx % radix;
                idx /= radix;
            }
            a
        })
        .collect()
}

fn l1(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).map(|(&x, &y)| x.abs_diff(y)).sum()
}

/// Builds the instance with a uniform teacher and `ΔQ = (1-γ^H)/(1-γ)`.
///
/// The model space is unconstrained over next examples: the support mask
/// allows exactly the states whose assignment equals the chosen action.
pub fn build_student_teacher(spec: &StudentTeacherSpec) -> Result<StudentTeacher> {
    spec.validate()?;
    let examples = enumerate_examples(spec);
    if examples.is_empty() {
        return Err(ConfMdpError::Structural("parameters yield no examples".into()));
    }
    let assignments = enumerate_assignments(spec.n_literals, spec.max_value);
    let (ne, na) = (examples.len(), assignments.len());
    let ns = ne * na;

    let mut reward = vec![0.0; ns * na];
    let mut action_support = vec![false; ns * na];
    for e in 0..ne {
        for cur in 0..na {
            let s = e * na + cur;
            for a in 0..na {
                action_support[s * na + a] =
                    l1(&assignments[cur], &assignments[a]) <= spec.max_update;
                if examples[e].satisfied_by(&assignments[a]) {
                    reward[s * na + a] = 1.0;
                }
            }
        }
    }

    let mut model_support = vec![false; ns * na * ns];
    let mut p = vec![0.0; ns * na * ns];
    let w = 1.0 / ne as f64;
    for s in 0..ns {
        for a in 0..na {
            let base = (s * na + a) * ns;
            for e2 in 0..ne {
                model_support[base + e2 * na + a] = true;
                p[base + e2 * na + a] = w;
            }
        }
    }

    let mdp =
        TabularConfMdp::new(ns, na, reward, spec.gamma, vec![1.0 / ns as f64; ns])?.with_delta_q(
            DeltaQMode::Constant(horizon_constant(spec.gamma, spec.horizon)),
        );
    let env = Environment {
        name: format!("student_teacher {}", spec.label()),
        mdp,
        policy_space: PolicySpace {
            support: Some(action_support),
        },
        model_space: ModelSpace::Unconstrained {
            support: Some(model_support),
        },
        initial_model: TransitionModel::new(ns, na, p)?,
        initial_omega: None,
    };
    Ok(StudentTeacher {
        spec: *spec,
        examples,
        assignments,
        env,
    })
}
