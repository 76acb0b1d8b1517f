//! Exact tabular MDP representation, path sampling under a behavior policy,
//! and exact solvers for values, occupancy measures, first-visit and return
//! probabilities.
//!
//! Conventions: state and action indices are 0-based. The absorbing final
//! state `s∘` self-loops with probability 1 and has zero reward; every
//! non-absorbing state transitions to it with probability `1 - gamma` under
//! every action. In freshly constructed MDPs `s∘` is the last index;
//! augmented MDPs (delta-state constructions) may place it elsewhere and
//! record the index in [`TabularMdp::absorbing_state`].

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Array3};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance for row-stochasticity and structural checks.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// A tabular MDP with a built-in absorbing final state and discount leak.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Probability of NOT transitioning to `s∘` per step; must be in (0, 1).
    pub gamma: f64,
    /// S x A x S stochastic tensor.
    pub transitions: Array3<f64>,
    /// S x A matrix of known mean rewards in [0, 1].
    pub rewards: Array2<f64>,
    pub initial_state: usize,
    pub absorbing_state: usize,
}

/// JSON wire format for [`TabularMdp`]. The absorbing state is by convention
/// the last index and is not part of the document.
#[derive(Debug, Serialize, Deserialize)]
struct MdpDocument {
    gamma: f64,
    num_states: usize,
    num_actions: usize,
    transitions: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<f64>>,
    initial_state: usize,
}

impl TabularMdp {
    /// Builds an MDP with `s∘` at the last index and validates it.
    pub fn new(
        gamma: f64,
        transitions: Array3<f64>,
        rewards: Array2<f64>,
        initial_state: usize,
    ) -> Result<Self> {
        let num_states = transitions.shape()[0];
        let num_actions = transitions.shape()[1];
        let mdp = Self {
            num_states,
            num_actions,
            gamma,
            transitions,
            rewards,
            initial_state,
            absorbing_state: num_states - 1,
        };
        let report = validate_mdp(&mdp);
        if report.is_empty() {
            Ok(mdp)
        } else {
            Err(Error::InvalidModel(report))
        }
    }

    /// Iterator over non-absorbing state indices.
    pub fn live_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_states).filter(move |&s| s != self.absorbing_state)
    }

    pub fn to_json(&self) -> Result<String> {
        if self.absorbing_state != self.num_states - 1 {
            return Err(Error::InvalidParameter(
                "only MDPs with the absorbing state at the last index serialize".into(),
            ));
        }
        let doc = MdpDocument {
            gamma: self.gamma,
            num_states: self.num_states,
            num_actions: self.num_actions,
            transitions: (0..self.num_states)
                .map(|s| {
                    (0..self.num_actions)
                        .map(|a| (0..self.num_states).map(|q| self.transitions[[s, a, q]]).collect())
                        .collect()
                })
                .collect(),
            rewards: (0..self.num_states)
                .map(|s| (0..self.num_actions).map(|a| self.rewards[[s, a]]).collect())
                .collect(),
            initial_state: self.initial_state,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Parses and validates the JSON document format.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        let s = doc.num_states;
        let a = doc.num_actions;
        let mut transitions = Array3::zeros((s, a, s));
        for (si, row) in doc.transitions.iter().enumerate() {
            for (ai, arow) in row.iter().enumerate() {
                for (qi, &p) in arow.iter().enumerate() {
                    transitions[[si, ai, qi]] = p;
                }
            }
        }
        let mut rewards = Array2::zeros((s, a));
        for (si, row) in doc.rewards.iter().enumerate() {
            for (ai, &r) in row.iter().enumerate() {
                rewards[[si, ai]] = r;
            }
        }
        Self::new(doc.gamma, transitions, rewards, doc.initial_state)
    }
}

/// A stationary stochastic policy: S x A matrix of action probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub probs: Array2<f64>,
}

impl Policy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.outer_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::InvalidParameter(format!(
                    "policy row {s} sums to {sum}, not 1"
                )));
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "policy row {s} has a negative entry"
                )));
            }
        }
        Ok(Self { probs })
    }

    /// Uniform policy over `num_actions` actions in every state.
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((num_states, num_actions), 1.0 / num_actions as f64),
        }
    }

    /// Deterministic policy from a per-state action choice.
    pub fn deterministic(choices: &[usize], num_actions: usize) -> Self {
        let mut probs = Array2::zeros((choices.len(), num_actions));
        for (s, &a) in choices.iter().enumerate() {
            probs[[s, a]] = 1.0;
        }
        Self { probs }
    }

    pub fn num_states(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn num_actions(&self) -> usize {
        self.probs.shape()[1]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let policy: Policy = serde_json::from_str(text)?;
        Self::new(policy.probs)
    }
}

fn default_true() -> bool {
    true
}

/// A finite sample path ending at `s∘`. Steps record the state, the action,
/// and the realized reward; the landing in `s∘` itself is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    /// Ordered (state, action, reward) triples; no step has state `s∘`.
    pub steps: Vec<(usize, usize, f64)>,
    /// Whether `s∘` was reached; always true for sampled paths.
    #[serde(default = "default_true", skip_serializing)]
    pub terminal: bool,
}

impl SamplePath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Sum of realized rewards along the path.
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|&(_, _, r)| r).sum()
    }
}

/// Writes a dataset as JSON lines, one path per line.
pub fn dataset_to_jsonl(paths: &[SamplePath]) -> Result<String> {
    let mut out = String::new();
    for path in paths {
        out.push_str(&serde_json::to_string(path)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a JSON-lines dataset.
pub fn dataset_from_jsonl(text: &str) -> Result<Vec<SamplePath>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Per-(s, a) occupancy statistics: expected visit counts `x`, first-visit
/// probabilities `rho`, and return probabilities `lambda`, related by
/// `x = rho / (1 - lambda)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OccupancyStats {
    pub x: Array2<f64>,
    pub rho: Array2<f64>,
    pub lambda: Array2<f64>,
}

/// Checks every structural invariant and returns a report of violations;
/// an empty report means the MDP is valid.
pub fn validate_mdp(mdp: &TabularMdp) -> Vec<String> {
    let mut report = Vec::new();
    let s_abs = mdp.absorbing_state;
    if mdp.num_states < 2 {
        report.push("MDP needs at least one non-absorbing state plus the absorbing state".into());
        return report;
    }
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
        report.push(format!("gamma {} outside (0, 1)", mdp.gamma));
    }
    if mdp.initial_state >= mdp.num_states || mdp.initial_state == s_abs {
        report.push(format!("initial state {} invalid", mdp.initial_state));
    }
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let row_sum: f64 = (0..mdp.num_states).map(|q| mdp.transitions[[s, a, q]]).sum();
            if (row_sum - 1.0).abs() > ROW_TOLERANCE {
                report.push(format!("row not stochastic at ({s},{a}): sums to {row_sum}"));
            }
            if (0..mdp.num_states).any(|q| mdp.transitions[[s, a, q]] < 0.0) {
                report.push(format!("negative probability at ({s},{a})"));
            }
            let r = mdp.rewards[[s, a]];
            if !(0.0..=1.0).contains(&r) {
                report.push(format!("reward {r} at ({s},{a}) outside [0, 1]"));
            }
            if s == s_abs {
                if (mdp.transitions[[s, a, s]] - 1.0).abs() > ROW_TOLERANCE {
                    report.push(format!("absorbing state does not self-loop under action {a}"));
                }
                if r != 0.0 {
                    report.push(format!("absorbing state has nonzero reward under action {a}"));
                }
            } else {
                let leak = mdp.transitions[[s, a, s_abs]];
                if (leak - (1.0 - mdp.gamma)).abs() > ROW_TOLERANCE {
                    report.push(format!(
                        "leak != 1-gamma at ({s},{a}): {leak} vs {}",
                        1.0 - mdp.gamma
                    ));
                }
            }
        }
    }
    report
}

/// Precomputed sampling tables for one (MDP, policy) pair. Immutable and
/// `Sync`; each worker supplies its own random stream.
pub struct PathSampler<'a> {
    mdp: &'a TabularMdp,
    action_dists: Vec<WeightedIndex<f64>>,
    next_dists: Vec<Vec<WeightedIndex<f64>>>,
}

impl<'a> PathSampler<'a> {
    pub fn new(mdp: &'a TabularMdp, policy: &Policy) -> Result<Self> {
        if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling requires gamma in (0, 1), got {}",
                mdp.gamma
            )));
        }
        if policy.num_states() != mdp.num_states || policy.num_actions() != mdp.num_actions {
            return Err(Error::InvalidParameter(
                "policy dimensions do not match the MDP".into(),
            ));
        }
        let mut action_dists = Vec::with_capacity(mdp.num_states);
        let mut next_dists = Vec::with_capacity(mdp.num_states);
        for s in 0..mdp.num_states {
            let weights: Vec<f64> = (0..mdp.num_actions).map(|a| policy.probs[[s, a]]).collect();
            action_dists.push(
                WeightedIndex::new(&weights)
                    .map_err(|e| Error::InvalidParameter(format!("policy row {s}: {e}")))?,
            );
            let mut per_action = Vec::with_capacity(mdp.num_actions);
            for a in 0..mdp.num_actions {
                let weights: Vec<f64> =
                    (0..mdp.num_states).map(|q| mdp.transitions[[s, a, q]]).collect();
                per_action.push(
                    WeightedIndex::new(&weights)
                        .map_err(|e| Error::InvalidParameter(format!("row ({s},{a}): {e}")))?,
                );
            }
            next_dists.push(per_action);
        }
        Ok(Self {
            mdp,
            action_dists,
            next_dists,
        })
    }

    /// Samples one path from the initial state until `s∘` is reached.
    /// Rewards are realized deterministically at their means.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> SamplePath {
        let mut steps = Vec::new();
        let mut s = self.mdp.initial_state;
        while s != self.mdp.absorbing_state {
            let a = self.action_dists[s].sample(rng);
            steps.push((s, a, self.mdp.rewards[[s, a]]));
            s = self.next_dists[s][a].sample(rng);
        }
        SamplePath {
            steps,
            terminal: true,
        }
    }
}

/// One-shot convenience wrapper over [`PathSampler`].
pub fn sample_path<R: Rng>(mdp: &TabularMdp, policy: &Policy, rng: &mut R) -> Result<SamplePath> {
    Ok(PathSampler::new(mdp, policy)?.sample(rng))
}

/// Policy-averaged transition matrix `P_pi(s, q) = sum_a pi(s, a) P(s, a, q)`.
fn policy_transition_matrix(mdp: &TabularMdp, policy: &Policy) -> DMatrix<f64> {
    let n = mdp.num_states;
    DMatrix::from_fn(n, n, |s, q| {
        (0..mdp.num_actions)
            .map(|a| policy.probs[[s, a]] * mdp.transitions[[s, a, q]])
            .sum()
    })
}

/// Solves the Bellman evaluation equations exactly: `(I - P_pi) v = r_pi`
/// over non-absorbing states with `v(s∘) = 0`.
pub fn exact_value(mdp: &TabularMdp, policy: &Policy) -> Result<Array1<f64>> {
    let n = mdp.num_states;
    let p_pi = policy_transition_matrix(mdp, policy);
    let mut a = DMatrix::identity(n, n) - p_pi;
    let mut b = DVector::from_fn(n, |s, _| {
        (0..mdp.num_actions)
            .map(|ai| policy.probs[[s, ai]] * mdp.rewards[[s, ai]])
            .sum()
    });
    // enforce v(s_abs) = 0 by row elimination
    let s_abs = mdp.absorbing_state;
    for q in 0..n {
        a[(s_abs, q)] = if q == s_abs { 1.0 } else { 0.0 };
    }
    b[s_abs] = 0.0;
    let v = crate::linalg::solve(&a, &b)?;
    Ok(Array1::from_iter(v.iter().copied()))
}

/// Solves the flow equations `mu = e_{s0} + P_pi^T mu` over non-absorbing
/// states and returns the occupancy measure `x(s, a) = mu(s) pi(s, a)`.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &Policy) -> Result<Array2<f64>> {
    let n = mdp.num_states;
    let p_pi = policy_transition_matrix(mdp, policy);
    let mut a = DMatrix::identity(n, n) - p_pi.transpose();
    let mut b = DVector::zeros(n);
    b[mdp.initial_state] = 1.0;
    let s_abs = mdp.absorbing_state;
    for q in 0..n {
        a[(s_abs, q)] = if q == s_abs { 1.0 } else { 0.0 };
    }
    b[s_abs] = 0.0;
    let mu = crate::linalg::solve(&a, &b)?;
    let mut x = Array2::zeros((n, mdp.num_actions));
    for s in mdp.live_states() {
        for ai in 0..mdp.num_actions {
            x[[s, ai]] = mu[s] * policy.probs[[s, ai]];
        }
    }
    Ok(x)
}

/// Solves the first-visit system for target pair `(s, a)`:
/// `h(s') = sum_a' pi(s',a') [1{(s',a')=(s,a)} + 1{(s',a')!=(s,a)} sum_q P(s',a',q) h(q)]`
/// with `h(s∘) = 0`. Returns the full vector `h`.
fn first_visit_system(
    mdp: &TabularMdp,
    policy: &Policy,
    target_s: usize,
    target_a: usize,
) -> Result<DVector<f64>> {
    let n = mdp.num_states;
    let mut a = DMatrix::identity(n, n);
    let mut b = DVector::zeros(n);
    for s in mdp.live_states() {
        for ai in 0..mdp.num_actions {
            let pi = policy.probs[[s, ai]];
            if s == target_s && ai == target_a {
                b[s] += pi;
            } else {
                for q in 0..n {
                    a[(s, q)] -= pi * mdp.transitions[[s, ai, q]];
                }
            }
        }
    }
    let s_abs = mdp.absorbing_state;
    for q in 0..n {
        a[(s_abs, q)] = if q == s_abs { 1.0 } else { 0.0 };
    }
    b[s_abs] = 0.0;
    crate::linalg::solve(&a, &b)
}

/// Probability that action `a` is ever taken at state `s` along a path from
/// the initial state.
pub fn first_visit_prob(mdp: &TabularMdp, policy: &Policy, s: usize, a: usize) -> Result<f64> {
    if s == mdp.absorbing_state {
        return Err(Error::InvalidParameter(
            "first-visit probability is undefined at the absorbing state".into(),
        ));
    }
    let h = first_visit_system(mdp, policy, s, a)?;
    Ok(h[mdp.initial_state])
}

/// Probability of taking `(s, a)` again given the current state is `s` and
/// the current action is `a`.
pub fn return_prob(mdp: &TabularMdp, policy: &Policy, s: usize, a: usize) -> Result<f64> {
    if s == mdp.absorbing_state {
        return Err(Error::InvalidParameter(
            "return probability is undefined at the absorbing state".into(),
        ));
    }
    let h = first_visit_system(mdp, policy, s, a)?;
    Ok((0..mdp.num_states).map(|q| mdp.transitions[[s, a, q]] * h[q]).sum())
}

/// Computes `x`, `rho`, `lambda` for every non-absorbing pair.
pub fn occupancy_stats(mdp: &TabularMdp, policy: &Policy) -> Result<OccupancyStats> {
    let x = exact_occupancy(mdp, policy)?;
    let mut rho = Array2::zeros((mdp.num_states, mdp.num_actions));
    let mut lambda = Array2::zeros((mdp.num_states, mdp.num_actions));
    for s in mdp.live_states() {
        for a in 0..mdp.num_actions {
            let h = first_visit_system(mdp, policy, s, a)?;
            rho[[s, a]] = h[mdp.initial_state];
            lambda[[s, a]] = (0..mdp.num_states).map(|q| mdp.transitions[[s, a, q]] * h[q]).sum();
        }
    }
    Ok(OccupancyStats { x, rho, lambda })
}

/// The two-state MDP of the bias demonstration: a single action, states
/// `{s0, s1, s∘}` with `P(s0,a,s1) = sigma`, `P(s0,a,s0) = gamma - sigma`,
/// and `P(s1,a,s1) = gamma`.
pub fn make_figure1_mdp(sigma: f64, gamma: f64) -> Result<TabularMdp> {
    if !(0.0..1.0).contains(&gamma) || gamma <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gamma {gamma} outside (0, 1)"
        )));
    }
    if !(0.0..=gamma).contains(&sigma) {
        return Err(Error::InvalidParameter(format!(
            "sigma {sigma} outside [0, gamma]"
        )));
    }
    let mut transitions = Array3::zeros((3, 1, 3));
    transitions[[0, 0, 0]] = gamma - sigma;
    transitions[[0, 0, 1]] = sigma;
    transitions[[0, 0, 2]] = 1.0 - gamma;
    transitions[[1, 0, 1]] = gamma;
    transitions[[1, 0, 2]] = 1.0 - gamma;
    transitions[[2, 0, 2]] = 1.0;
    let rewards = Array2::zeros((3, 1));
    TabularMdp::new(gamma, transitions, rewards, 0)
}

/// A single-state MDP `{s0, s∘}` with `num_actions` identical actions and
/// reward `reward` at `s0`. Handy in tests and small experiments.
pub fn make_single_state_mdp(gamma: f64, num_actions: usize, reward: f64) -> Result<TabularMdp> {
    let mut transitions = Array3::zeros((2, num_actions, 2));
    let mut rewards = Array2::zeros((2, num_actions));
    for a in 0..num_actions {
        transitions[[0, a, 0]] = gamma;
        transitions[[0, a, 1]] = 1.0 - gamma;
        transitions[[1, a, 1]] = 1.0;
        rewards[[0, a]] = reward;
    }
    TabularMdp::new(gamma, transitions, rewards, 0)
}
