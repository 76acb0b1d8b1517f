//! Transition counting from dependent sample paths, model construction, and
//! the deterministic-favored categorical estimator.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::mdp::{SamplePath, TabularMdp};
use crate::{Error, Result};

/// Transition counts `n(s, a, q)` accumulated from sample paths, including
/// transitions into the absorbing state.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCounts {
    pub n: Array3<u64>,
    pub num_states: usize,
    pub num_actions: usize,
    /// Absorbing-state index; counts never originate here.
    pub absorbing_state: usize,
}

impl TransitionCounts {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            n: Array3::zeros((num_states, num_actions, num_states)),
            num_states,
            num_actions,
            absorbing_state: num_states - 1,
        }
    }

    /// Adds the transitions of one path. The landing state of step `t` is
    /// the state of step `t + 1`, or `s∘` for the final step.
    pub fn add_path(&mut self, path: &SamplePath) {
        for t in 0..path.steps.len() {
            let (s, a, _) = path.steps[t];
            let q = if t + 1 < path.steps.len() {
                path.steps[t + 1].0
            } else {
                self.absorbing_state
            };
            self.n[[s, a, q]] += 1;
        }
    }

    /// Elementwise merge; shards counted concurrently combine this way.
    pub fn merge(&mut self, other: &TransitionCounts) {
        self.n += &other.n;
    }

    /// Total samples from `(s, a)`.
    pub fn total(&self, s: usize, a: usize) -> u64 {
        (0..self.num_states).map(|q| self.n[[s, a, q]]).sum()
    }

    /// Samples from `(s, a)` that land in a non-absorbing state; this is the
    /// stopping-time total the concentration analysis is stated in.
    pub fn non_absorbing_total(&self, s: usize, a: usize) -> u64 {
        (0..self.num_states)
            .filter(|&q| q != self.absorbing_state)
            .map(|q| self.n[[s, a, q]])
            .sum()
    }

    /// Exports nonzero counts as CSV triples `s,a,q,n` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,a,q,n\n");
        for ((s, a, q), &count) in self.n.indexed_iter() {
            if count > 0 {
                out.push_str(&format!("{s},{a},{q},{count}\n"));
            }
        }
        out
    }
}

/// Counts all transitions in a dataset.
pub fn accumulate_counts(
    dataset: &[SamplePath],
    num_states: usize,
    num_actions: usize,
) -> TransitionCounts {
    let mut counts = TransitionCounts::zeros(num_states, num_actions);
    for path in dataset {
        counts.add_path(path);
    }
    counts
}

/// How empirical frequencies are turned into a leak-respecting row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    /// `P(s,a,q) = gamma * n(s,a,q) / sum_{q' != s∘} n(s,a,q')`; the form
    /// the concentration lemma analyzes. Default.
    #[default]
    Renormalized,
    /// Euclidean projection of the full empirical frequency row onto
    /// `{p : p(s∘) = 1 - gamma, sum_{q != s∘} p(q) = gamma, p >= 0}`.
    L2Projected,
}

/// An estimated model: the projected transition estimate plus the counts it
/// was built from.
#[derive(Debug, Clone)]
pub struct EstimatedModel {
    pub mdp: TabularMdp,
    pub counts: TransitionCounts,
    pub projection_mode: ProjectionMode,
}

/// Euclidean projection of `v` onto the simplex scaled to total mass `mass`,
/// by uniform shift with clipping, iterating until feasible.
fn project_to_scaled_simplex(v: &[f64], mass: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    let mut active: Vec<usize> = (0..v.len()).collect();
    loop {
        let active_sum: f64 = active.iter().map(|&i| out[i]).sum();
        let shift = (mass - active_sum) / active.len() as f64;
        for &i in &active {
            out[i] += shift;
        }
        let clipped: Vec<usize> = active.iter().copied().filter(|&i| out[i] < 0.0).collect();
        if clipped.is_empty() {
            break;
        }
        for &i in &clipped {
            out[i] = 0.0;
        }
        active.retain(|i| !clipped.contains(i));
        if active.is_empty() {
            break;
        }
    }
    out
}

/// Builds the estimated model from counts. Pairs with zero non-absorbing
/// samples self-loop with probability `gamma`.
pub fn build_model(
    counts: &TransitionCounts,
    gamma: f64,
    rewards: &Array2<f64>,
    initial_state: usize,
    mode: ProjectionMode,
) -> Result<EstimatedModel> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma {gamma} outside (0, 1)"
        )));
    }
    let s_abs = counts.absorbing_state;
    let n = counts.num_states;
    let mut transitions = Array3::zeros((n, counts.num_actions, n));
    for s in 0..n {
        for a in 0..counts.num_actions {
            if s == s_abs {
                transitions[[s, a, s]] = 1.0;
                continue;
            }
            transitions[[s, a, s_abs]] = 1.0 - gamma;
            let live_total = counts.non_absorbing_total(s, a);
            if live_total == 0 {
                transitions[[s, a, s]] = gamma;
                continue;
            }
            match mode {
                ProjectionMode::Renormalized => {
                    for q in 0..n {
                        if q != s_abs {
                            transitions[[s, a, q]] =
                                gamma * counts.n[[s, a, q]] as f64 / live_total as f64;
                        }
                    }
                }
                ProjectionMode::L2Projected => {
                    let total = counts.total(s, a) as f64;
                    let freqs: Vec<f64> = (0..n)
                        .filter(|&q| q != s_abs)
                        .map(|q| counts.n[[s, a, q]] as f64 / total)
                        .collect();
                    let projected = project_to_scaled_simplex(&freqs, gamma);
                    for (idx, q) in (0..n).filter(|&q| q != s_abs).enumerate() {
                        transitions[[s, a, q]] = projected[idx];
                    }
                }
            }
        }
    }
    let mut mdp = TabularMdp::new(gamma, transitions, rewards.clone(), initial_state)?;
    mdp.absorbing_state = s_abs;
    Ok(EstimatedModel {
        mdp,
        counts: counts.clone(),
        projection_mode: mode,
    })
}

/// Which categorical estimator produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    SampleMean,
    DeterministicFavored,
}

/// A categorical probability estimate over `K` values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoricalEstimate {
    pub probs: Vec<f64>,
    pub estimator: EstimatorKind,
    /// Index of the boosted mode, recorded for reproducibility (DF only).
    pub argmax: Option<usize>,
}

fn total_count(counts: &[u64]) -> Result<u64> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::InvalidParameter(
            "categorical estimators need at least one sample".into(),
        ));
    }
    Ok(n)
}

/// Sample-mean estimator: `p_i = N_i / N`.
pub fn sample_mean_categorical(counts: &[u64]) -> Result<CategoricalEstimate> {
    let n = total_count(counts)? as f64;
    Ok(CategoricalEstimate {
        probs: counts.iter().map(|&c| c as f64 / n).collect(),
        estimator: EstimatorKind::SampleMean,
        argmax: None,
    })
}

/// Deterministic-favored estimator: `p_i = (N_i + sqrt(N) 1_d(i)) / (N + sqrt(N))`
/// where `d` is the empirical mode. Ties break to the lowest index.
pub fn df_categorical(counts: &[u64]) -> Result<CategoricalEstimate> {
    let n = total_count(counts)?;
    let sqrt_n = (n as f64).sqrt();
    let d = counts
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.cmp(b).then(j.cmp(i)))
        .map(|(i, _)| i)
        .unwrap();
    let denom = n as f64 + sqrt_n;
    Ok(CategoricalEstimate {
        probs: counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (c as f64 + if i == d { sqrt_n } else { 0.0 }) / denom)
            .collect(),
        estimator: EstimatorKind::DeterministicFavored,
        argmax: Some(d),
    })
}

/// Expected sample-mean estimate of `sigma` from a single path in the
/// `gamma = 1` limit: `sum_{k >= 1} (1-sigma)^{k-1} sigma / k`, summed until
/// the absolute tail is below 1e-12. Equals `-sigma ln(sigma) / (1 - sigma)`.
pub fn expected_sigma_hat_single_path(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma {sigma} outside (0, 1)"
        )));
    }
    let mut sum = 0.0;
    let mut geom = sigma; // (1-sigma)^{k-1} * sigma
    let mut k = 1u64;
    loop {
        let term = geom / k as f64;
        sum += term;
        // remaining tail is below term * (1-sigma)/sigma * ... ; bound by
        // geometric series of the next term
        if geom * (1.0 - sigma) / (sigma * (k + 1) as f64) < 1e-12 {
            break;
        }
        geom *= 1.0 - sigma;
        k += 1;
    }
    Ok(sum)
}
