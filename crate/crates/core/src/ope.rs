//! Off-policy evaluation (model-based and importance sampling), off-policy
//! optimization on the estimated model, and the delta-state robust
//! constructions behind certified value intervals and robust occupancy
//! bounds.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::estimation::{accumulate_counts, build_model, EstimatedModel, ProjectionMode};
use crate::mdp::{exact_value, Policy, SamplePath, TabularMdp};
use crate::{Error, Result};

/// Sup-norm stopping threshold for value iteration.
pub const VI_TOLERANCE: f64 = 1e-10;
/// Iteration cap for value iteration.
pub const VI_MAX_ITERATIONS: usize = 1_000_000;

/// A certified interval for the value at the initial state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueInterval {
    pub lower: f64,
    pub upper: f64,
    /// Per-(s, a) L1 radii the interval was computed from.
    pub radii: Array2<f64>,
    /// Confidence level the radii were derived at, if any.
    pub delta: Option<f64>,
}

/// Optimistic and pessimistic MDPs built by redirecting the disagreement
/// mass between two kernels into per-pair auxiliary states.
#[derive(Debug, Clone)]
pub struct DeltaMdpPair {
    /// Auxiliary states collect reward 1.
    pub optimistic: TabularMdp,
    /// Auxiliary states collect reward 0.
    pub pessimistic: TabularMdp,
    /// Origin pair of each auxiliary state, in state-index order starting at
    /// `delta_offset`.
    pub delta_pairs: Vec<(usize, usize)>,
    /// State index of the first auxiliary state.
    pub delta_offset: usize,
}

impl DeltaMdpPair {
    /// Extends a policy over the original states to the augmented state
    /// space; auxiliary states get a uniform row (all actions behave
    /// identically there, so the choice does not matter).
    pub fn extend_policy(&self, policy: &Policy) -> Policy {
        let n = self.optimistic.num_states;
        let a = self.optimistic.num_actions;
        let mut probs = Array2::from_elem((n, a), 1.0 / a as f64);
        for s in 0..policy.num_states() {
            for ai in 0..a {
                probs[[s, ai]] = policy.probs[[s, ai]];
            }
        }
        Policy { probs }
    }
}

/// Model-based off-policy evaluation: builds the estimated model from the
/// dataset and solves the target policy's value exactly on it.
pub fn model_based_evaluate(
    dataset: &[SamplePath],
    target_policy: &Policy,
    gamma: f64,
    rewards: &Array2<f64>,
    initial_state: usize,
    mode: ProjectionMode,
) -> Result<f64> {
    let (s, a) = (rewards.shape()[0], rewards.shape()[1]);
    let counts = accumulate_counts(dataset, s, a);
    let model = build_model(&counts, gamma, rewards, initial_state, mode)?;
    let v = exact_value(&model.mdp, target_policy)?;
    Ok(v[initial_state])
}

/// Synchronous value iteration with greedy action selection; returns the
/// value vector and the greedy deterministic policy.
pub fn value_iteration(mdp: &TabularMdp) -> Result<(Array1<f64>, Policy)> {
    let n = mdp.num_states;
    let mut v = Array1::<f64>::zeros(n);
    for _ in 0..VI_MAX_ITERATIONS {
        let mut next = Array1::<f64>::zeros(n);
        for s in mdp.live_states() {
            let best = (0..mdp.num_actions)
                .map(|a| {
                    mdp.rewards[[s, a]]
                        + (0..n).map(|q| mdp.transitions[[s, a, q]] * v[q]).sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            next[s] = best;
        }
        let diff = v
            .iter()
            .zip(next.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if diff <= VI_TOLERANCE {
            let choices: Vec<usize> = (0..n)
                .map(|s| {
                    if s == mdp.absorbing_state {
                        return 0;
                    }
                    (0..mdp.num_actions)
                        .map(|a| {
                            mdp.rewards[[s, a]]
                                + (0..n).map(|q| mdp.transitions[[s, a, q]] * v[q]).sum::<f64>()
                        })
                        .enumerate()
                        .max_by(|(i, a), (j, b)| a.partial_cmp(b).unwrap().then(j.cmp(i)))
                        .map(|(i, _)| i)
                        .unwrap()
                })
                .collect();
            let policy = Policy::deterministic(&choices, mdp.num_actions);
            return Ok((v, policy));
        }
    }
    Err(Error::NoConvergence(VI_MAX_ITERATIONS))
}

/// Model-based off-policy optimization: value iteration on the estimated
/// model, returning the greedy policy and its estimated value.
pub fn model_based_optimize(
    dataset: &[SamplePath],
    gamma: f64,
    rewards: &Array2<f64>,
    initial_state: usize,
) -> Result<(Policy, f64)> {
    let (s, a) = (rewards.shape()[0], rewards.shape()[1]);
    let counts = accumulate_counts(dataset, s, a);
    let model = build_model(&counts, gamma, rewards, initial_state, ProjectionMode::Renormalized)?;
    let (v, policy) = value_iteration(&model.mdp)?;
    Ok((policy, v[initial_state]))
}

/// Importance-sampling off-policy evaluation. Per-path weights use the
/// policy-ratio product only; the transition terms of the path-probability
/// ratio cancel since both policies act on the same dynamics.
pub fn importance_sampling_evaluate(
    dataset: &[SamplePath],
    target_policy: &Policy,
    behavior_policy: &Policy,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidParameter(
            "importance sampling needs at least one path".into(),
        ));
    }
    let mut total = 0.0;
    for path in dataset {
        let mut weight = 1.0;
        for &(s, a, _) in &path.steps {
            let b = behavior_policy.probs[[s, a]];
            let t = target_policy.probs[[s, a]];
            if b == 0.0 {
                if t > 0.0 {
                    return Err(Error::UndefinedWeight {
                        state: s,
                        action: a,
                        target_prob: t,
                    });
                }
                // realized action impossible under both policies contributes
                // weight 0 either way
                weight = 0.0;
                break;
            }
            weight *= t / b;
        }
        total += weight * path.total_reward();
    }
    Ok(total / dataset.len() as f64)
}

/// Builds the optimistic/pessimistic pair for two kernels with identical
/// leak structure: the common part is `min(P_a, P_b)` and the disagreement
/// mass `sum_q |P_a - P_b| / 2` is redirected to a per-pair auxiliary state
/// that self-loops with probability `gamma` and pays reward 1 (optimistic)
/// or 0 (pessimistic).
pub fn construct_delta_mdps(
    p_a: &Array3<f64>,
    p_b: &Array3<f64>,
    gamma: f64,
    rewards: &Array2<f64>,
    initial_state: usize,
) -> Result<DeltaMdpPair> {
    if p_a.shape() != p_b.shape() {
        return Err(Error::InvalidParameter("kernel shapes differ".into()));
    }
    let s_count = p_a.shape()[0];
    let a_count = p_a.shape()[1];
    let s_abs = s_count - 1;
    for s in 0..s_count {
        for a in 0..a_count {
            let leak_a = p_a[[s, a, s_abs]];
            let leak_b = p_b[[s, a, s_abs]];
            if (leak_a - leak_b).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "leak mismatch at ({s},{a}): {leak_a} vs {leak_b}"
                )));
            }
        }
    }

    let delta_pairs: Vec<(usize, usize)> = (0..s_count)
        .filter(|&s| s != s_abs)
        .flat_map(|s| (0..a_count).map(move |a| (s, a)))
        .collect();
    let delta_offset = s_count;
    let n = s_count + delta_pairs.len();

    let mut transitions = Array3::zeros((n, a_count, n));
    for s in 0..s_count {
        for a in 0..a_count {
            if s == s_abs {
                transitions[[s, a, s]] = 1.0;
                continue;
            }
            let tv: f64 = (0..s_count)
                .map(|q| (p_a[[s, a, q]] - p_b[[s, a, q]]).abs())
                .sum::<f64>()
                / 2.0;
            for q in 0..s_count {
                transitions[[s, a, q]] = p_a[[s, a, q]].min(p_b[[s, a, q]]);
            }
            let delta_state = delta_offset + delta_pairs.iter().position(|&p| p == (s, a)).unwrap();
            transitions[[s, a, delta_state]] = tv;
        }
    }
    for (i, _) in delta_pairs.iter().enumerate() {
        let d = delta_offset + i;
        for a in 0..a_count {
            transitions[[d, a, d]] = gamma;
            transitions[[d, a, s_abs]] = 1.0 - gamma;
        }
    }

    let mut reward_upper = Array2::zeros((n, a_count));
    let mut reward_lower = Array2::zeros((n, a_count));
    for s in 0..s_count {
        for a in 0..a_count {
            reward_upper[[s, a]] = rewards[[s, a]];
            reward_lower[[s, a]] = rewards[[s, a]];
        }
    }
    for i in 0..delta_pairs.len() {
        for a in 0..a_count {
            reward_upper[[delta_offset + i, a]] = 1.0;
        }
    }

    let build = |rew: Array2<f64>| -> TabularMdp {
        TabularMdp {
            num_states: n,
            num_actions: a_count,
            gamma,
            transitions: transitions.clone(),
            rewards: rew,
            initial_state,
            absorbing_state: s_abs,
        }
    };
    let optimistic = build(reward_upper);
    let pessimistic = build(reward_lower);
    let report = crate::mdp::validate_mdp(&optimistic);
    if !report.is_empty() {
        return Err(Error::InvalidModel(report));
    }
    Ok(DeltaMdpPair {
        optimistic,
        pessimistic,
        delta_pairs,
        delta_offset,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum RobustSense {
    Optimistic,
    Pessimistic,
}

/// Inner L1-ball response on a non-absorbing sub-row of total mass `gamma`:
/// moves up to `radius / 2` mass from the lowest-value successors to the
/// highest-value one (or the reverse), leaving the leak untouched.
fn robust_row_response(
    row: &[f64],
    live_indices: &[usize],
    values: &Array1<f64>,
    radius: f64,
    sense: RobustSense,
) -> f64 {
    let mut perturbed: Vec<f64> = live_indices.iter().map(|&q| row[q]).collect();
    let mut order: Vec<usize> = (0..live_indices.len()).collect();
    // sort successors by value; optimistic pulls mass toward the top,
    // pessimistic toward the bottom
    order.sort_by(|&i, &j| {
        values[live_indices[i]]
            .partial_cmp(&values[live_indices[j]])
            .unwrap()
            .then(i.cmp(&j))
    });
    let (dest, sources): (usize, Vec<usize>) = match sense {
        RobustSense::Optimistic => {
            let dest = *order.last().unwrap();
            (dest, order[..order.len() - 1].to_vec())
        }
        RobustSense::Pessimistic => {
            let dest = order[0];
            let mut rest = order[1..].to_vec();
            rest.reverse(); // take from the highest-value successors first
            (dest, rest)
        }
    };
    let mut budget = radius / 2.0;
    for i in sources {
        if budget <= 0.0 {
            break;
        }
        let take = perturbed[i].min(budget);
        perturbed[i] -= take;
        perturbed[dest] += take;
        budget -= take;
    }
    perturbed
        .iter()
        .zip(live_indices)
        .map(|(&p, &q)| p * values[q])
        .sum()
}

/// Robust policy evaluation: value iteration with the per-row L1 inner step.
fn robust_policy_value(
    mdp: &TabularMdp,
    policy: &Policy,
    radii: &Array2<f64>,
    sense: RobustSense,
    rewards: &Array2<f64>,
) -> Result<Array1<f64>> {
    let n = mdp.num_states;
    let live: Vec<usize> = mdp.live_states().collect();
    let mut v = Array1::zeros(n);
    let max_radius = 2.0 * mdp.gamma;
    for _ in 0..VI_MAX_ITERATIONS {
        let mut next = Array1::zeros(n);
        for &s in &live {
            let mut total = 0.0;
            for a in 0..mdp.num_actions {
                let pi = policy.probs[[s, a]];
                if pi == 0.0 {
                    continue;
                }
                let row: Vec<f64> = (0..n).map(|q| mdp.transitions[[s, a, q]]).collect();
                let radius = radii[[s, a]].min(max_radius);
                let continuation = robust_row_response(&row, &live, &v, radius, sense);
                total += pi * (rewards[[s, a]] + continuation);
            }
            next[s] = total;
        }
        let diff = v
            .iter()
            .zip(next.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if diff <= VI_TOLERANCE {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence(VI_MAX_ITERATIONS))
}

/// Optimistic/pessimistic values of the target policy over the rectangular
/// L1 uncertainty set around the estimated kernel. If the true row is within
/// its radius of the estimate for every pair, the true value at the initial
/// state lies inside the interval.
pub fn value_interval_from_radii(
    model: &EstimatedModel,
    target_policy: &Policy,
    radii: &Array2<f64>,
) -> Result<ValueInterval> {
    if radii.iter().any(|&r| r < 0.0) {
        return Err(Error::InvalidParameter("negative radius".into()));
    }
    let mdp = &model.mdp;
    let upper = robust_policy_value(mdp, target_policy, radii, RobustSense::Optimistic, &mdp.rewards)?;
    let lower =
        robust_policy_value(mdp, target_policy, radii, RobustSense::Pessimistic, &mdp.rewards)?;
    Ok(ValueInterval {
        lower: lower[mdp.initial_state],
        upper: upper[mdp.initial_state],
        radii: radii.clone(),
        delta: None,
    })
}

/// Per-(s, a) upper bounds on the target policy's occupancy measure over the
/// rectangular L1 uncertainty set: optimistic value iteration with an
/// indicator reward at the pair.
pub fn robust_occupancy_upper(
    model: &EstimatedModel,
    target_policy: &Policy,
    radii: &Array2<f64>,
) -> Result<Array2<f64>> {
    if radii.iter().any(|&r| r < 0.0) {
        return Err(Error::InvalidParameter("negative radius".into()));
    }
    let mdp = &model.mdp;
    let mut out = Array2::zeros((mdp.num_states, mdp.num_actions));
    for s in mdp.live_states() {
        for a in 0..mdp.num_actions {
            if target_policy.probs[[s, a]] == 0.0 {
                continue;
            }
            let mut indicator = Array2::zeros((mdp.num_states, mdp.num_actions));
            indicator[[s, a]] = 1.0;
            let v =
                robust_policy_value(mdp, target_policy, radii, RobustSense::Optimistic, &indicator)?;
            out[[s, a]] = v[mdp.initial_state];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{
        exact_occupancy, make_figure1_mdp, make_single_state_mdp, sample_path, PathSampler,
    };
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn model_based_exact_on_exact_frequencies() {
        // a dataset whose empirical frequencies equal the true kernel of the
        // figure-1 MDP at sigma = 0.3, gamma = 0.9 (row (6, 3, 1) / 10,
        // (9, 1) / 10): counts scaled to those ratios reproduce V exactly
        let mut mdp = make_figure1_mdp(0.3, 0.9).unwrap();
        mdp.rewards[[1, 0]] = 1.0;
        let policy = Policy::uniform(3, 1);
        let truth = exact_value(&mdp, &policy).unwrap()[0];

        let mut counts = crate::estimation::TransitionCounts::zeros(3, 1);
        counts.n[[0, 0, 0]] = 6;
        counts.n[[0, 0, 1]] = 3;
        counts.n[[0, 0, 2]] = 1;
        counts.n[[1, 0, 1]] = 9;
        counts.n[[1, 0, 2]] = 1;
        let model = build_model(
            &counts,
            0.9,
            &mdp.rewards,
            0,
            ProjectionMode::Renormalized,
        )
        .unwrap();
        let v = exact_value(&model.mdp, &policy).unwrap();
        assert!((v[0] - truth).abs() < 1e-9);
    }

    #[test]
    fn model_based_empty_dataset_self_loop_default() {
        let mdp = make_single_state_mdp(0.9, 1, 1.0).unwrap();
        let policy = Policy::uniform(2, 1);
        let est = model_based_evaluate(
            &[],
            &policy,
            0.9,
            &mdp.rewards,
            0,
            ProjectionMode::Renormalized,
        )
        .unwrap();
        assert!((est - 10.0).abs() < 1e-9);
    }

    #[test]
    fn optimize_picks_dominating_action() {
        // 2-action single-state MDP where action 1 strictly dominates via
        // reward; dataset makes the model exact for both actions
        let mut mdp = make_single_state_mdp(0.9, 2, 0.0).unwrap();
        mdp.rewards[[0, 0]] = 0.2;
        mdp.rewards[[0, 1]] = 0.9;
        let mut dataset = Vec::new();
        let sampler = PathSampler::new(&mdp, &Policy::uniform(2, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            dataset.push(sampler.sample(&mut rng));
        }
        let (policy, value) = model_based_optimize(&dataset, 0.9, &mdp.rewards, 0).unwrap();
        assert_eq!(policy.probs[[0, 1]], 1.0);
        assert!((value - 9.0).abs() < 1e-6);
    }

    #[test]
    fn optimize_empty_dataset_greedy_on_rewards() {
        let mut rewards = ndarray::Array2::zeros((3, 2));
        rewards[[0, 0]] = 0.1;
        rewards[[0, 1]] = 0.6;
        rewards[[1, 0]] = 0.8;
        rewards[[1, 1]] = 0.2;
        let (policy, value) = model_based_optimize(&[], 0.9, &rewards, 0).unwrap();
        // every state self-loops, so the greedy action maximizes its own reward
        assert_eq!(policy.probs[[0, 1]], 1.0);
        assert_eq!(policy.probs[[1, 0]], 1.0);
        assert!((value - 6.0).abs() < 1e-6);
    }

    #[test]
    fn is_weights_one_for_identical_policies() {
        let mut mdp = make_figure1_mdp(0.3, 0.9).unwrap();
        mdp.rewards[[1, 0]] = 1.0;
        let policy = Policy::uniform(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dataset: Vec<_> = (0..50)
            .map(|_| sample_path(&mdp, &policy, &mut rng).unwrap())
            .collect();
        let est = importance_sampling_evaluate(&dataset, &policy, &policy).unwrap();
        let mean: f64 =
            dataset.iter().map(|p| p.total_reward()).sum::<f64>() / dataset.len() as f64;
        assert!((est - mean).abs() < 1e-12);
    }

    #[test]
    fn is_zero_reward_path_gives_zero() {
        let dataset = vec![SamplePath {
            steps: vec![(0, 0, 0.0), (0, 0, 0.0)],
            terminal: true,
        }];
        let policy = Policy::uniform(2, 1);
        let est = importance_sampling_evaluate(&dataset, &policy, &policy).unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn is_rejects_zero_behavior_support() {
        let dataset = vec![SamplePath {
            steps: vec![(0, 1, 0.5)],
            terminal: true,
        }];
        let target = Policy::new(array![[0.5, 0.5], [1.0, 0.0]]).unwrap();
        let behavior = Policy::new(array![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(
            importance_sampling_evaluate(&dataset, &target, &behavior),
            Err(Error::UndefinedWeight { .. })
        ));
    }

    #[test]
    fn delta_mdps_identical_kernels_collapse() {
        let mut mdp = make_figure1_mdp(0.3, 0.9).unwrap();
        mdp.rewards[[1, 0]] = 1.0;
        let pair =
            construct_delta_mdps(&mdp.transitions, &mdp.transitions, 0.9, &mdp.rewards, 0).unwrap();
        let policy = pair.extend_policy(&Policy::uniform(3, 1));
        let truth = exact_value(&mdp, &Policy::uniform(3, 1)).unwrap()[0];
        let up = exact_value(&pair.optimistic, &policy).unwrap()[0];
        let low = exact_value(&pair.pessimistic, &policy).unwrap()[0];
        assert!((up - truth).abs() < 1e-9);
        assert!((low - truth).abs() < 1e-9);
    }

    #[test]
    fn delta_mdps_reject_leak_mismatch() {
        let a = make_figure1_mdp(0.3, 0.9).unwrap();
        let b = make_figure1_mdp(0.3, 0.8).unwrap();
        assert!(construct_delta_mdps(&a.transitions, &b.transitions, 0.9, &a.rewards, 0).is_err());
    }

    #[test]
    fn delta_sandwich_on_perturbed_kernel() {
        let mut mdp = make_figure1_mdp(0.3, 0.9).unwrap();
        mdp.rewards[[0, 0]] = 0.2;
        mdp.rewards[[1, 0]] = 1.0;
        let mut p_hat = mdp.transitions.clone();
        // shift 0.05 mass at (s0, a) keeping the leak
        p_hat[[0, 0, 0]] -= 0.05;
        p_hat[[0, 0, 1]] += 0.05;
        let pair = construct_delta_mdps(&mdp.transitions, &p_hat, 0.9, &mdp.rewards, 0).unwrap();
        let base_policy = Policy::uniform(3, 1);
        let policy = pair.extend_policy(&base_policy);
        let v_m = exact_value(&mdp, &base_policy).unwrap()[0];
        let hat = TabularMdp::new(0.9, p_hat, mdp.rewards.clone(), 0).unwrap();
        let v_hat = exact_value(&hat, &base_policy).unwrap()[0];
        let v_up = exact_value(&pair.optimistic, &policy).unwrap()[0];
        let v_low = exact_value(&pair.pessimistic, &policy).unwrap()[0];
        assert!(v_low <= v_m.min(v_hat) + 1e-9);
        assert!(v_up >= v_m.max(v_hat) - 1e-9);
    }

    fn figure1_model(sigma: f64, gamma: f64) -> EstimatedModel {
        let mut mdp = make_figure1_mdp(sigma, gamma).unwrap();
        mdp.rewards[[1, 0]] = 1.0;
        EstimatedModel {
            mdp,
            counts: crate::estimation::TransitionCounts::zeros(3, 1),
            projection_mode: ProjectionMode::Renormalized,
        }
    }

    #[test]
    fn zero_radii_interval_degenerates() {
        let model = figure1_model(0.3, 0.9);
        let policy = Policy::uniform(3, 1);
        let radii = Array2::zeros((3, 1));
        let interval = value_interval_from_radii(&model, &policy, &radii).unwrap();
        let v = exact_value(&model.mdp, &policy).unwrap()[0];
        assert!((interval.lower - v).abs() < 1e-8);
        assert!((interval.upper - v).abs() < 1e-8);
    }

    #[test]
    fn vacuous_radii_interval_contains_everything() {
        let model = figure1_model(0.3, 0.9);
        let policy = Policy::uniform(3, 1);
        let radii = Array2::from_elem((3, 1), 2.0 * 0.9);
        let interval = value_interval_from_radii(&model, &policy, &radii).unwrap();
        assert!(interval.lower >= -1e-9);
        assert!(interval.upper <= 10.0 + 1e-9);
        // any true kernel with matching leak has value inside
        for sigma in [0.0, 0.45, 0.9] {
            let mut other = make_figure1_mdp(sigma, 0.9).unwrap();
            other.rewards = model.mdp.rewards.clone();
            let v = exact_value(&other, &policy).unwrap()[0];
            assert!(v >= interval.lower - 1e-9 && v <= interval.upper + 1e-9);
        }
    }

    #[test]
    fn interval_radius_clipped_beyond_vacuous() {
        let model = figure1_model(0.3, 0.9);
        let policy = Policy::uniform(3, 1);
        let a = value_interval_from_radii(&model, &policy, &Array2::from_elem((3, 1), 1.8)).unwrap();
        let b = value_interval_from_radii(&model, &policy, &Array2::from_elem((3, 1), 5.0)).unwrap();
        assert!((a.lower - b.lower).abs() < 1e-9);
        assert!((a.upper - b.upper).abs() < 1e-9);
    }

    #[test]
    fn robust_occupancy_zero_radii_matches_exact() {
        let model = figure1_model(0.3, 0.9);
        let policy = Policy::uniform(3, 1);
        let radii = Array2::zeros((3, 1));
        let bound = robust_occupancy_upper(&model, &policy, &radii).unwrap();
        let x = exact_occupancy(&model.mdp, &policy).unwrap();
        for s in 0..2 {
            assert!((bound[[s, 0]] - x[[s, 0]]).abs() < 1e-7, "state {s}");
        }
    }

    #[test]
    fn robust_occupancy_monotone_in_radius() {
        let model = figure1_model(0.3, 0.9);
        let policy = Policy::uniform(3, 1);
        let small = robust_occupancy_upper(&model, &policy, &Array2::from_elem((3, 1), 0.05)).unwrap();
        let large = robust_occupancy_upper(&model, &policy, &Array2::from_elem((3, 1), 0.2)).unwrap();
        for s in 0..2 {
            assert!(large[[s, 0]] >= small[[s, 0]] - 1e-9);
        }
    }
}
