//! Property-based checks on randomized instances.

use ndarray::{Array2, Array3};
use offline_rl_lab::estimation::{
    build_model, df_categorical, sample_mean_categorical, ProjectionMode, TransitionCounts,
};
use offline_rl_lab::mdp::{
    dataset_from_jsonl, dataset_to_jsonl, occupancy_stats, Policy, SamplePath, TabularMdp,
};
use proptest::collection::vec;
use proptest::prelude::*;

/// Raw positive weights turned into a valid MDP: live sub-rows normalized
/// to mass gamma, leak exact, rewards clamped to [0, 1].
fn mdp_from_weights(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    weights: &[f64],
    rewards: &[f64],
) -> TabularMdp {
    let live = num_states - 1;
    let mut transitions = Array3::zeros((num_states, num_actions, num_states));
    let mut reward_table = Array2::zeros((num_states, num_actions));
    let mut w = weights.iter();
    let mut r = rewards.iter();
    for s in 0..live {
        for a in 0..num_actions {
            let row: Vec<f64> = (0..live).map(|_| *w.next().unwrap()).collect();
            let total: f64 = row.iter().sum();
            for (q, &weight) in row.iter().enumerate() {
                transitions[[s, a, q]] = gamma * weight / total;
            }
            transitions[[s, a, live]] = 1.0 - gamma;
            reward_table[[s, a]] = *r.next().unwrap();
        }
    }
    for a in 0..num_actions {
        transitions[[live, a, live]] = 1.0;
    }
    TabularMdp::new(gamma, transitions, reward_table, 0).unwrap()
}

fn policy_from_weights(num_states: usize, num_actions: usize, weights: &[f64]) -> Policy {
    let mut probs = Array2::zeros((num_states, num_actions));
    let mut w = weights.iter();
    for s in 0..num_states {
        let row: Vec<f64> = (0..num_actions).map(|_| *w.next().unwrap()).collect();
        let total: f64 = row.iter().sum();
        for (a, &weight) in row.iter().enumerate() {
            probs[[s, a]] = weight / total;
        }
    }
    Policy::new(probs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // x(s,a) = rho(s,a) / (1 - lambda(s,a)) and V(s0) = sum x r on
    // arbitrary instances
    #[test]
    fn occupancy_identities_hold(
        num_states in 2usize..6,
        num_actions in 1usize..4,
        gamma_idx in 0usize..3,
        weights in vec(0.05f64..1.0, 5 * 3 * 5),
        rewards in vec(0.0f64..1.0, 5 * 3),
        policy_weights in vec(0.05f64..1.0, 6 * 3),
    ) {
        let gamma = [0.8, 0.9, 0.95][gamma_idx];
        let mdp = mdp_from_weights(num_states, num_actions, gamma, &weights, &rewards);
        let policy = policy_from_weights(num_states, num_actions, &policy_weights);
        let stats = occupancy_stats(&mdp, &policy).unwrap();
        let value = offline_rl_lab::mdp::exact_value(&mdp, &policy).unwrap();
        let mut from_occupancy = 0.0;
        let mut total_mass = 0.0;
        for s in mdp.live_states() {
            for a in 0..num_actions {
                let reconstructed = stats.rho[[s, a]] / (1.0 - stats.lambda[[s, a]]);
                prop_assert!((stats.x[[s, a]] - reconstructed).abs() <= 1e-9);
                from_occupancy += stats.x[[s, a]] * mdp.rewards[[s, a]];
                total_mass += stats.x[[s, a]];
            }
        }
        prop_assert!((value[0] - from_occupancy).abs() <= 1e-9);
        prop_assert!((total_mass - 1.0 / (1.0 - gamma)).abs() <= 1e-8);
    }

    // the deterministic-favored estimate never strays from the sample mean
    // by more than the pseudo-mass fraction
    #[test]
    fn df_stays_near_sample_mean(counts in vec(0u64..500, 2..8)) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let df = df_categorical(&counts).unwrap();
        let sm = sample_mean_categorical(&counts).unwrap();
        let n = counts.iter().sum::<u64>() as f64;
        let tolerance = 1.0 / (n.sqrt() + 1.0) + 1e-12;
        for (a, b) in df.probs.iter().zip(&sm.probs) {
            prop_assert!((a - b).abs() <= tolerance);
        }
        prop_assert!((df.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    // built models are valid MDPs in both projection modes
    #[test]
    fn built_models_are_valid(
        raw_counts in vec(0u64..50, 3 * 2 * 4),
        mode_flag in any::<bool>(),
    ) {
        let (num_states, num_actions) = (4usize, 2usize);
        let mut counts = TransitionCounts::zeros(num_states, num_actions);
        let mut it = raw_counts.iter();
        for s in 0..num_states - 1 {
            for a in 0..num_actions {
                for q in 0..num_states {
                    counts.n[[s, a, q]] = *it.next().unwrap();
                }
            }
        }
        let rewards = Array2::zeros((num_states, num_actions));
        let mode = if mode_flag {
            ProjectionMode::Renormalized
        } else {
            ProjectionMode::L2Projected
        };
        let model = build_model(&counts, 0.9, &rewards, 0, mode).unwrap();
        prop_assert!(offline_rl_lab::mdp::validate_mdp(&model.mdp).is_empty());
    }

    #[test]
    fn dataset_round_trips(
        steps in vec((0usize..4, 0usize..2, 0.0f64..1.0), 0..20),
    ) {
        let paths = vec![SamplePath { steps: steps.clone(), terminal: true }];
        let text = dataset_to_jsonl(&paths).unwrap();
        let back = dataset_from_jsonl(&text).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0].steps, &steps);
    }
}
