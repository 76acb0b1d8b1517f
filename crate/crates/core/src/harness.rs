//! Config-driven Monte Carlo experiment runner: coverage verification for
//! every probabilistic guarantee, the single-path bias curve, the
//! deterministic-favored MSE study, and off-policy evaluation sweeps.
//!
//! Reproducibility contract: every trial draws from a counter-based stream
//! derived as `SHA-256(master_seed, experiment id, trial id)`, so results
//! are byte-identical regardless of worker count or scheduling. Emitted
//! files carry the config hash and the runner refuses to overwrite a file
//! written under a different hash unless forced.

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{
    accuracy_certificate, corollary1_path_bound, lemma2_threshold, lemma3_path_count,
    lemma4_path_count, theorem1_path_bound, BoundQuery,
};
use crate::estimation::{df_categorical, expected_sigma_hat_single_path, sample_mean_categorical,
    ProjectionMode};
use crate::mdp::{
    exact_occupancy, exact_value, occupancy_stats, validate_mdp, Policy, SamplePath, PathSampler,
    TabularMdp,
};
use crate::ope::{importance_sampling_evaluate, model_based_evaluate, model_based_optimize};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// z-score for the two-sided 99% Wilson interval used by coverage tests.
pub const WILSON_Z_99: f64 = 2.575_829_303_548_901;

/// Which claim or study an [`ExperimentConfig`] drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BiasCurve,
    Lemma2Coverage,
    Lemma3Coverage,
    Lemma4Coverage,
    Theorem1Coverage,
    Corollary1Coverage,
    Theorem2Mse,
    IsUnbiasedness,
    OpeSweep,
    CertificateCoverage,
}

impl ExperimentKind {
    /// Stable identifier mixed into the RNG streams and file names.
    pub fn id(&self) -> &'static str {
        match self {
            ExperimentKind::BiasCurve => "bias_curve",
            ExperimentKind::Lemma2Coverage => "lemma2_coverage",
            ExperimentKind::Lemma3Coverage => "lemma3_coverage",
            ExperimentKind::Lemma4Coverage => "lemma4_coverage",
            ExperimentKind::Theorem1Coverage => "theorem1_coverage",
            ExperimentKind::Corollary1Coverage => "corollary1_coverage",
            ExperimentKind::Theorem2Mse => "theorem2_mse",
            ExperimentKind::IsUnbiasedness => "is_unbiasedness",
            ExperimentKind::OpeSweep => "ope_sweep",
            ExperimentKind::CertificateCoverage => "certificate_coverage",
        }
    }
}

/// Random-MDP generator parameters. Transition sub-rows over non-absorbing
/// successors are symmetric-Dirichlet draws scaled to mass gamma; rewards
/// are uniform on [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Total state count including the absorbing state.
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    #[serde(default = "default_concentration")]
    pub dirichlet_concentration: f64,
}

fn default_concentration() -> f64 {
    1.0
}

/// Per-experiment numeric knobs; every field has a sensible default so
/// configs stay short.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentParams {
    /// Lemma 2 relative accuracy.
    pub epsilon_prime: f64,
    /// Failure budget for the coverage lemmas.
    pub delta_prime: f64,
    /// Lemma 3 required paths-with-sample.
    pub n_prime: f64,
    /// Lemma 4 required transition count.
    pub k: f64,
    /// Jump probability of the two-state chain used by the Lemma 3 design.
    pub sigma: f64,
    /// Discount for the fixed coverage designs (Lemma 3 at 0.9 makes the
    /// first-visit probability exactly 0.5; Lemma 4 at 0.8 makes the
    /// return probability exactly 0.8).
    pub gamma: f64,
    /// Accuracy target for the end-to-end bounds and the sweep.
    pub epsilon: f64,
    /// Confidence budget for the end-to-end bounds and the certificate.
    pub delta: f64,
    /// Categorical distribution for the MSE study.
    pub probs: Vec<f64>,
    /// Per-dataset path count (MSE sample count for the MSE study).
    pub n: u64,
    /// Dataset sizes for the sweep.
    pub n_grid: Vec<u64>,
    /// Maximum policy-probability ratio between target and behavior.
    pub max_ratio: f64,
    /// Desk-scale feasibility cap for end-to-end coverage runs.
    pub max_paths: f64,
    /// Sigma grid for the bias curve.
    pub sigma_grid: Vec<f64>,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            epsilon_prime: 0.3,
            delta_prime: 0.1,
            n_prime: 20.0,
            k: 50.0,
            sigma: 0.1,
            gamma: 0.9,
            epsilon: 1.0,
            delta: 0.1,
            probs: vec![0.95, 0.05],
            n: 100,
            n_grid: vec![100, 1_000, 10_000],
            max_ratio: 2.0,
            max_paths: 1e6,
            sigma_grid: vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9],
        }
    }
}

/// One experiment: kind, instance source, trial budget, and seeding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdp_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_policy_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_policy_path: Option<String>,
    pub trials: u64,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub params: ExperimentParams,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        if self.generator.is_some() && self.mdp_path.is_some() {
            return Err(Error::InvalidParameter(
                "generator and mdp_path are mutually exclusive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, hex-encoded.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        Ok(hex_string(&hasher.finalize()))
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One trial's reproducible record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u64,
    /// First eight bytes of the stream key, for audit.
    pub stream: u64,
    pub estimate: f64,
    pub error: f64,
    pub covered: Option<bool>,
    /// Not included in emitted CSVs (would break byte-identity).
    pub wall_time_s: f64,
}

/// Derives the RNG stream for one trial. The key is a hash of
/// (master seed, experiment id, trial id), so streams are independent of
/// scheduling order.
pub fn trial_rng(master_seed: u64, experiment_id: &str, trial_id: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(experiment_id.as_bytes());
    hasher.update(trial_id.to_le_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// First eight bytes of the stream key as an audit identifier.
pub fn stream_id(master_seed: u64, experiment_id: &str, trial_id: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(experiment_id.as_bytes());
    hasher.update(trial_id.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Reserved trial id for per-experiment setup draws (instance generation).
const SETUP_TRIAL: u64 = u64::MAX;

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))
}

/// Runs `trials` independent units on a worker pool; output order is by
/// trial id regardless of scheduling.
fn run_trials<T, F>(
    trials: u64,
    master_seed: u64,
    experiment_id: &str,
    workers: Option<usize>,
    op: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> T + Sync,
{
    let pool = thread_pool(workers)?;
    Ok(pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(master_seed, experiment_id, t);
                op(t, &mut rng)
            })
            .collect()
    }))
}

fn dirichlet_row<R: Rng>(len: usize, concentration: f64, rng: &mut R) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    Dirichlet::new_with_size(concentration, len)
        .expect("valid dirichlet parameters")
        .sample(rng)
}

/// Draws a random MDP from a [`GeneratorSpec`].
pub fn random_mdp<R: Rng>(spec: &GeneratorSpec, rng: &mut R) -> Result<TabularMdp> {
    if spec.num_states < 2 {
        return Err(Error::InvalidParameter(
            "generator needs at least one non-absorbing state".into(),
        ));
    }
    if spec.dirichlet_concentration <= 0.0 {
        return Err(Error::InvalidParameter(
            "dirichlet concentration must be positive".into(),
        ));
    }
    let (s, a_count, gamma) = (spec.num_states, spec.num_actions, spec.gamma);
    let live = s - 1;
    let mut transitions = ndarray::Array3::zeros((s, a_count, s));
    let mut rewards = ndarray::Array2::zeros((s, a_count));
    for state in 0..live {
        for action in 0..a_count {
            let sub = dirichlet_row(live, spec.dirichlet_concentration, rng);
            for (q, &w) in sub.iter().enumerate() {
                transitions[[state, action, q]] = gamma * w;
            }
            transitions[[state, action, live]] = 1.0 - gamma;
            rewards[[state, action]] = rng.gen::<f64>();
        }
    }
    for action in 0..a_count {
        transitions[[live, action, live]] = 1.0;
    }
    TabularMdp::new(gamma, transitions, rewards, 0)
}

/// Draws a random policy with Dirichlet rows over actions; the absorbing
/// row is uniform.
pub fn random_policy<R: Rng>(
    num_states: usize,
    num_actions: usize,
    concentration: f64,
    rng: &mut R,
) -> Policy {
    let mut probs = ndarray::Array2::zeros((num_states, num_actions));
    for s in 0..num_states {
        let row = dirichlet_row(num_actions, concentration, rng);
        for (a, &w) in row.iter().enumerate() {
            probs[[s, a]] = w;
        }
    }
    Policy::new(probs).expect("dirichlet rows are stochastic")
}

/// Builds a (behavior, target) pair whose policy-probability ratio is
/// exactly `max_ratio` at the preferred action of each non-absorbing state:
/// the target is deterministic and the behavior puts `1/max_ratio` there.
pub fn ratio_policy_pair<R: Rng>(
    num_states: usize,
    num_actions: usize,
    absorbing_state: usize,
    max_ratio: f64,
    rng: &mut R,
) -> Result<(Policy, Policy)> {
    if max_ratio < 1.0 {
        return Err(Error::InvalidParameter("max_ratio must be >= 1".into()));
    }
    if num_actions < 2 && max_ratio > 1.0 {
        return Err(Error::InvalidParameter(
            "ratio > 1 needs at least two actions".into(),
        ));
    }
    let mut target = ndarray::Array2::zeros((num_states, num_actions));
    let mut behavior = ndarray::Array2::zeros((num_states, num_actions));
    for s in 0..num_states {
        if s == absorbing_state {
            for a in 0..num_actions {
                target[[s, a]] = 1.0 / num_actions as f64;
                behavior[[s, a]] = 1.0 / num_actions as f64;
            }
            continue;
        }
        let preferred = rng.gen_range(0..num_actions);
        let rest = if num_actions > 1 {
            (1.0 - 1.0 / max_ratio) / (num_actions - 1) as f64
        } else {
            0.0
        };
        for a in 0..num_actions {
            target[[s, a]] = if a == preferred { 1.0 } else { 0.0 };
            behavior[[s, a]] = if a == preferred { 1.0 / max_ratio } else { rest };
        }
    }
    Ok((Policy::new(behavior)?, Policy::new(target)?))
}

/// Two-sided Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn sorted(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values
}

// ---------------------------------------------------------------------------
// Bias curve
// ---------------------------------------------------------------------------

/// One row of the single-path bias table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasCurveRow {
    pub sigma: f64,
    pub analytic: f64,
    pub monte_carlo: f64,
    pub bias: f64,
    pub mc_std_error: f64,
}

const BIAS_BLOCK: u64 = 4096;

/// Expected single-path sample mean of the jump probability: analytic
/// series next to a Monte Carlo estimate that samples the geometric
/// first-exit time directly (the undiscounted limit needs no explicit
/// paths).
pub fn run_bias_curve(
    sigma_grid: &[f64],
    n_trials: u64,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<Vec<BiasCurveRow>> {
    let mut rows = Vec::with_capacity(sigma_grid.len());
    for (i, &sigma) in sigma_grid.iter().enumerate() {
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma {sigma} outside (0, 1)"
            )));
        }
        let analytic = expected_sigma_hat_single_path(sigma)?;
        let blocks = n_trials.div_ceil(BIAS_BLOCK);
        let experiment_id = format!("bias_curve/{i}");
        let partials = run_trials(blocks, master_seed, &experiment_id, workers, |b, rng| {
            let count = BIAS_BLOCK.min(n_trials - b * BIAS_BLOCK);
            let geom = Geometric::new(sigma).expect("sigma in (0, 1)");
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..count {
                // K = attempts until first jump; the path's estimate is 1/K
                let k = geom.sample(rng) + 1;
                let est = 1.0 / k as f64;
                sum += est;
                sum_sq += est * est;
            }
            (sum, sum_sq)
        })?;
        let (sum, sum_sq) = partials
            .iter()
            .fold((0.0, 0.0), |(s, q), &(ps, pq)| (s + ps, q + pq));
        let n = n_trials as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        rows.push(BiasCurveRow {
            sigma,
            analytic,
            monte_carlo: mean,
            bias: analytic - sigma,
            mc_std_error: (var / n).sqrt(),
        });
    }
    Ok(rows)
}

pub fn bias_curve_csv(rows: &[BiasCurveRow], config_hash: &str) -> String {
    let mut out = format!("# config_hash={config_hash}\n");
    out.push_str("sigma,analytic,monte_carlo,bias,mc_std_error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.sigma, r.analytic, r.monte_carlo, r.bias, r.mc_std_error
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Coverage experiments
// ---------------------------------------------------------------------------

/// Outcome of a coverage run: empirical failure rate of the guaranteed
/// event against the promised budget, with a one-sided pass rule (the
/// bounds are sufficient conditions, so over-coverage passes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub kind: String,
    pub trials: u64,
    pub failures: u64,
    pub failure_rate: f64,
    pub wilson_lower_99: f64,
    pub wilson_upper_99: f64,
    pub budget: f64,
    /// Sample size the formula prescribed for each trial.
    pub threshold: f64,
    pub pass: bool,
    pub config_hash: String,
}

impl CoverageReport {
    fn from_failures(
        kind: &str,
        failures: &[bool],
        budget: f64,
        threshold: f64,
        config_hash: String,
    ) -> Self {
        let trials = failures.len() as u64;
        let n_fail = failures.iter().filter(|&&f| f).count() as u64;
        let (lo, hi) = wilson_interval(n_fail, trials, WILSON_Z_99);
        CoverageReport {
            kind: kind.to_string(),
            trials,
            failures: n_fail,
            failure_rate: n_fail as f64 / trials as f64,
            wilson_lower_99: lo,
            wilson_upper_99: hi,
            budget,
            threshold,
            pass: lo <= budget,
            config_hash,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "# config_hash={}\nkind,trials,failures,failure_rate,wilson_lower_99,wilson_upper_99,budget,threshold,pass\n{},{},{},{},{},{},{},{},{}\n",
            self.config_hash,
            self.kind,
            self.trials,
            self.failures,
            self.failure_rate,
            self.wilson_lower_99,
            self.wilson_upper_99,
            self.budget,
            self.threshold,
            self.pass
        )
    }
}

fn lemma2_coverage(config: &ExperimentConfig) -> Result<CoverageReport> {
    let p = &config.params;
    let num_states = config
        .generator
        .as_ref()
        .map(|g| g.num_states)
        .unwrap_or(3);
    let live = num_states - 1;
    let threshold = lemma2_threshold(num_states, p.epsilon_prime, p.delta_prime)?;
    let mu = threshold as u64;
    let concentration = config
        .generator
        .as_ref()
        .map(|g| g.dirichlet_concentration)
        .unwrap_or(1.0);
    let eps = p.epsilon_prime;
    let failures = run_trials(
        config.trials,
        config.master_seed,
        config.kind.id(),
        config.workers,
        move |_, rng| {
            // random live sub-row; the leak is exact by construction, so the
            // renormalized estimate's full-row L1 error is gamma times the
            // normalized sub-row's L1 error
            let q = dirichlet_row(live, concentration, rng);
            let mut counts = vec![0u64; live];
            if live == 1 {
                counts[0] = mu;
            } else {
                let dist = WeightedIndex::new(&q).expect("positive weights");
                for _ in 0..mu {
                    counts[dist.sample(rng)] += 1;
                }
            }
            let l1: f64 = counts
                .iter()
                .zip(&q)
                .map(|(&c, &qi)| (c as f64 / mu as f64 - qi).abs())
                .sum();
            l1 > eps
        },
    )?;
    Ok(CoverageReport::from_failures(
        config.kind.id(),
        &failures,
        p.delta_prime,
        threshold,
        config.hash()?,
    ))
}

fn lemma3_coverage(config: &ExperimentConfig) -> Result<CoverageReport> {
    let p = &config.params;
    let mdp = crate::mdp::make_figure1_mdp(p.sigma, p.gamma)?;
    let policy = Policy::uniform(mdp.num_states, mdp.num_actions);
    let rho = crate::mdp::first_visit_prob(&mdp, &policy, 1, 0)?;
    let n_paths = lemma3_path_count(p.gamma, rho, p.n_prime, p.delta_prime)?;
    if !n_paths.is_finite() {
        return Err(Error::InvalidParameter("pair is unreachable".into()));
    }
    let n = n_paths as u64;
    let n_prime = p.n_prime as u64;
    let sampler = PathSampler::new(&mdp, &policy)?;
    let failures = run_trials(
        config.trials,
        config.master_seed,
        config.kind.id(),
        config.workers,
        move |_, rng| {
            let mut with_sample = 0u64;
            for _ in 0..n {
                let path = sampler.sample(rng);
                // a step at state 1 before the last one is a non-absorbing
                // transition from the monitored pair
                let has = path
                    .steps
                    .iter()
                    .take(path.steps.len().saturating_sub(1))
                    .any(|&(s, _, _)| s == 1);
                if has {
                    with_sample += 1;
                }
            }
            with_sample < n_prime
        },
    )?;
    Ok(CoverageReport::from_failures(
        config.kind.id(),
        &failures,
        p.delta_prime,
        n_paths,
        config.hash()?,
    ))
}

fn lemma4_coverage(config: &ExperimentConfig) -> Result<CoverageReport> {
    let p = &config.params;
    // a pair whose state only self-loops has return probability gamma; the
    // per-path non-absorbing count is geometric with success rate 1-gamma
    let lambda = p.gamma;
    let n_paths = lemma4_path_count(p.k, lambda, p.delta_prime)?;
    let n = n_paths as u64;
    let k = p.k as u64;
    let failures = run_trials(
        config.trials,
        config.master_seed,
        config.kind.id(),
        config.workers,
        move |_, rng| {
            let geom = Geometric::new(1.0 - lambda).expect("lambda in (0, 1)");
            let total: u64 = (0..n).map(|_| geom.sample(rng)).sum();
            total < k
        },
    )?;
    Ok(CoverageReport::from_failures(
        config.kind.id(),
        &failures,
        p.delta_prime,
        n_paths,
        config.hash()?,
    ))
}

fn end_to_end_coverage(config: &ExperimentConfig) -> Result<CoverageReport> {
    let p = &config.params;
    let spec = config.generator.as_ref().ok_or_else(|| {
        Error::InvalidParameter("end-to-end coverage needs a generator spec".into())
    })?;
    let optimize = config.kind == ExperimentKind::Corollary1Coverage;
    let concentration = spec.dirichlet_concentration;
    let max_paths = p.max_paths;
    let (epsilon, delta, max_ratio) = (p.epsilon, p.delta, p.max_ratio);
    let kind_id = config.kind.id();
    let spec = spec.clone();
    let outcomes = run_trials(
        config.trials,
        config.master_seed,
        kind_id,
        config.workers,
        move |_, rng| -> Result<(bool, f64)> {
            let mdp = random_mdp(&spec, rng)?;
            let (behavior, target) = if optimize {
                let b = random_policy(mdp.num_states, mdp.num_actions, concentration, rng);
                (b.clone(), b)
            } else {
                ratio_policy_pair(mdp.num_states, mdp.num_actions, mdp.absorbing_state, max_ratio, rng)?
            };
            let stats = occupancy_stats(&mdp, &behavior)?;
            let n = if optimize {
                corollary1_path_bound(
                    mdp.num_states,
                    mdp.num_actions,
                    mdp.gamma,
                    epsilon,
                    delta,
                    &stats.x,
                    &stats.rho,
                    mdp.absorbing_state,
                )?
                .required_paths
            } else {
                let x_target = exact_occupancy(&mdp, &target)?;
                theorem1_path_bound(&BoundQuery {
                    num_states: mdp.num_states,
                    num_actions: mdp.num_actions,
                    gamma: mdp.gamma,
                    epsilon,
                    delta,
                    beta_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
                    x_target,
                    x_behavior: stats.x.clone(),
                    rho_behavior: stats.rho.clone(),
                    absorbing_state: mdp.absorbing_state,
                })?
                .required_paths
            };
            if !n.is_finite() || n > max_paths {
                return Err(Error::InvalidParameter(format!(
                    "required path count {n} exceeds desk-scale cap {max_paths}; \
                     raise epsilon or lower gamma"
                )));
            }
            let sampler = PathSampler::new(&mdp, &behavior)?;
            let dataset: Vec<SamplePath> = (0..n as u64).map(|_| sampler.sample(rng)).collect();
            let failed = if optimize {
                let (policy, _) = model_based_optimize(
                    &dataset,
                    mdp.gamma,
                    &mdp.rewards,
                    mdp.initial_state,
                )?;
                let (v_star, _) = crate::ope::value_iteration(&mdp)?;
                let v_pi = exact_value(&mdp, &policy)?;
                v_star[mdp.initial_state] - v_pi[mdp.initial_state] > epsilon
            } else {
                let v_hat = model_based_evaluate(
                    &dataset,
                    &target,
                    mdp.gamma,
                    &mdp.rewards,
                    mdp.initial_state,
                    ProjectionMode::Renormalized,
                )?;
                let v = exact_value(&mdp, &target)?[mdp.initial_state];
                (v - v_hat).abs() > epsilon
            };
            Ok((failed, n))
        },
    )?;
    let mut failures = Vec::with_capacity(outcomes.len());
    let mut max_n = 0.0f64;
    for outcome in outcomes {
        let (failed, n) = outcome?;
        failures.push(failed);
        max_n = max_n.max(n);
    }
    Ok(CoverageReport::from_failures(
        kind_id,
        &failures,
        p.delta,
        max_n,
        config.hash()?,
    ))
}

fn certificate_coverage(config: &ExperimentConfig) -> Result<CoverageReport> {
    let p = &config.params;
    let spec = config
        .generator
        .clone()
        .unwrap_or(GeneratorSpec {
            num_states: 4,
            num_actions: 2,
            gamma: 0.9,
            dirichlet_concentration: 1.0,
        });
    let (delta, max_ratio, n) = (p.delta, p.max_ratio, p.n);
    let outcomes = run_trials(
        config.trials,
        config.master_seed,
        config.kind.id(),
        config.workers,
        move |_, rng| -> Result<bool> {
            let mdp = random_mdp(&spec, rng)?;
            let (behavior, target) = ratio_policy_pair(
                mdp.num_states,
                mdp.num_actions,
                mdp.absorbing_state,
                max_ratio,
                rng,
            )?;
            let sampler = PathSampler::new(&mdp, &behavior)?;
            let dataset: Vec<SamplePath> = (0..n).map(|_| sampler.sample(rng)).collect();
            let cert = accuracy_certificate(
                &dataset,
                &target,
                &behavior,
                mdp.gamma,
                &mdp.rewards,
                mdp.initial_state,
                delta,
            )?;
            let v_hat = model_based_evaluate(
                &dataset,
                &target,
                mdp.gamma,
                &mdp.rewards,
                mdp.initial_state,
                ProjectionMode::Renormalized,
            )?;
            let v = exact_value(&mdp, &target)?[mdp.initial_state];
            Ok((v - v_hat).abs() > cert.epsilon)
        },
    )?;
    let failures = outcomes.into_iter().collect::<Result<Vec<bool>>>()?;
    Ok(CoverageReport::from_failures(
        config.kind.id(),
        &failures,
        p.delta,
        p.n as f64,
        config.hash()?,
    ))
}

/// Runs the coverage experiment selected by the config and returns the
/// failure-rate report.
pub fn run_coverage_experiment(config: &ExperimentConfig) -> Result<CoverageReport> {
    config.validate()?;
    match config.kind {
        ExperimentKind::Lemma2Coverage => lemma2_coverage(config),
        ExperimentKind::Lemma3Coverage => lemma3_coverage(config),
        ExperimentKind::Lemma4Coverage => lemma4_coverage(config),
        ExperimentKind::Theorem1Coverage | ExperimentKind::Corollary1Coverage => {
            end_to_end_coverage(config)
        }
        ExperimentKind::CertificateCoverage => certificate_coverage(config),
        other => Err(Error::InvalidParameter(format!(
            "{} is not a coverage experiment",
            other.id()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Theorem 2 MSE study
// ---------------------------------------------------------------------------

/// Monte Carlo MSEs of the deterministic-favored and sample-mean
/// estimators at the dominant coordinate, next to the analytic bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub probs: Vec<f64>,
    pub n: u64,
    pub trials: u64,
    pub mse_df: f64,
    pub mse_sm: f64,
    pub se_df: f64,
    pub se_sm: f64,
    pub bound: f64,
    pub sm_analytic: f64,
    /// `mse_df <= bound + 3 se_df`.
    pub pass: bool,
}

/// MSE bound for the deterministic-favored estimator at dominant
/// probability `p`: `N(1-p)/(N+sqrt(N))^2 + exp(-(2p-1)^2 N / (12(1-p)))`.
pub fn theorem2_bound(p: f64, n: u64) -> f64 {
    let nf = n as f64;
    let first = nf * (1.0 - p) / (nf + nf.sqrt()).powi(2);
    let second = if p >= 1.0 {
        0.0
    } else {
        (-(2.0 * p - 1.0).powi(2) * nf / (12.0 * (1.0 - p))).exp()
    };
    first + second
}

pub fn run_theorem2_mse(
    probs: &[f64],
    n: u64,
    n_trials: u64,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<Theorem2Report> {
    if probs.len() < 2 || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(
            "probs must be a distribution over >= 2 outcomes".into(),
        ));
    }
    let mode = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let p_mode = probs[mode];
    let blocks = n_trials.div_ceil(BIAS_BLOCK);
    let deterministic = probs.iter().any(|&p| p == 1.0);
    let probs_vec = probs.to_vec();
    let partials = run_trials(blocks, master_seed, "theorem2_mse", workers, move |b, rng| {
        let count = BIAS_BLOCK.min(n_trials - b * BIAS_BLOCK);
        let mut acc = [0.0f64; 4]; // sum and sum of squares per estimator
        let dist = (!deterministic).then(|| WeightedIndex::new(&probs_vec).unwrap());
        for _ in 0..count {
            let mut counts = vec![0u64; probs_vec.len()];
            match &dist {
                Some(d) => {
                    for _ in 0..n {
                        counts[d.sample(rng)] += 1;
                    }
                }
                None => counts[mode] = n,
            }
            let df = df_categorical(&counts).unwrap().probs[mode];
            let sm = sample_mean_categorical(&counts).unwrap().probs[mode];
            let (e_df, e_sm) = ((df - p_mode).powi(2), (sm - p_mode).powi(2));
            acc[0] += e_df;
            acc[1] += e_df * e_df;
            acc[2] += e_sm;
            acc[3] += e_sm * e_sm;
        }
        acc
    })?;
    let mut totals = [0.0f64; 4];
    for p in &partials {
        for i in 0..4 {
            totals[i] += p[i];
        }
    }
    let nt = n_trials as f64;
    let mse_df = totals[0] / nt;
    let mse_sm = totals[2] / nt;
    let se_df = ((totals[1] / nt - mse_df * mse_df).max(0.0) / nt).sqrt();
    let se_sm = ((totals[3] / nt - mse_sm * mse_sm).max(0.0) / nt).sqrt();
    let bound = theorem2_bound(p_mode, n);
    Ok(Theorem2Report {
        probs: probs.to_vec(),
        n,
        trials: n_trials,
        mse_df,
        mse_sm,
        se_df,
        se_sm,
        bound,
        sm_analytic: p_mode * (1.0 - p_mode) / n as f64,
        pass: mse_df <= bound + 3.0 * se_df,
    })
}

// ---------------------------------------------------------------------------
// IS unbiasedness and OPE sweep
// ---------------------------------------------------------------------------

/// Shared setup for the estimator studies: a fixed random instance drawn
/// from the experiment's setup stream.
fn sweep_instance(config: &ExperimentConfig) -> Result<(TabularMdp, Policy, Policy)> {
    let mut rng = trial_rng(config.master_seed, config.kind.id(), SETUP_TRIAL);
    let mdp = if let Some(path) = &config.mdp_path {
        TabularMdp::from_json(&std::fs::read_to_string(path)?)?
    } else {
        let spec = config.generator.as_ref().ok_or_else(|| {
            Error::InvalidParameter("experiment needs a generator spec or mdp_path".into())
        })?;
        random_mdp(spec, &mut rng)?
    };
    let issues = validate_mdp(&mdp);
    if !issues.is_empty() {
        return Err(Error::InvalidModel(issues));
    }
    let behavior = match &config.behavior_policy_path {
        Some(path) => Policy::from_json(&std::fs::read_to_string(path)?)?,
        None => Policy::uniform(mdp.num_states, mdp.num_actions),
    };
    let target = match &config.target_policy_path {
        Some(path) => Policy::from_json(&std::fs::read_to_string(path)?)?,
        None => {
            let (b, t) = ratio_policy_pair(
                mdp.num_states,
                mdp.num_actions,
                mdp.absorbing_state,
                config.params.max_ratio,
                &mut rng,
            )?;
            return Ok((mdp, b, t));
        }
    };
    Ok((mdp, behavior, target))
}

/// Mean/spread comparison of the importance-sampling estimator against the
/// model-based one on a shared instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsUnbiasednessReport {
    pub exact_value: f64,
    pub is_mean: f64,
    pub is_std_error: f64,
    /// `|is_mean - exact| <= 4 se`.
    pub pass: bool,
    pub is_q99_abs_error: f64,
    pub mb_q99_abs_error: f64,
    pub trials: u64,
    pub n: u64,
    pub config_hash: String,
}

pub fn run_is_unbiasedness(config: &ExperimentConfig) -> Result<IsUnbiasednessReport> {
    config.validate()?;
    let (mdp, behavior, target) = sweep_instance(config)?;
    let exact = exact_value(&mdp, &target)?[mdp.initial_state];
    let sampler = PathSampler::new(&mdp, &behavior)?;
    let n = config.params.n;
    let pairs = run_trials(
        config.trials,
        config.master_seed,
        config.kind.id(),
        config.workers,
        |_, rng| -> Result<(f64, f64)> {
            let dataset: Vec<SamplePath> = (0..n).map(|_| sampler.sample(rng)).collect();
            let is = importance_sampling_evaluate(&dataset, &target, &behavior)?;
            let mb = model_based_evaluate(
                &dataset,
                &target,
                mdp.gamma,
                &mdp.rewards,
                mdp.initial_state,
                ProjectionMode::Renormalized,
            )?;
            Ok((is, mb))
        },
    )?;
    let pairs = pairs.into_iter().collect::<Result<Vec<_>>>()?;
    let nt = pairs.len() as f64;
    let is_mean = pairs.iter().map(|p| p.0).sum::<f64>() / nt;
    let var = pairs.iter().map(|p| (p.0 - is_mean).powi(2)).sum::<f64>() / (nt - 1.0);
    let se = (var / nt).sqrt();
    let is_abs = sorted(pairs.iter().map(|p| (p.0 - exact).abs()).collect());
    let mb_abs = sorted(pairs.iter().map(|p| (p.1 - exact).abs()).collect());
    Ok(IsUnbiasednessReport {
        exact_value: exact,
        is_mean,
        is_std_error: se,
        pass: (is_mean - exact).abs() <= 4.0 * se,
        is_q99_abs_error: quantile(&is_abs, 0.99),
        mb_q99_abs_error: quantile(&mb_abs, 0.99),
        trials: config.trials,
        n,
        config_hash: config.hash()?,
    })
}

/// One row of the estimator sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: u64,
    pub estimator: String,
    pub median_abs_error: f64,
    pub q25: f64,
    pub q75: f64,
    pub q99: f64,
}

/// Sweeps dataset size for the model-based and importance-sampling
/// estimators on one instance, replicating per size.
pub fn run_ope_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let (mdp, behavior, target) = sweep_instance(config)?;
    let exact = exact_value(&mdp, &target)?[mdp.initial_state];
    let sampler = PathSampler::new(&mdp, &behavior)?;
    let mut rows = Vec::new();
    for &n in &config.params.n_grid {
        let experiment_id = format!("{}/n={n}", config.kind.id());
        let pairs = run_trials(
            config.trials,
            config.master_seed,
            &experiment_id,
            config.workers,
            |_, rng| -> Result<(f64, f64)> {
                let dataset: Vec<SamplePath> = (0..n).map(|_| sampler.sample(rng)).collect();
                let mb = model_based_evaluate(
                    &dataset,
                    &target,
                    mdp.gamma,
                    &mdp.rewards,
                    mdp.initial_state,
                    ProjectionMode::Renormalized,
                )?;
                let is = importance_sampling_evaluate(&dataset, &target, &behavior)?;
                Ok(((mb - exact).abs(), (is - exact).abs()))
            },
        )?;
        let pairs = pairs.into_iter().collect::<Result<Vec<_>>>()?;
        for (name, values) in [
            ("model_based", sorted(pairs.iter().map(|p| p.0).collect())),
            ("is", sorted(pairs.iter().map(|p| p.1).collect())),
        ] {
            rows.push(SweepRow {
                n,
                estimator: name.to_string(),
                median_abs_error: quantile(&values, 0.5),
                q25: quantile(&values, 0.25),
                q75: quantile(&values, 0.75),
                q99: quantile(&values, 0.99),
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow], config_hash: &str) -> String {
    let mut out = format!("# config_hash={config_hash}\n");
    out.push_str("n,estimator,median_abs_error,q25,q75,q99\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n, r.estimator, r.median_abs_error, r.q25, r.q75, r.q99
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

/// Extracts the `# config_hash=` marker from previously emitted content.
pub fn embedded_hash(content: &str) -> Option<&str> {
    content
        .lines()
        .next()?
        .strip_prefix("# config_hash=")
        .map(str::trim)
}

/// Writes an artifact whose first line carries the config hash, refusing
/// to overwrite a file written under a different hash unless `force`.
pub fn write_artifact(path: &Path, content: &str, force: bool) -> Result<()> {
    let new_hash = embedded_hash(content)
        .ok_or_else(|| Error::InvalidParameter("artifact is missing its hash line".into()))?;
    if !force && path.exists() {
        let existing = std::fs::read_to_string(path)?;
        if let Some(old) = embedded_hash(&existing) {
            if old != new_hash {
                return Err(Error::ConfigHashMismatch {
                    path: path.display().to_string(),
                    existing: old.to_string(),
                    new: new_hash.to_string(),
                });
            }
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, content)?;
    Ok(())
}

/// Default output directory: `$ORLAB_OUTPUT_DIR` or the working directory.
pub fn output_dir() -> std::path::PathBuf {
    std::env::var_os("ORLAB_OUTPUT_DIR")
        .map(Into::into)
        .unwrap_or_else(|| std::path::PathBuf::from("."))
}
