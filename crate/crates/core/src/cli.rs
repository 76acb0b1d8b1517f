//! The `orlab` command-line interface: dataset generation, off-policy
//! evaluation and optimization, bound calculators, coverage verification,
//! the bias curve, and accuracy certificates.
//!
//! Exit codes: 0 on success, 1 on validation failure, 2 when a `verify`
//! run's assertion fails.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bounds;
use crate::estimation::ProjectionMode;
use crate::harness::{self, ExperimentConfig, ExperimentKind};
use crate::mdp::{dataset_from_jsonl, dataset_to_jsonl, PathSampler, Policy, TabularMdp};
use crate::ope;
use crate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "orlab",
    about = "Tabular offline reinforcement-learning laboratory",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample logged paths from an MDP under a behavior policy.
    Sample(SampleArgs),
    /// Estimate a target policy's value from a logged dataset.
    Evaluate(EvaluateArgs),
    /// Compute the optimal policy of the model built from a dataset.
    Optimize(OptimizeArgs),
    /// Evaluate the closed-form sample-complexity formulas.
    Bounds(BoundsArgs),
    /// Run a Monte Carlo verification experiment from a config file.
    Verify(VerifyArgs),
    /// Tabulate the single-path bias of the jump-probability estimate.
    BiasCurve(BiasCurveArgs),
    /// Compute a data-driven accuracy certificate for a dataset.
    Certificate(CertificateArgs),
}

#[derive(Args)]
struct SampleArgs {
    /// MDP description (JSON).
    #[arg(long)]
    mdp: PathBuf,
    /// Behavior policy (JSON); defaults to uniform.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    paths: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination JSONL file.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimator: "model" or "is".
    #[arg(long)]
    method: String,
    #[arg(long)]
    dataset: PathBuf,
    /// Target policy (JSON).
    #[arg(long)]
    target: PathBuf,
    /// Behavior policy (JSON), required for importance sampling.
    #[arg(long)]
    behavior: Option<PathBuf>,
    /// MDP description (JSON), required for the model-based estimator
    /// (supplies gamma, rewards, and the initial state).
    #[arg(long)]
    mdp: Option<PathBuf>,
    /// Transition-estimate projection: "renormalized" or "l2".
    #[arg(long, default_value = "renormalized")]
    projection: String,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    mdp: PathBuf,
    /// Where to write the optimized policy (JSON).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(subcommand)]
    which: BoundsCommand,
}

#[derive(Subcommand)]
enum BoundsCommand {
    /// Value gap from per-pair transition accuracy alpha / x^beta.
    Lemma1 {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        gamma: f64,
    },
    /// Non-absorbing sample count for per-pair L1 accuracy gamma * eps'.
    Lemma2Threshold {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        epsilon_prime: f64,
        #[arg(long)]
        delta_prime: f64,
    },
    /// Anytime L1 radius from an observed sample count.
    Lemma2Radius {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        count: u64,
        #[arg(long)]
        delta_prime: f64,
        #[arg(long)]
        gamma: f64,
    },
    /// Paths needed for N' paths-with-sample at a pair.
    Lemma3 {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        n_prime: f64,
        #[arg(long)]
        delta_prime: f64,
    },
    /// Paths-with-sample needed for k transitions at a pair.
    Lemma4 {
        #[arg(long)]
        k: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        delta_prime: f64,
    },
    /// Full evaluation-bound report from a query file (JSON).
    Theorem1 {
        #[arg(long)]
        query: PathBuf,
    },
    /// Optimization-bound report; reads the same query file, using its
    /// behavior statistics.
    Corollary1 {
        #[arg(long)]
        query: PathBuf,
    },
    /// Importance-sampling log-ratio statistics and path requirement.
    Is {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        behavior: PathBuf,
        #[arg(long)]
        gamma: f64,
        /// Constant multiplying the Std term in exp(KL + c Std).
        #[arg(long, default_value_t = 1.0)]
        c: f64,
    },
}

#[derive(Args)]
struct VerifyArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Optional kind check against the config file.
    #[arg(long)]
    experiment: Option<String>,
    /// Report destination; defaults to the config's output path or
    /// `<kind>.csv` under the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overwrite artifacts written under a different config hash.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BiasCurveArgs {
    #[arg(long, default_value_t = 0.05)]
    sigma_min: f64,
    #[arg(long, default_value_t = 0.95)]
    sigma_max: f64,
    #[arg(long, default_value_t = 19)]
    steps: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct CertificateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Behavior policy (JSON); defaults to uniform.
    #[arg(long)]
    behavior: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
}

/// Record emitted by `evaluate` and `optimize`.
#[derive(Serialize)]
struct EstimateRecord {
    estimator: String,
    estimate: f64,
    n_paths: usize,
    config_hash: String,
}

fn args_hash(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn read_mdp(path: &PathBuf) -> Result<TabularMdp> {
    TabularMdp::from_json(&std::fs::read_to_string(path)?)
}

fn read_policy(path: &PathBuf) -> Result<Policy> {
    Policy::from_json(&std::fs::read_to_string(path)?)
}

fn parse_projection(text: &str) -> Result<ProjectionMode> {
    match text {
        "renormalized" => Ok(ProjectionMode::Renormalized),
        "l2" => Ok(ProjectionMode::L2Projected),
        other => Err(Error::InvalidParameter(format!(
            "unknown projection {other:?} (expected renormalized or l2)"
        ))),
    }
}

fn run_sample(args: &SampleArgs) -> Result<()> {
    let mdp = read_mdp(&args.mdp)?;
    let policy = match &args.policy {
        Some(p) => read_policy(p)?,
        None => Policy::uniform(mdp.num_states, mdp.num_actions),
    };
    let sampler = PathSampler::new(&mdp, &policy)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let paths: Vec<_> = (0..args.paths).map(|_| sampler.sample(&mut rng)).collect();
    std::fs::write(&args.output, dataset_to_jsonl(&paths)?)?;
    println!(
        "{}",
        serde_json::json!({
            "paths": args.paths,
            "seed": args.seed,
            "output": args.output.display().to_string(),
        })
    );
    Ok(())
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let dataset = dataset_from_jsonl(&std::fs::read_to_string(&args.dataset)?)?;
    let target = read_policy(&args.target)?;
    let estimate = match args.method.as_str() {
        "model" => {
            let mdp_path = args.mdp.as_ref().ok_or_else(|| {
                Error::InvalidParameter("model-based evaluation needs --mdp".into())
            })?;
            let mdp = read_mdp(mdp_path)?;
            ope::model_based_evaluate(
                &dataset,
                &target,
                mdp.gamma,
                &mdp.rewards,
                mdp.initial_state,
                parse_projection(&args.projection)?,
            )?
        }
        "is" => {
            let behavior_path = args.behavior.as_ref().ok_or_else(|| {
                Error::InvalidParameter("importance sampling needs --behavior".into())
            })?;
            let behavior = read_policy(behavior_path)?;
            ope::importance_sampling_evaluate(&dataset, &target, &behavior)?
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown method {other:?} (expected model or is)"
            )))
        }
    };
    let record = EstimateRecord {
        estimator: args.method.clone(),
        estimate,
        n_paths: dataset.len(),
        config_hash: args_hash(&[
            "evaluate",
            &args.method,
            &args.dataset.display().to_string(),
            &args.target.display().to_string(),
            &args.projection,
        ]),
    };
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(())
}

fn run_optimize(args: &OptimizeArgs) -> Result<()> {
    let dataset = dataset_from_jsonl(&std::fs::read_to_string(&args.dataset)?)?;
    let mdp = read_mdp(&args.mdp)?;
    let (policy, value) =
        ope::model_based_optimize(&dataset, mdp.gamma, &mdp.rewards, mdp.initial_state)?;
    if let Some(path) = &args.output {
        std::fs::write(path, policy.to_json()?)?;
    }
    let record = EstimateRecord {
        estimator: "model_optimize".into(),
        estimate: value,
        n_paths: dataset.len(),
        config_hash: args_hash(&[
            "optimize",
            &args.dataset.display().to_string(),
            &args.mdp.display().to_string(),
        ]),
    };
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(())
}

fn run_bounds(args: &BoundsArgs) -> Result<()> {
    let output = match &args.which {
        BoundsCommand::Lemma1 {
            alpha,
            beta,
            states,
            actions,
            gamma,
        } => serde_json::json!({
            "bound": bounds::lemma1_gap(*alpha, *beta, *states, *actions, *gamma)
        }),
        BoundsCommand::Lemma2Threshold {
            states,
            epsilon_prime,
            delta_prime,
        } => serde_json::json!({
            "samples": bounds::lemma2_threshold(*states, *epsilon_prime, *delta_prime)?
        }),
        BoundsCommand::Lemma2Radius {
            states,
            count,
            delta_prime,
            gamma,
        } => serde_json::json!({
            "radius": bounds::lemma2_radius_from_count(*states, *count, *delta_prime, *gamma)?
        }),
        BoundsCommand::Lemma3 {
            gamma,
            rho,
            n_prime,
            delta_prime,
        } => serde_json::json!({
            "paths": bounds::lemma3_path_count(*gamma, *rho, *n_prime, *delta_prime)?
        }),
        BoundsCommand::Lemma4 {
            k,
            lambda,
            delta_prime,
        } => serde_json::json!({
            "paths_with_sample": bounds::lemma4_path_count(*k, *lambda, *delta_prime)?
        }),
        BoundsCommand::Theorem1 { query } => {
            let query: bounds::BoundQuery =
                serde_json::from_str(&std::fs::read_to_string(query)?)?;
            serde_json::to_value(bounds::theorem1_path_bound(&query)?)?
        }
        BoundsCommand::Corollary1 { query } => {
            let query: bounds::BoundQuery =
                serde_json::from_str(&std::fs::read_to_string(query)?)?;
            serde_json::to_value(bounds::corollary1_path_bound(
                query.num_states,
                query.num_actions,
                query.gamma,
                query.epsilon,
                query.delta,
                &query.x_behavior,
                &query.rho_behavior,
                query.absorbing_state,
            )?)?
        }
        BoundsCommand::Is {
            target,
            behavior,
            gamma,
            c,
        } => {
            let target = read_policy(target)?;
            let behavior = read_policy(behavior)?;
            let absorbing = target.num_states() - 1;
            let stats = bounds::is_log_ratio_stats(&target, &behavior, *gamma, absorbing, None)?;
            let requirement = bounds::is_sample_bound(stats.kl_upper, stats.std_upper, *c)?;
            serde_json::json!({ "stats": stats, "requirement": requirement })
        }
    };
    println!("{}", serde_json::to_string_pretty(&output)?);
    Ok(())
}

/// Runs a verification experiment; `Ok(false)` means the run completed but
/// its assertion failed.
fn run_verify(args: &VerifyArgs) -> Result<bool> {
    let config: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(&args.config)?)?;
    config.validate()?;
    if let Some(requested) = &args.experiment {
        if requested != config.kind.id() {
            return Err(Error::InvalidParameter(format!(
                "--experiment {requested} does not match config kind {}",
                config.kind.id()
            )));
        }
    }
    let hash = config.hash()?;
    let destination = args
        .output
        .clone()
        .or_else(|| config.output_path.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| harness::output_dir().join(format!("{}.csv", config.kind.id())));
    let (csv, pass, summary) = match config.kind {
        ExperimentKind::Theorem2Mse => {
            let report = harness::run_theorem2_mse(
                &config.params.probs,
                config.params.n,
                config.trials,
                config.master_seed,
                config.workers,
            )?;
            let csv = format!(
                "# config_hash={hash}\nn,trials,mse_df,mse_sm,se_df,se_sm,bound,sm_analytic,pass\n{},{},{},{},{},{},{},{},{}\n",
                report.n,
                report.trials,
                report.mse_df,
                report.mse_sm,
                report.se_df,
                report.se_sm,
                report.bound,
                report.sm_analytic,
                report.pass
            );
            (csv, report.pass, serde_json::to_value(&report)?)
        }
        ExperimentKind::IsUnbiasedness => {
            let report = harness::run_is_unbiasedness(&config)?;
            let csv = format!(
                "# config_hash={hash}\nexact_value,is_mean,is_std_error,is_q99_abs_error,mb_q99_abs_error,trials,n,pass\n{},{},{},{},{},{},{},{}\n",
                report.exact_value,
                report.is_mean,
                report.is_std_error,
                report.is_q99_abs_error,
                report.mb_q99_abs_error,
                report.trials,
                report.n,
                report.pass
            );
            (csv, report.pass, serde_json::to_value(&report)?)
        }
        ExperimentKind::OpeSweep => {
            let rows = harness::run_ope_sweep(&config)?;
            (harness::sweep_csv(&rows, &hash), true, serde_json::to_value(&rows)?)
        }
        ExperimentKind::BiasCurve => {
            let rows = harness::run_bias_curve(
                &config.params.sigma_grid,
                config.params.n,
                config.master_seed,
                config.workers,
            )?;
            (
                harness::bias_curve_csv(&rows, &hash),
                true,
                serde_json::to_value(&rows)?,
            )
        }
        _ => {
            let report = harness::run_coverage_experiment(&config)?;
            (report.to_csv(), report.pass, serde_json::to_value(&report)?)
        }
    };
    harness::write_artifact(&destination, &csv, args.force)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(pass)
}

fn run_bias_curve_cmd(args: &BiasCurveArgs) -> Result<()> {
    if args.steps == 0 {
        return Err(Error::InvalidParameter("steps must be >= 1".into()));
    }
    let grid: Vec<f64> = if args.steps == 1 {
        vec![args.sigma_min]
    } else {
        (0..args.steps)
            .map(|i| {
                args.sigma_min
                    + (args.sigma_max - args.sigma_min) * i as f64 / (args.steps - 1) as f64
            })
            .collect()
    };
    let rows = harness::run_bias_curve(&grid, args.trials, args.seed, None)?;
    let hash = args_hash(&[
        "bias-curve",
        &args.sigma_min.to_string(),
        &args.sigma_max.to_string(),
        &args.steps.to_string(),
        &args.trials.to_string(),
        &args.seed.to_string(),
    ]);
    let csv = harness::bias_curve_csv(&rows, &hash);
    match &args.output {
        Some(path) => harness::write_artifact(path, &csv, args.force)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_certificate(args: &CertificateArgs) -> Result<()> {
    let dataset = dataset_from_jsonl(&std::fs::read_to_string(&args.dataset)?)?;
    let mdp = read_mdp(&args.mdp)?;
    let target = read_policy(&args.target)?;
    let behavior = match &args.behavior {
        Some(p) => read_policy(p)?,
        None => Policy::uniform(mdp.num_states, mdp.num_actions),
    };
    let certificate = bounds::accuracy_certificate(
        &dataset,
        &target,
        &behavior,
        mdp.gamma,
        &mdp.rewards,
        mdp.initial_state,
        args.delta,
    )?;
    println!("{}", serde_json::to_string_pretty(&certificate)?);
    Ok(())
}

/// Parses and runs a CLI invocation, returning the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if informational { 0 } else { 1 };
        }
    };
    let outcome = match &cli.command {
        Command::Sample(args) => run_sample(args).map(|()| 0),
        Command::Evaluate(args) => run_evaluate(args).map(|()| 0),
        Command::Optimize(args) => run_optimize(args).map(|()| 0),
        Command::Bounds(args) => run_bounds(args).map(|()| 0),
        Command::Verify(args) => run_verify(args).map(|pass| if pass { 0 } else { 2 }),
        Command::BiasCurve(args) => run_bias_curve_cmd(args).map(|()| 0),
        Command::Certificate(args) => run_certificate(args).map(|()| 0),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_exits_zero() {
        assert_eq!(cli_main(["orlab", "--help"]), 0);
    }

    #[test]
    fn unknown_subcommand_exits_one() {
        assert_eq!(cli_main(["orlab", "frobnicate"]), 1);
    }

    #[test]
    fn bounds_lemma3_runs() {
        assert_eq!(
            cli_main([
                "orlab",
                "bounds",
                "lemma3",
                "--gamma",
                "0.9",
                "--rho",
                "0.5",
                "--n-prime",
                "100",
                "--delta-prime",
                "0.05",
            ]),
            0
        );
    }

    #[test]
    fn invalid_bounds_parameters_exit_one() {
        assert_eq!(
            cli_main([
                "orlab",
                "bounds",
                "lemma2-threshold",
                "--states",
                "5",
                "--epsilon-prime",
                "2.0",
                "--delta-prime",
                "0.1",
            ]),
            1
        );
    }
}
