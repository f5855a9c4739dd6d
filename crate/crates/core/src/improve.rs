//! Success-filtered self-improvement rounds: evaluate, explore, keep the
//! successes, merge them with the expert data and retrain.

use serde::{Deserialize, Serialize};

use crate::analysis::{average_jerk, compute_snr_arrays, pass_at_k, relative_improvement, SnrReport};
use crate::envsim::{EnvConfig, Source, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::RngStream;
use crate::policy::{DiffusionPolicy, TrainingSet};
use crate::rollout::{run_episodes, EpisodeSpec, RolloutMode};
use crate::train::{TrainConfig, Trainer};
use crate::vib::VibPlugin;

/// Held-out evaluation seeds start here; exploration seeds are below 2^48.
pub const EVAL_SEED_BASE: u64 = 1 << 52;

pub fn eval_seeds(n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| EVAL_SEED_BASE + i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundPlan {
    /// Distinct start conditions explored.
    pub starts: usize,
    pub attempts: usize,
    pub alpha: f64,
    pub mode: RolloutMode,
    /// Maximum episodes executed while exploring.
    pub budget: usize,
    /// Successful rollouts kept per round (0 keeps all).
    pub cap: usize,
    /// Retraining steps; `None` means half the base-training iterations.
    pub retrain_iterations: Option<u64>,
    /// Continue from the current parameters instead of re-initializing.
    pub warm_start: bool,
    pub eval_episodes: usize,
    pub seed: u64,
    pub threshold_db: f64,
}

impl Default for RoundPlan {
    fn default() -> Self {
        Self {
            starts: 20,
            attempts: 5,
            alpha: 2.0,
            mode: RolloutMode::Explore,
            budget: 100,
            cap: 20,
            retrain_iterations: None,
            warm_start: true,
            eval_episodes: 100,
            seed: 0,
            threshold_db: 0.0,
        }
    }
}

impl RoundPlan {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(Error::config("starts", "must be at least 1"));
        }
        if self.attempts == 0 {
            return Err(Error::config("attempts", "must be at least 1"));
        }
        if self.budget < self.starts {
            return Err(Error::config("budget", "must cover at least one attempt per start"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be a finite value >= 0"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "must be at least 1"));
        }
        Ok(())
    }

    /// Exploration start seeds for `round`.
    pub fn start_seeds(&self, round: usize) -> Vec<u64> {
        let mut rng = RngStream::new(self.seed, format!("improve/starts/{round}"));
        (0..self.starts).map(|_| rng.next_seed()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Collection {
    pub records: Vec<TrajectoryRecord>,
    /// Per start, the success flag of each attempt in order.
    pub outcomes: Vec<Vec<bool>>,
    pub rollouts_used: usize,
}

impl Collection {
    pub fn success_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.success).count() as f64 / self.records.len() as f64
    }

    /// Pass@k over the starts that received all `k` attempts.
    pub fn pass_at(&self, k: usize) -> Result<f64> {
        let complete: Vec<Vec<bool>> = self.outcomes.iter().filter(|o| o.len() >= k).cloned().collect();
        pass_at_k(&complete, k)
    }

    pub fn mean_jerk(&self, dt: f64) -> f64 {
        mean_jerk(&self.records, dt)
    }
}

/// Mean over records of the per-episode average jerk of the robot path.
pub fn mean_jerk(records: &[TrajectoryRecord], dt: f64) -> f64 {
    let j: Vec<f64> = records
        .iter()
        .filter_map(|r| average_jerk(&r.robot_positions(), dt).ok())
        .collect();
    if j.is_empty() {
        0.0
    } else {
        j.iter().sum::<f64>() / j.len() as f64
    }
}

/// Runs up to `attempts` episodes per start, start-major, stopping at
/// `budget` episodes in total.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts(
    model: &Model,
    env: &EnvConfig,
    starts: &[u64],
    attempts: usize,
    mode: RolloutMode,
    alpha: f64,
    budget: usize,
    round: usize,
) -> Result<Collection> {
    let mut specs = Vec::new();
    'outer: for &start_seed in starts {
        for attempt in 0..attempts {
            if specs.len() >= budget {
                break 'outer;
            }
            specs.push(EpisodeSpec { start_seed, attempt });
        }
    }
    let records = run_episodes(model, env, &specs, mode, alpha, Source::Rollout, round)?;
    let mut outcomes: Vec<Vec<bool>> = vec![Vec::new(); starts.len()];
    for (i, r) in records.iter().enumerate() {
        outcomes[i / attempts].push(r.success);
    }
    outcomes.retain(|o| !o.is_empty());
    Ok(Collection {
        rollouts_used: records.len(),
        records,
        outcomes,
    })
}

/// Keeps successful records only.
pub fn filter_successes(records: &[TrajectoryRecord]) -> Vec<TrajectoryRecord> {
    records.iter().filter(|r| r.success).cloned().collect()
}

/// `expert ∪ collected`, keeping at most `cap` collected records in order
/// (0 keeps all).
pub fn aggregate_dataset(expert: &[TrajectoryRecord], collected: &[TrajectoryRecord], cap: usize) -> Vec<TrajectoryRecord> {
    let take = if cap == 0 { collected.len() } else { cap.min(collected.len()) };
    expert.iter().chain(&collected[..take]).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub episodes: usize,
    pub success_rate: f64,
    pub average_jerk: f64,
}

/// Base-mode success over the held-out seed block.
pub fn evaluate(model: &Model, env: &EnvConfig, episodes: usize) -> Result<EvalMetrics> {
    let specs: Vec<EpisodeSpec> = eval_seeds(episodes)
        .into_iter()
        .map(|start_seed| EpisodeSpec { start_seed, attempt: 0 })
        .collect();
    let records = run_episodes(model, env, &specs, RolloutMode::Base, 0.0, Source::Rollout, 0)?;
    Ok(EvalMetrics {
        episodes,
        success_rate: records.iter().filter(|r| r.success).count() as f64 / episodes as f64,
        average_jerk: mean_jerk(&records, env.dt()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRoundReport {
    pub round: usize,
    pub mode: RolloutMode,
    pub alpha: f64,
    pub success_before: f64,
    pub success_after: f64,
    /// Pass@k over the exploration starts, `k = min(5, attempts)`.
    pub pass_at_5: f64,
    pub pass_k: usize,
    /// Mean per-episode jerk of the exploration rollouts.
    pub average_jerk: f64,
    pub rollouts_used: usize,
    pub successes_collected: usize,
    pub successes_added: usize,
    pub dataset_records: usize,
    pub retrain_iterations: u64,
    pub relative_improvement: Option<f64>,
    /// Set when exploration produced no success and the data were unchanged.
    pub zero_success_warning: bool,
    pub snr: Option<SnrReport>,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub model: Model,
    /// Aggregated dataset after this round.
    pub dataset: Vec<TrajectoryRecord>,
    pub report: ImprovementRoundReport,
}

/// SNR of the plug-in over the observations in `data`.
pub fn snr_over(model: &Model, data: &TrainingSet, threshold_db: f64) -> Result<Option<SnrReport>> {
    let Some(p) = &model.plugin else { return Ok(None) };
    let cond = model.policy.encode_batch(data.observations())?;
    let (mu, sigma) = p.encode_batch(cond.view())?;
    Ok(Some(compute_snr_arrays(mu.view(), sigma.view())?.report(threshold_db)))
}

/// One round: evaluate → explore → filter → aggregate → retrain → evaluate.
///
/// `dataset` is the aggregated data so far (expert records first);
/// `before` reuses a known success rate for the incoming model.
pub fn run_round(
    model: &Model,
    env: &EnvConfig,
    dataset: &[TrajectoryRecord],
    plan: &RoundPlan,
    train: &TrainConfig,
    round: usize,
    before: Option<f64>,
) -> Result<RoundOutcome> {
    plan.validate()?;
    model.check_env(env)?;
    let success_before = match before {
        Some(b) => b,
        None => evaluate(model, env, plan.eval_episodes)?.success_rate,
    };

    let starts = plan.start_seeds(round);
    let collection = collect_rollouts(model, env, &starts, plan.attempts, plan.mode, plan.alpha, plan.budget, round)?;
    let pass_k = plan.attempts.min(5);
    let pass_at_5 = collection.pass_at(pass_k)?;
    let successes = filter_successes(&collection.records);
    let zero_success_warning = successes.is_empty();
    let merged = aggregate_dataset(dataset, &successes, plan.cap);
    let successes_added = merged.len() - dataset.len();

    let mut next = model.clone();
    let data = next.training_set(&merged)?;
    let iterations = plan.retrain_iterations.unwrap_or(train.iterations / 2);
    let train_seed = RngStream::new(plan.seed, format!("improve/round/{round}/train")).next_seed();
    if !plan.warm_start {
        let init_seed = RngStream::new(plan.seed, format!("improve/round/{round}/init")).next_seed();
        next.policy = DiffusionPolicy::new(next.policy.config.clone(), next.policy.normalizer.clone(), init_seed)?;
        next.plugin = next
            .plugin
            .as_ref()
            .map(|p| VibPlugin::new(p.config.clone(), next.policy.config.embed_dim, init_seed))
            .transpose()?;
    }
    let mut trainer = Trainer::new(TrainConfig {
        seed: train_seed,
        ..train.clone()
    })?;
    next.train(&mut trainer, &data, iterations, |_, _| {})?;
    let snr = snr_over(&next, &data, plan.threshold_db)?;
    if let Some(r) = &snr {
        next.snr = Some(crate::analysis::SnrSpectrum {
            snr: r.dims.iter().map(|d| d.snr).collect(),
            snr_db: r.dims.iter().map(|d| d.snr_db).collect(),
            samples: r.samples,
        });
    }
    let success_after = evaluate(&next, env, plan.eval_episodes)?.success_rate;

    let report = ImprovementRoundReport {
        round,
        mode: plan.mode,
        alpha: plan.alpha,
        success_before,
        success_after,
        pass_at_5,
        pass_k,
        average_jerk: collection.mean_jerk(env.dt()),
        rollouts_used: collection.rollouts_used,
        successes_collected: successes.len(),
        successes_added,
        dataset_records: merged.len(),
        retrain_iterations: iterations,
        relative_improvement: relative_improvement(success_before, success_after),
        zero_success_warning,
        snr,
    };
    Ok(RoundOutcome {
        model: next,
        dataset: merged,
        report,
    })
}

/// Chains rounds; each starts from the previous round's model and data.
pub fn run_rounds(
    model: &Model,
    env: &EnvConfig,
    expert: &[TrajectoryRecord],
    plans: &[RoundPlan],
    train: &TrainConfig,
    mut on_round: impl FnMut(&RoundOutcome),
) -> Result<(Model, Vec<ImprovementRoundReport>)> {
    if plans.is_empty() {
        return Err(Error::Input("at least one round plan is required".into()));
    }
    let mut current = model.clone();
    let mut dataset = expert.to_vec();
    let mut before = None;
    let mut reports = Vec::with_capacity(plans.len());
    for (i, plan) in plans.iter().enumerate() {
        let round = i + 1;
        // a known success rate carries over only when the eval block matches
        let carry = before.filter(|_| i > 0 && plans[i - 1].eval_episodes == plan.eval_episodes);
        let out = run_round(&current, env, &dataset, plan, train, round, carry)?;
        on_round(&out);
        before = Some(out.report.success_after);
        reports.push(out.report);
        current = out.model;
        dataset = out.dataset;
    }
    Ok((current, reports))
}
