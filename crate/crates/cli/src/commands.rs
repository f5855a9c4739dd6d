//! Command implementations. Each returns a JSON summary that `main` prints.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use manifold_explore::analysis::{compute_snr_arrays, pass_at_k};
use manifold_explore::envsim::{
    generate_demos, meta_path, read_jsonl, read_meta, run_expert_episode, write_dataset, write_jsonl, DatasetMeta,
    DATASET_FORMAT_VERSION,
};
use manifold_explore::improve::{collect_rollouts, eval_seeds, mean_jerk, run_rounds, RoundPlan};
use manifold_explore::nn::Checkpoint;
use manifold_explore::{EnvKind, Error, ExperimentConfig, Model, RolloutMode, Trainer, TrajectoryRecord};
use serde_json::{json, Value};

use crate::UsageError;

/// Config from `path` (or built-in defaults), with an optional environment override.
pub fn load_config(path: Option<&Path>, env: Option<&str>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let s = fs::read_to_string(p).map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
            ExperimentConfig::from_json(&s)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(name) = env {
        let kind: EnvKind = name.parse()?;
        cfg.env = manifold_explore::EnvConfig::preset(kind);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn config_json(cfg: &ExperimentConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn set_meta(ck: &mut Checkpoint, key: &str, value: Value) {
    if !ck.meta.is_object() {
        ck.meta = Value::Object(Default::default());
    }
    ck.meta.as_object_mut().expect("object").insert(key.into(), value);
}

fn read_dataset(path: &Path, cfg: &ExperimentConfig) -> Result<Vec<TrajectoryRecord>> {
    if meta_path(path).exists() {
        let meta = read_meta(path)?;
        if meta.env.name != cfg.env.name {
            return Err(UsageError(format!(
                "dataset {} is for {}, config is for {}",
                path.display(),
                meta.env.name,
                cfg.env.name
            ))
            .into());
        }
    }
    let records = read_jsonl(path).with_context(|| format!("reading dataset {}", path.display()))?;
    if records.is_empty() {
        bail!(Error::Input(format!("dataset {} is empty", path.display())));
    }
    Ok(records)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn demo_gen(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let records = generate_demos(&cfg.env, cfg.demos.count, cfg.demos.seed)?;
    ensure_parent(out)?;
    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        env: cfg.env.clone(),
        records: records.len(),
        normalization: None,
        provenance: Some(json!({ "command": "demo-gen", "config": config_json(cfg) })),
    };
    write_dataset(out, &records, &meta)?;
    let steps: usize = records.iter().map(|r| r.len()).sum();
    Ok(json!({
        "dataset": out,
        "env": cfg.env.name,
        "records": records.len(),
        "successes": records.iter().filter(|r| r.success).count(),
        "steps": steps,
        "seed": cfg.demos.seed,
    }))
}

/// Path of the loss log written next to a checkpoint.
pub fn loss_log_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".losses.jsonl");
    PathBuf::from(s)
}

/// Trains until `cfg.train.iterations` steps have been taken in total.
pub fn train(cfg: &ExperimentConfig, dataset: &Path, out: &Path, resume: Option<&Path>, log_every: u64) -> Result<Value> {
    let records = read_dataset(dataset, cfg)?;
    let (mut model, data, mut trainer) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let model = Model::from_checkpoint(&ck)?;
            model.check_env(&cfg.env)?;
            let state = Model::trainer_state(&ck)?
                .ok_or_else(|| Error::Precondition(format!("{} has no trainer state to resume from", path.display())))?;
            if state.iteration > cfg.train.iterations {
                return Err(UsageError(format!(
                    "checkpoint is at iteration {}, beyond the requested {}",
                    state.iteration, cfg.train.iterations
                ))
                .into());
            }
            let data = model.training_set(&records)?;
            let trainer = Trainer::resume(cfg.train.clone(), state)?;
            (model, data, trainer)
        }
        None => {
            let (model, data) = Model::fresh(cfg.env.clone(), cfg.policy_config(), cfg.vib_config(), &records, cfg.train.seed)?;
            (model, data, Trainer::new(cfg.train.clone())?)
        }
    };
    ensure_parent(out)?;
    let log_path = loss_log_path(out);
    let file = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    let target = cfg.train.iterations;
    let remaining = target - trainer.iteration;
    let mut last = None;
    let mut write_err = None;
    model.train(&mut trainer, &data, remaining, |it, l| {
        last = Some((it, *l));
        if it % log_every.max(1) == 0 || it == target {
            let line = json!({ "iteration": it, "imitation": l.imitation, "vib": l.vib, "kl": l.kl, "total": l.total() });
            if let Err(e) = writeln!(log, "{line}") {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing loss log");
    }
    log.flush()?;
    if let Some((_, l)) = last {
        if !l.is_finite() {
            bail!(Error::Domain(format!("training diverged: {l:?}")));
        }
    }
    let mut ck = model.to_checkpoint(Some(&trainer.state()))?;
    set_meta(&mut ck, "config", config_json(cfg));
    ck.save(out)?;
    Ok(json!({
        "checkpoint": out,
        "loss_log": log_path,
        "iteration": trainer.iteration,
        "steps_run": remaining,
        "final_losses": last.map(|(_, l)| l),
        "plugin": model.plugin.is_some(),
        "base_checksum": model.policy.checksum(),
    }))
}

pub struct EvalArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub expert: bool,
    pub episodes: usize,
    pub attempts: usize,
    pub mode: RolloutMode,
    pub alpha: f64,
}

pub fn eval(cfg: &ExperimentConfig, args: &EvalArgs<'_>) -> Result<Value> {
    if args.episodes == 0 || args.attempts == 0 {
        return Err(UsageError("episodes and attempts must be at least 1".into()).into());
    }
    let seeds = eval_seeds(args.episodes);
    let pass_k = args.attempts.min(5);
    let (env, records, outcomes, source) = if args.expert {
        let env = cfg.env.clone();
        let records: Vec<TrajectoryRecord> = seeds.iter().map(|&s| run_expert_episode(&env, s)).collect();
        // the scripted expert is deterministic, so every attempt repeats the first
        let outcomes = records.iter().map(|r| vec![r.success; args.attempts]).collect::<Vec<_>>();
        (env, records, outcomes, Value::String("scripted-expert".into()))
    } else {
        let path = args
            .checkpoint
            .ok_or_else(|| UsageError("eval needs --checkpoint or --expert".into()))?;
        let model = Model::load(path)?;
        let env = model.env.clone();
        let c = collect_rollouts(&model, &env, &seeds, args.attempts, args.mode, args.alpha, args.episodes * args.attempts, 0)?;
        (env, c.records, c.outcomes, json!(path))
    };
    let successes = records.iter().filter(|r| r.success).count();
    Ok(json!({
        "policy": source,
        "env": env.name,
        "mode": if args.expert { Value::Null } else { json!(args.mode) },
        "alpha": args.alpha,
        "episodes": args.episodes,
        "attempts": args.attempts,
        "rollouts": records.len(),
        "success_rate": successes as f64 / records.len() as f64,
        "pass_k": pass_k,
        "pass_at_5": pass_at_k(&outcomes, pass_k)?,
        "average_jerk": mean_jerk(&records, env.dt()),
        "config": config_json(cfg),
    }))
}

/// Computes the SNR spectrum over `dataset`, stores it in the checkpoint and
/// returns the report.
pub fn snr_report(cfg: &ExperimentConfig, checkpoint: &Path, dataset: &Path, threshold_db: f64) -> Result<Value> {
    let mut ck = Checkpoint::load(checkpoint)?;
    let model = Model::from_checkpoint(&ck)?;
    let plugin = model.plugin()?;
    let records = read_jsonl(dataset).with_context(|| format!("reading dataset {}", dataset.display()))?;
    let data = model.training_set(&records)?;
    let cond = model.policy.encode_batch(data.observations())?;
    let (mu, sigma) = plugin.encode_batch(cond.view())?;
    let spectrum = compute_snr_arrays(mu.view(), sigma.view())?;
    let report = spectrum.report(threshold_db);
    set_meta(&mut ck, "snr", serde_json::to_value(&spectrum)?);
    ck.save(checkpoint)?;
    let mut out = serde_json::to_value(&report)?;
    let obj = out.as_object_mut().expect("object");
    obj.insert("effective_count".into(), json!(report.effective().len()));
    obj.insert(
        "provenance".into(),
        json!({ "command": "snr-report", "checkpoint": checkpoint, "dataset": dataset, "config": config_json(cfg) }),
    );
    Ok(out)
}

pub struct ImproveArgs<'a> {
    pub checkpoint: &'a Path,
    pub dataset: &'a Path,
    pub rounds: Option<usize>,
    pub mode: Option<RolloutMode>,
    pub alpha: Option<f64>,
    pub out_dir: &'a Path,
}

/// Round plans after applying the command-line overrides.
pub fn round_plans(cfg: &ExperimentConfig, rounds: Option<usize>, mode: Option<RolloutMode>, alpha: Option<f64>) -> Result<Vec<RoundPlan>> {
    let base = if cfg.rounds.is_empty() { vec![RoundPlan::default()] } else { cfg.rounds.clone() };
    let n = rounds.unwrap_or(base.len());
    if n == 0 {
        return Err(UsageError("--rounds must be at least 1".into()).into());
    }
    let mut plans: Vec<RoundPlan> = (0..n).map(|i| base.get(i).unwrap_or(base.last().expect("nonempty")).clone()).collect();
    for p in &mut plans {
        if let Some(m) = mode {
            p.mode = m;
        }
        if let Some(a) = alpha {
            p.alpha = a;
        }
        p.validate()?;
    }
    Ok(plans)
}

pub fn improve(cfg: &ExperimentConfig, args: &ImproveArgs<'_>, mut progress: impl FnMut(&Value)) -> Result<Value> {
    let model = Model::load(args.checkpoint)?;
    model.check_env(&cfg.env)?;
    let expert = read_dataset(args.dataset, cfg)?;
    let plans = round_plans(cfg, args.rounds, args.mode, args.alpha)?;
    fs::create_dir_all(args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut written = Vec::new();
    let mut failure = None;
    let (_, reports) = run_rounds(&model, &cfg.env, &expert, &plans, &cfg.train, |out| {
        if failure.is_some() {
            return;
        }
        let r = out.report.round;
        let ckpt = args.out_dir.join(format!("round-{r}.ckpt.json"));
        let data = args.out_dir.join(format!("round-{r}.jsonl"));
        let report_path = args.out_dir.join(format!("round-{r}.json"));
        let doc = json!({
            "report": out.report,
            "checkpoint": ckpt,
            "dataset": data,
            "plan": plans[r - 1],
            "config": config_json(cfg),
        });
        let res = (|| -> Result<()> {
            let mut ck = out.model.to_checkpoint(None)?;
            set_meta(&mut ck, "config", config_json(cfg));
            ck.save(&ckpt)?;
            write_jsonl(&data, &out.dataset)?;
            write_json(&report_path, &doc)
        })();
        match res {
            Ok(()) => {
                progress(&doc);
                written.push(report_path);
            }
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(json!({ "rounds": reports, "reports": written }))
}
