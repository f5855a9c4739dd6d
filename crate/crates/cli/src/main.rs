use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use manifold_explore::config::CONFIG_ENV_VAR;
use manifold_explore::steer::{SessionManager, SteerConfig};
use manifold_explore::{ExperimentConfig, Model, RolloutMode};
use manifold_explore_cli::commands::{self, EvalArgs, ImproveArgs};
use manifold_explore_cli::{exit_code, server, UsageError};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "mxp", version, about = "Latent exploration and self-improvement for diffusion policies")]
struct Cli {
    /// Experiment config (JSON). Defaults are used when absent.
    #[arg(long, global = true, env = CONFIG_ENV_VAR)]
    config: Option<PathBuf>,
    /// Environment preset, overriding the config (planar-reach | planar-push).
    #[arg(long, global = true)]
    env: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted expert demonstrations.
    DemoGen {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output JSONL (default: paths.dataset).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a policy, with the exploration plug-in unless --no-vib.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Total iterations to reach.
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_vib: bool,
        /// Continue from this checkpoint's optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        log_every: u64,
    },
    /// Evaluate a checkpoint (or the scripted expert) on held-out starts.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate the scripted expert instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        expert: bool,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 1)]
        attempts: usize,
        #[arg(long, default_value = "base")]
        mode: RolloutMode,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-dimension latent SNR over a dataset; stored into the checkpoint.
    SnrReport {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Override the config's threshold_db.
        #[arg(long, allow_negative_numbers = true)]
        threshold_db: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run self-improvement rounds from a trained checkpoint.
    Improve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        mode: Option<RolloutMode>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Directory for round reports (default: paths.reports).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Serve the steering API and UI.
    Serve {
        /// Checkpoints to load; each is addressed by its file stem.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Serve this directory at `/` instead of the built-in UI.
        #[arg(long)]
        ui: Option<PathBuf>,
        /// Append finished steered episodes to this JSONL file.
        #[arg(long)]
        persist: Option<PathBuf>,
        #[arg(long, allow_negative_numbers = true)]
        threshold_db: Option<f64>,
    },
}

fn print(value: &Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    let res = writeln!(out, "{}", serde_json::to_string_pretty(value)?).and_then(|_| out.flush());
    match res {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// The error and its causes, skipping causes already spelled out.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let c = cause.to_string();
        if msg.contains(&c) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&c);
    }
    msg
}

fn emit(value: &Value, out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))?;
    }
    print(value)
}

fn checkpoint_id(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(".json").unwrap_or(&name).to_string()
}

fn serve(cfg: &ExperimentConfig, checkpoints: &[PathBuf], addr: SocketAddr, ui: Option<PathBuf>, persist: Option<PathBuf>, threshold: f64) -> Result<()> {
    let paths = if checkpoints.is_empty() { vec![cfg.paths.checkpoint.clone()] } else { checkpoints.to_vec() };
    let mut mgr = SessionManager::new(SteerConfig {
        threshold_db: threshold,
        persist,
        ..SteerConfig::default()
    });
    for p in &paths {
        let model = Model::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
        mgr.register(checkpoint_id(p), model);
    }
    let app = server::router(Arc::new(mgr), ui);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = commands::load_config(cli.config.as_deref(), cli.env.as_deref())?;
    match cli.command {
        Command::DemoGen { count, seed, out } => {
            if let Some(c) = count {
                cfg.demos.count = c;
            }
            if let Some(s) = seed {
                cfg.demos.seed = s;
            }
            cfg.validate()?;
            let out = out.unwrap_or_else(|| cfg.paths.dataset.clone());
            print(&commands::demo_gen(&cfg, &out)?)
        }
        Command::Train {
            dataset,
            out,
            iterations,
            seed,
            no_vib,
            resume,
            log_every,
        } => {
            if let Some(i) = iterations {
                cfg.train.iterations = i;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.no_vib |= no_vib;
            cfg.validate()?;
            let dataset = dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
            let out = out.unwrap_or_else(|| cfg.paths.checkpoint.clone());
            print(&commands::train(&cfg, &dataset, &out, resume.as_deref(), log_every)?)
        }
        Command::Eval {
            checkpoint,
            expert,
            episodes,
            attempts,
            mode,
            alpha,
            out,
        } => {
            let checkpoint = checkpoint.or_else(|| (!expert).then(|| cfg.paths.checkpoint.clone()));
            let args = EvalArgs {
                checkpoint: checkpoint.as_deref(),
                expert,
                episodes,
                attempts,
                mode,
                alpha,
            };
            emit(&commands::eval(&cfg, &args)?, out.as_deref())
        }
        Command::SnrReport {
            checkpoint,
            dataset,
            threshold_db,
            out,
        } => {
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
            let dataset = dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
            let threshold = threshold_db.unwrap_or(cfg.threshold_db);
            if !threshold.is_finite() {
                return Err(UsageError("--threshold-db must be finite".into()).into());
            }
            emit(&commands::snr_report(&cfg, &checkpoint, &dataset, threshold)?, out.as_deref())
        }
        Command::Improve {
            checkpoint,
            dataset,
            rounds,
            mode,
            alpha,
            out_dir,
        } => {
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
            let dataset = dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
            let out_dir = out_dir.unwrap_or_else(|| cfg.paths.reports.clone());
            let args = ImproveArgs {
                checkpoint: &checkpoint,
                dataset: &dataset,
                rounds,
                mode,
                alpha,
                out_dir: &out_dir,
            };
            let summary = commands::improve(&cfg, &args, |doc| {
                let r = &doc["report"];
                eprintln!(
                    "round {}: success {:.3} -> {:.3}, Pass@{} {:.3}, {} successes collected",
                    r["round"], r["success_before"].as_f64().unwrap_or(f64::NAN), r["success_after"].as_f64().unwrap_or(f64::NAN),
                    r["pass_k"], r["pass_at_5"].as_f64().unwrap_or(f64::NAN), r["successes_collected"]
                );
            })?;
            print(&summary)
        }
        Command::Serve {
            checkpoints,
            host,
            port,
            ui,
            persist,
            threshold_db,
        } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| UsageError(format!("bad address {host}:{port}: {e}")))?;
            serve(&cfg, &checkpoints, addr, ui, persist, threshold_db.unwrap_or(cfg.threshold_db))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
