//! Command-line harness: train, evaluate, rollout, baseline, summarize.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use molgen::baselines::{assess_structures, optimal_return_single, optimal_return_solvation};
use molgen::energy::{EnergyBackend, ExternalBackend, ExternalBackendConfig, MorseBackend};
use molgen::env::{formaldehyde, preset, MolEnv, TaskConfig, TaskKind};
use molgen::io::{
    parse_metrics_csv, read_baseline_file, summarize_metrics, write_baseline_file, write_xyz,
    BaselineRow, Config,
};
use molgen::nn::checkpoint;
use molgen::policy::PolicyConfig;
use molgen::ppo::{
    eval_tasks, evaluate_episode, load_policy, TrainConfig, Trainer,
};
use molgen::{Bag, Canvas, Real};

/// Environment variable naming the external energy backend executable.
const BACKEND_CMD_VAR: &str = "MOLGEN_BACKEND_CMD";

/// Errors that should abort before any work starts (exit code 2).
#[derive(Debug)]
struct StartupError(String);

impl fmt::Display for StartupError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for StartupError {}

fn startup(msg: impl Into<String>) -> anyhow::Error {
    StartupError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "molgen", about = "Train and evaluate 3D molecular design agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy with PPO, one subdirectory per seed.
    Train(TrainArgs),
    /// Load a checkpoint and run deterministic evaluation episodes.
    Evaluate(EvaluateArgs),
    /// Dump one episode as a multi-frame XYZ trajectory.
    Rollout(RolloutArgs),
    /// Compute optimal-return baselines by multi-start relaxation.
    Baseline(BaselineArgs),
    /// Aggregate metrics CSVs across seeds into a tidy summary.
    Summarize(SummarizeArgs),
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BackendKind {
    Surrogate,
    External,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum TaskKindArg {
    SingleBag,
    MultiBag,
    Solvation,
}

#[derive(Args)]
struct TaskArgs {
    /// Named task preset (single_bag_small, multi_bag_qm9_5,
    /// single_bag_large, solvation_formaldehyde).
    #[arg(long)]
    preset: Option<String>,
    /// Bag formula, repeatable; several bags imply a multi-bag task.
    #[arg(long = "bag")]
    bags: Vec<String>,
    /// Task kind when building from --bag flags.
    #[arg(long, value_enum)]
    task: Option<TaskKindArg>,
    /// Number of water bags for a solvation task built from flags.
    #[arg(long, default_value_t = 5)]
    solvation_n: u32,
}

impl TaskArgs {
    fn resolve(&self) -> Result<TaskConfig> {
        if let Some(name) = &self.preset {
            return preset(name)
                .ok_or_else(|| startup(format!("unknown preset {name:?}")));
        }
        let kind = self.task.unwrap_or(TaskKindArg::SingleBag);
        if kind == TaskKindArg::Solvation {
            return Ok(TaskConfig::solvation(formaldehyde(), self.solvation_n));
        }
        if self.bags.is_empty() {
            return Err(startup("need --preset or at least one --bag"));
        }
        let bags: Vec<Bag> = self
            .bags
            .iter()
            .map(|f| Bag::from_formula(f).map_err(|e| startup(format!("bad bag {f:?}: {e}"))))
            .collect::<Result<_>>()?;
        Ok(match kind {
            TaskKindArg::MultiBag => TaskConfig::multi_bag(bags),
            _ if bags.len() > 1 => TaskConfig::multi_bag(bags),
            _ => TaskConfig::single_bag(bags[0].clone()),
        })
    }
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Surrogate)]
    backend: BackendKind,
    /// External backend executable; falls back to $MOLGEN_BACKEND_CMD.
    #[arg(long)]
    backend_cmd: Option<String>,
}

impl BackendArgs {
    fn build(&self) -> Result<Arc<dyn EnergyBackend<Real>>> {
        match self.backend {
            BackendKind::Surrogate => Ok(Arc::new(MorseBackend::with_default_params())),
            BackendKind::External => {
                let cmd = self
                    .backend_cmd
                    .clone()
                    .or_else(|| std::env::var(BACKEND_CMD_VAR).ok())
                    .ok_or_else(|| {
                        startup(format!(
                            "external backend selected but no executable given; \
                             use --backend-cmd or set {BACKEND_CMD_VAR}"
                        ))
                    })?;
                if !executable_exists(&cmd) {
                    return Err(startup(format!("backend executable not found: {cmd}")));
                }
                Ok(Arc::new(ExternalBackend::new(ExternalBackendConfig::new(cmd))))
            }
        }
    }
}

fn executable_exists(cmd: &str) -> bool {
    let path = Path::new(cmd);
    if path.components().count() > 1 {
        return path.is_file();
    }
    std::env::var_os("PATH").is_some_and(|paths| {
        std::env::split_paths(&paths).any(|dir| dir.join(cmd).is_file())
    })
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Flat key-value config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Total environment steps per seed.
    #[arg(long)]
    steps: Option<usize>,
    /// Seed list: "0..9" (inclusive) or "0,3,7".
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Disable the dihedral-sign head; the dihedral becomes one signed
    /// Gaussian over [-pi, pi].
    #[arg(long)]
    ablate_no_kappa: bool,
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once("..") {
        let lo: u64 = a.trim().parse().context("bad seed range start")?;
        let hi: u64 = b.trim().parse().context("bad seed range end")?;
        if hi < lo {
            bail!("empty seed range {spec:?}");
        }
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|t| t.trim().parse::<u64>().with_context(|| format!("bad seed {t:?}")))
        .collect()
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file_cfg = match &args.config {
        Some(path) => Config::load(path)
            .map_err(|e| startup(format!("config {}: {e}", path.display())))?,
        None => Config::default(),
    };
    let cfg_usize = |section: &str, key: &str| -> Result<Option<usize>> {
        file_cfg.get_parsed::<usize>(section, key).map_err(|e| startup(e))
    };

    let task = if args.task.preset.is_none() && args.task.bags.is_empty() {
        match file_cfg.get("task", "preset") {
            Some(name) => {
                preset(name).ok_or_else(|| startup(format!("unknown preset {name:?}")))?
            }
            None => args.task.resolve()?,
        }
    } else {
        args.task.resolve()?
    };
    task.validate().map_err(|e| startup(e))?;

    let backend = args.backend.build()?;
    let seeds = parse_seeds(&args.seeds)?;
    if seeds.is_empty() {
        return Err(startup("no seeds given"));
    }

    let mut base = match task.kind {
        TaskKind::SingleBag => TrainConfig::default(),
        _ => TrainConfig::default().large_batch(),
    };
    base.total_steps = args
        .steps
        .or(cfg_usize("train", "steps")?)
        .unwrap_or(base.total_steps);
    base.n_workers = args
        .workers
        .or(cfg_usize("train", "workers")?)
        .unwrap_or(base.n_workers);
    base.eval_every = args
        .eval_every
        .or(cfg_usize("train", "eval_every")?)
        .unwrap_or(base.eval_every);
    base.checkpoint_every = args
        .checkpoint_every
        .or(cfg_usize("train", "checkpoint_every")?)
        .unwrap_or(base.checkpoint_every);

    let policy_config = PolicyConfig {
        d_min: task.d_min,
        d_max: task.d_max,
        use_kappa_head: !args.ablate_no_kappa,
        ..Default::default()
    };

    for &seed in &seeds {
        let seed_dir = args.out.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&seed_dir)?;
        let mut run_cfg = Config::default();
        run_cfg.set("train", "steps", &base.total_steps.to_string());
        run_cfg.set("train", "workers", &base.n_workers.to_string());
        run_cfg.set("train", "seed", &seed.to_string());
        run_cfg.set("train", "ablate_no_kappa", &args.ablate_no_kappa.to_string());
        std::fs::write(seed_dir.join("run.cfg"), run_cfg.to_text())?;

        let cfg = TrainConfig { seed, out_dir: Some(seed_dir.clone()), ..base.clone() };
        let mut trainer = Trainer::new(task.clone(), policy_config.clone(), cfg, backend.clone());
        trainer.run()?;

        // Final deterministic structure of the first evaluation task.
        if let Some((label, eval_cfg)) = eval_tasks(&task).into_iter().next() {
            let mut env = MolEnv::new(eval_cfg, backend.clone(), seed);
            let (ret, state) = evaluate_episode(trainer.policy(), trainer.store(), &mut env)?;
            write_xyz(
                &state.canvas,
                &format!("bag {label} return {ret}"),
                &seed_dir.join("final.xyz"),
            )?;
            println!(
                "seed {seed}: {} steps, final return {ret:.6} on {label}",
                trainer.steps_done()
            );
        }
    }
    Ok(())
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Deterministic episodes per bag (environment seeds 0..n).
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    /// Also print validity / RMSD / diversity of the final structures.
    #[arg(long)]
    assess: bool,
}

fn load_checkpoint_policy(
    path: &Path,
) -> Result<(molgen::nn::ParamStore<Real>, molgen::policy::Policy)> {
    if !path.is_file() {
        return Err(startup(format!("missing checkpoint: {}", path.display())));
    }
    let ckpt = checkpoint::load(path)?;
    Ok(load_policy(&ckpt)?)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (store, policy) = load_checkpoint_policy(&args.checkpoint)?;
    let task = args.task.resolve()?;
    let backend = args.backend.build()?;

    let mut all_returns = Vec::new();
    let mut finals: Vec<Canvas> = Vec::new();
    for (label, cfg) in eval_tasks(&task) {
        let mut returns = Vec::new();
        for ep in 0..args.episodes {
            let mut env = MolEnv::new(cfg.clone(), backend.clone(), ep as u64);
            let (ret, state) = evaluate_episode(&policy, &store, &mut env)?;
            returns.push(ret);
            finals.push(state.canvas);
        }
        let mean = returns.iter().sum::<Real>() / returns.len() as Real;
        println!("bag {label}: mean return {mean:.6} over {} episodes", returns.len());
        all_returns.extend(returns);
    }
    let mean = all_returns.iter().sum::<Real>() / all_returns.len() as Real;
    println!("mean return {mean:.6}");

    if args.assess {
        // Structure metrics need analytic gradients, so they always use
        // the surrogate backend.
        let surrogate = MorseBackend::with_default_params();
        let a = assess_structures(&finals, &surrogate)?;
        println!("Validity, RMSD, Diversity");
        println!(
            "{:.3}, {}, {}",
            a.validity,
            a.median_rmsd.map_or("n/a".to_string(), |r| format!("{r:.4}")),
            a.diversity
        );
    }
    Ok(())
}

#[derive(Args)]
struct RolloutArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "rollout.xyz")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_rollout(args: RolloutArgs) -> Result<()> {
    let (store, policy) = load_checkpoint_policy(&args.checkpoint)?;
    let task = args.task.resolve()?;
    let backend = args.backend.build()?;
    let mut env = MolEnv::new(task, backend, args.seed);

    let mut rng = rand::rngs::mock::StepRng::new(0, 0); // unused: deterministic heads
    let mut frames = String::new();
    let mut total = 0.0;
    let mut step_idx = 0;
    while !env.is_done() {
        let sampled = policy
            .act(&store, env.state(), &mut rng, true)
            .map_err(anyhow::Error::from)?;
        let step = env.step(&sampled.action)?;
        total += step.reward;
        step_idx += 1;
        molgen::io::append_xyz_frame(
            &mut frames,
            &step.next_state.canvas,
            &format!("step {step_idx} reward {:.6}", step.reward),
        );
    }
    std::fs::write(&args.out, frames)?;
    println!("wrote {step_idx} frames to {}; episode return {total:.6}", args.out.display());
    Ok(())
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long, default_value_t = 64)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "baselines")]
    out: PathBuf,
}

fn cmd_baseline(args: BaselineArgs) -> Result<()> {
    let task = args.task.resolve()?;
    // Relaxation needs analytic gradients: surrogate only.
    let backend = MorseBackend::with_default_params();
    std::fs::create_dir_all(&args.out)?;

    let mut rows = Vec::new();
    match task.kind {
        TaskKind::Solvation => {
            let run = optimal_return_solvation(
                &backend,
                &task.initial_canvas,
                task.refills,
                task.distance_penalty,
                12,
                args.seed,
            )?;
            let label = format!("H2Ox{}", task.refills);
            let xyz = format!("{label}.xyz");
            write_xyz(&run.best_canvas, &label, &args.out.join(&xyz))?;
            rows.push(BaselineRow {
                bag: label,
                optimal_return: run.optimal_return,
                xyz_path: xyz,
                restarts: run.restarts,
                seed: run.seed,
            });
        }
        _ => {
            for bag in &task.bags {
                let run = optimal_return_single(&backend, bag, args.restarts, args.seed)?;
                let label = bag.to_string();
                let xyz = format!("{label}.xyz");
                write_xyz(&run.best_canvas, &label, &args.out.join(&xyz))?;
                rows.push(BaselineRow {
                    bag: label,
                    optimal_return: run.optimal_return,
                    xyz_path: xyz,
                    restarts: run.restarts,
                    seed: run.seed,
                });
            }
        }
    }
    let path = args.out.join("baselines.csv");
    write_baseline_file(&rows, &path)?;
    for r in read_baseline_file(&path)? {
        println!("{}: {:.6}", r.bag, r.optimal_return);
    }
    Ok(())
}

#[derive(Args)]
struct SummarizeArgs {
    /// metrics.csv files from per-seed runs.
    inputs: Vec<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_summarize(args: SummarizeArgs) -> Result<()> {
    if args.inputs.is_empty() {
        return Err(startup("no input CSVs given"));
    }
    let mut rows = Vec::new();
    for path in &args.inputs {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        rows.extend(parse_metrics_csv(&text)?);
    }
    let summary = summarize_metrics(&rows);
    match &args.out {
        Some(path) => std::fs::write(path, summary)?,
        None => print!("{summary}"),
    }
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Rollout(args) => cmd_rollout(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::Summarize(args) => cmd_summarize(args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<StartupError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
