//! The training loop: collect, update, periodically evaluate, checkpoint.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rollout::{collect_rollouts, Worker};
use super::update::{ppo_update, UpdateStats};
use super::{TrainConfig, TrainError};
use crate::energy::EnergyBackend;
use crate::env::{MolEnv, TaskConfig, TaskKind};
use crate::nn::adam::{Adam, AdamConfig};
use crate::nn::checkpoint::{self, Checkpoint};
use crate::nn::params::ParamStore;
use crate::nn::schnet::SchNetConfig;
use crate::policy::{Policy, PolicyConfig};
use crate::{Real, State};

/// One metrics row: a deterministic evaluation return for one bag plus
/// the diagnostics of the most recent update.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub step: usize,
    pub seed: u64,
    pub bag: String,
    pub eval_return: Real,
    pub stats: UpdateStats,
}

pub const METRICS_HEADER: &str =
    "step,seed,bag,return,policy_loss,value_loss,entropy,clip_fraction";

impl EvalRecord {
    pub fn csv_line(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.seed,
            self.bag,
            self.eval_return,
            self.stats.policy_loss,
            self.stats.value_loss,
            self.stats.entropy,
            self.stats.clip_fraction
        )
        .unwrap();
        s
    }
}

#[derive(Debug, Default)]
pub struct TrainReport {
    pub records: Vec<EvalRecord>,
    /// (step, return) for every training episode that finished.
    pub train_episode_returns: Vec<(usize, Real)>,
}

impl TrainReport {
    /// Final deterministic evaluation return for one bag label.
    pub fn final_return(&self, bag: &str) -> Option<Real> {
        self.records.iter().rev().find(|r| r.bag == bag).map(|r| r.eval_return)
    }
}

/// Checkpoint metadata describing the policy architecture, so a saved
/// model can be rebuilt without the original configuration.
pub fn policy_meta(cfg: &PolicyConfig) -> Vec<(String, String)> {
    let enc = &cfg.encoder;
    let kv = |k: &str, v: String| (k.to_string(), v);
    vec![
        kv("n_interactions", enc.n_interactions.to_string()),
        kv("cutoff", enc.cutoff.to_string()),
        kv("n_filters", enc.n_filters.to_string()),
        kv("n_atom_basis", enc.n_atom_basis.to_string()),
        kv("n_rbf", enc.n_rbf.to_string()),
        kv("e_max", enc.e_max.to_string()),
        kv("bag_hidden", cfg.bag_hidden.to_string()),
        kv("bag_dim", cfg.bag_dim.to_string()),
        kv("head_hidden", cfg.head_hidden.to_string()),
        kv("d_min", cfg.d_min.to_string()),
        kv("d_max", cfg.d_max.to_string()),
        kv(
            "sigma_init",
            format!("{} {} {}", cfg.sigma_init[0], cfg.sigma_init[1], cfg.sigma_init[2]),
        ),
        kv("use_kappa_head", cfg.use_kappa_head.to_string()),
    ]
}

fn meta<T: FromStr>(ckpt: &Checkpoint, key: &str) -> Result<T, TrainError> {
    let raw = ckpt
        .meta_value(key)
        .ok_or_else(|| TrainError::Meta(format!("missing key {key}")))?;
    raw.parse().map_err(|_| TrainError::Meta(format!("bad value for {key}: {raw:?}")))
}

fn policy_config_from_meta(ckpt: &Checkpoint) -> Result<PolicyConfig, TrainError> {
    let sigma_raw: String = meta(ckpt, "sigma_init")?;
    let sigma: Vec<Real> = sigma_raw
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| TrainError::Meta(format!("bad sigma_init {t:?}"))))
        .collect::<Result<_, _>>()?;
    if sigma.len() != 3 {
        return Err(TrainError::Meta("sigma_init needs three values".into()));
    }
    Ok(PolicyConfig {
        encoder: SchNetConfig {
            n_interactions: meta(ckpt, "n_interactions")?,
            cutoff: meta(ckpt, "cutoff")?,
            n_filters: meta(ckpt, "n_filters")?,
            n_atom_basis: meta(ckpt, "n_atom_basis")?,
            n_rbf: meta(ckpt, "n_rbf")?,
            e_max: meta(ckpt, "e_max")?,
        },
        bag_hidden: meta(ckpt, "bag_hidden")?,
        bag_dim: meta(ckpt, "bag_dim")?,
        head_hidden: meta(ckpt, "head_hidden")?,
        d_min: meta(ckpt, "d_min")?,
        d_max: meta(ckpt, "d_max")?,
        sigma_init: [sigma[0], sigma[1], sigma[2]],
        use_kappa_head: meta(ckpt, "use_kappa_head")?,
    })
}

/// Rebuild a policy and its parameters from a loaded checkpoint.
pub fn load_policy(ckpt: &Checkpoint) -> Result<(ParamStore<Real>, Policy), TrainError> {
    let config = policy_config_from_meta(ckpt)?;
    let mut store = ParamStore::new();
    // The freshly initialized values are overwritten by the checkpoint.
    let policy = Policy::new(&mut store, config, &mut ChaCha8Rng::seed_from_u64(0));
    ckpt.load_into(&mut store)?;
    Ok((store, policy))
}

/// Run one deterministic episode and return its undiscounted return and
/// final state.
pub fn evaluate_episode(
    policy: &Policy,
    store: &ParamStore<Real>,
    env: &mut MolEnv,
) -> Result<(Real, State), TrainError> {
    env.reset();
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused: every head takes its mode
    let mut total = 0.0;
    let cap = env.config().max_episode_len().max(1) + 1;
    for _ in 0..cap {
        if env.is_done() {
            break;
        }
        let sampled = policy.act(store, env.state(), &mut rng, true)?;
        let step = env.step(&sampled.action)?;
        total += step.reward;
    }
    Ok((total, env.state().clone()))
}

/// Per-bag evaluation tasks derived from a training task. Multi-bag
/// training evaluates each bag on its own; solvation evaluates the task
/// as configured.
pub fn eval_tasks(task: &TaskConfig) -> Vec<(String, TaskConfig)> {
    match task.kind {
        TaskKind::Solvation => {
            vec![(format!("H2Ox{}", task.refills), task.clone())]
        }
        _ => task
            .bags
            .iter()
            .map(|b| {
                let mut cfg = task.clone();
                cfg.kind = TaskKind::SingleBag;
                cfg.bags = vec![b.clone()];
                (b.to_string(), cfg)
            })
            .collect(),
    }
}

pub struct Trainer {
    task: TaskConfig,
    config: TrainConfig,
    backend: Arc<dyn EnergyBackend<Real>>,
    policy: Policy,
    store: ParamStore<Real>,
    adam: Adam<Real>,
    workers: Vec<Worker>,
    rng: ChaCha8Rng,
    steps_done: usize,
}

impl Trainer {
    pub fn new(
        task: TaskConfig,
        policy_config: PolicyConfig,
        config: TrainConfig,
        backend: Arc<dyn EnergyBackend<Real>>,
    ) -> Self {
        task.validate().expect("invalid task configuration");
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let policy = Policy::new(&mut store, policy_config, &mut rng);
        let adam = Adam::new(
            AdamConfig { learning_rate: config.learning_rate, ..Default::default() },
            &store,
        );
        let workers = Self::make_workers(&task, &config, backend.clone());
        Trainer { task, config, backend, policy, store, adam, workers, rng, steps_done: 0 }
    }

    /// Resume from a checkpoint written by `save_checkpoint`.
    pub fn from_checkpoint(
        path: &Path,
        task: TaskConfig,
        config: TrainConfig,
        backend: Arc<dyn EnergyBackend<Real>>,
    ) -> Result<Self, TrainError> {
        let ckpt = checkpoint::load(path)?;
        let (store, policy) = load_policy(&ckpt)?;
        let mut adam = Adam::new(
            AdamConfig { learning_rate: config.learning_rate, ..Default::default() },
            &store,
        );
        if let Some(state) = ckpt.adam.clone() {
            adam.restore(state.m, state.v, state.step);
        }
        let steps_done = ckpt
            .meta_value("trained_steps")
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(steps_done as u64));
        let workers = Self::make_workers(&task, &config, backend.clone());
        Ok(Trainer { task, config, backend, policy, store, adam, workers, rng, steps_done })
    }

    fn make_workers(
        task: &TaskConfig,
        config: &TrainConfig,
        backend: Arc<dyn EnergyBackend<Real>>,
    ) -> Vec<Worker> {
        (0..config.n_workers as u64)
            .map(|i| {
                let env_seed = config.seed.wrapping_mul(0x1_0000).wrapping_add(2 * i);
                let env = MolEnv::new(task.clone(), backend.clone(), env_seed);
                Worker::new(env, env_seed + 1)
            })
            .collect()
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn store(&self) -> &ParamStore<Real> {
        &self.store
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        let mut meta = policy_meta(self.policy.config());
        meta.push(("trained_steps".into(), self.steps_done.to_string()));
        meta.push(("seed".into(), self.config.seed.to_string()));
        checkpoint::save(path, &self.store, Some(&self.adam), &meta)?;
        Ok(())
    }

    fn evaluate(&self, step: usize, stats: UpdateStats) -> Result<Vec<EvalRecord>, TrainError> {
        let mut records = Vec::new();
        for (label, cfg) in eval_tasks(&self.task) {
            let mut env = MolEnv::new(cfg, self.backend.clone(), self.config.seed ^ 0xe7a1);
            let (ret, _) = evaluate_episode(&self.policy, &self.store, &mut env)?;
            records.push(EvalRecord {
                step,
                seed: self.config.seed,
                bag: label,
                eval_return: ret,
                stats,
            });
        }
        Ok(records)
    }

    /// Run exactly one collect-and-update cycle. Finished-episode returns
    /// are appended to `episode_returns` when provided. Exposed so callers
    /// can interleave their own evaluation and stop early.
    pub fn train_batch(
        &mut self,
        update_index: usize,
        episode_returns: Option<&mut Vec<(usize, Real)>>,
    ) -> Result<UpdateStats, TrainError> {
        let spw = self.config.steps_per_worker();
        let batch = collect_rollouts(
            &self.policy,
            &self.store,
            &mut self.workers,
            spw,
            self.config.gamma,
            self.config.lambda,
        )?;
        if let Some(sink) = episode_returns {
            for &r in &batch.episode_returns {
                sink.push((self.steps_done, r));
            }
        }
        let stats = ppo_update(
            &self.policy,
            &mut self.store,
            &mut self.adam,
            &batch,
            &self.config,
            &mut self.rng,
            update_index,
        )?;
        self.steps_done += spw * self.config.n_workers;
        Ok(stats)
    }

    /// Deterministic evaluation of every eval task at the current policy.
    pub fn evaluate_now(&self) -> Result<Vec<EvalRecord>, TrainError> {
        self.evaluate(self.steps_done, UpdateStats::default())
    }

    /// Train until `total_steps` environment steps have been consumed.
    pub fn run(&mut self) -> Result<TrainReport, TrainError> {
        let mut report = TrainReport::default();

        let mut metrics_file = match &self.config.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let mut f = std::fs::File::create(dir.join("metrics.csv"))?;
                writeln!(f, "{METRICS_HEADER}")?;
                Some(f)
            }
            None => None,
        };
        let emit = |records: Vec<EvalRecord>,
                        report: &mut TrainReport,
                        file: &mut Option<std::fs::File>|
         -> Result<(), TrainError> {
            for r in records {
                if let Some(f) = file {
                    writeln!(f, "{}", r.csv_line())?;
                }
                report.records.push(r);
            }
            if let Some(f) = file {
                f.flush()?;
            }
            Ok(())
        };

        let mut stats = UpdateStats::default();
        let mut next_eval = self.steps_done;
        let mut next_ckpt = self.steps_done + self.config.checkpoint_every;
        let mut update_index = 0usize;

        while self.steps_done < self.config.total_steps {
            if self.config.eval_every > 0 && self.steps_done >= next_eval {
                let recs = self.evaluate(self.steps_done, stats)?;
                emit(recs, &mut report, &mut metrics_file)?;
                next_eval += self.config.eval_every;
            }

            stats = self.train_batch(update_index, Some(&mut report.train_episode_returns))?;
            update_index += 1;

            if self.config.checkpoint_every > 0 && self.steps_done >= next_ckpt {
                if let Some(dir) = &self.config.out_dir {
                    self.save_checkpoint(&dir.join("model.ckpt"))?;
                }
                next_ckpt += self.config.checkpoint_every;
            }
        }

        let recs = self.evaluate(self.steps_done, stats)?;
        emit(recs, &mut report, &mut metrics_file)?;
        if let Some(dir) = &self.config.out_dir {
            self.save_checkpoint(&dir.join("model.ckpt"))?;
        }
        Ok(report)
    }
}
