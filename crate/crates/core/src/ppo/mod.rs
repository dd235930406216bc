//! Proximal policy optimization for the placement policy.
//!
//! A training run alternates rollout collection across several
//! environment workers with clipped-surrogate updates over the collected
//! batch. All randomness derives from one seed, so runs are reproducible.

mod gae;
mod rollout;
mod train;
mod update;

pub use gae::compute_gae;
pub use rollout::{collect_rollouts, Rollout, Sample, Worker};
pub use train::{
    eval_tasks, evaluate_episode, load_policy, policy_meta, EvalRecord, TrainReport,
    Trainer, METRICS_HEADER,
};
pub use update::{ppo_update, UpdateStats};

use std::path::PathBuf;

use thiserror::Error;

use crate::env::EnvError;
use crate::nn::checkpoint::CheckpointError;
use crate::policy::PolicyError;
use crate::Real;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at update {update}; aborting before parameters are damaged")]
    NonFiniteLoss { update: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint meta: {0}")]
    Meta(String),
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Total environment steps to collect over the whole run.
    pub total_steps: usize,
    pub n_workers: usize,
    /// Batch size of one update, summed across workers.
    pub steps_per_update: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub gamma: Real,
    pub lambda: Real,
    pub clip_epsilon: Real,
    pub value_coef: Real,
    pub entropy_coef: Real,
    pub max_grad_norm: Real,
    pub learning_rate: Real,
    pub seed: u64,
    /// Run a deterministic evaluation every this many environment steps.
    pub eval_every: usize,
    /// Write a checkpoint every this many environment steps (0: final only).
    pub checkpoint_every: usize,
    /// Where to write metrics.csv and model.ckpt; None keeps everything
    /// in memory.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 100_000,
            n_workers: 16,
            steps_per_update: 192,
            minibatch_size: 24,
            epochs: 5,
            gamma: 0.99,
            lambda: 0.95,
            clip_epsilon: 0.2,
            value_coef: 1.0,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            learning_rate: 3e-4,
            seed: 0,
            eval_every: 1920,
            checkpoint_every: 0,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    /// Larger batch used for the multi-bag and solvation tasks.
    pub fn large_batch(mut self) -> Self {
        self.steps_per_update = 384;
        self.minibatch_size = 48;
        self
    }

    pub fn steps_per_worker(&self) -> usize {
        assert!(self.n_workers > 0);
        assert_eq!(
            self.steps_per_update % self.n_workers,
            0,
            "steps_per_update must divide evenly over workers"
        );
        self.steps_per_update / self.n_workers
    }
}
