//! The clipped-surrogate policy update.

use rand::seq::SliceRandom;
use rand::Rng;

use super::rollout::Rollout;
use super::{TrainConfig, TrainError};
use crate::nn::adam::Adam;
use crate::nn::graph::Graph;
use crate::nn::params::ParamStore;
use crate::policy::Policy;
use crate::Real;

/// Batch-averaged diagnostics of one update.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub policy_loss: Real,
    pub value_loss: Real,
    pub entropy: Real,
    /// Fraction of samples whose importance ratio hit the clip range.
    pub clip_fraction: Real,
}

/// Run several epochs of minibatch updates over one collected batch.
/// `update_index` only labels the error on a non-finite loss.
pub fn ppo_update<R: Rng>(
    policy: &Policy,
    store: &mut ParamStore<Real>,
    adam: &mut Adam<Real>,
    batch: &Rollout,
    config: &TrainConfig,
    rng: &mut R,
    update_index: usize,
) -> Result<UpdateStats, TrainError> {
    let n = batch.samples.len();
    assert!(n > 0, "empty update batch");

    // Advantages are normalized once per batch; the epsilon keeps a
    // constant-advantage batch from dividing by zero.
    let mean = batch.advantages.iter().sum::<Real>() / n as Real;
    let var = batch.advantages.iter().map(|a| (a - mean).powi(2)).sum::<Real>() / n as Real;
    let std = var.sqrt().max(1e-8);
    let advantages: Vec<Real> = batch.advantages.iter().map(|a| (a - mean) / std).collect();

    let eps = config.clip_epsilon;
    let mut stats = UpdateStats::default();
    let mut visits = 0usize;
    let mut indices: Vec<usize> = (0..n).collect();

    for _ in 0..config.epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(config.minibatch_size) {
            store.zero_grad();
            let inv = 1.0 / chunk.len() as Real;
            for &i in chunk {
                let sample = &batch.samples[i];
                let mut g = Graph::new();
                let eval = policy.evaluate_action(store, &mut g, &sample.state, &sample.action)?;

                let lp_old = g.scalar_const(sample.log_prob);
                let diff = g.sub(eval.log_prob, lp_old);
                let ratio = g.exp(diff);
                let surr = g.scale(ratio, advantages[i]);
                let clipped = g.clamp_const(ratio, 1.0 - eps, 1.0 + eps);
                let surr_clipped = g.scale(clipped, advantages[i]);
                let objective = g.min(surr, surr_clipped);
                let policy_loss = g.neg(objective);

                let v_err = g.add_const(eval.value, -batch.returns[i]);
                let value_loss = g.mul(v_err, v_err);

                let vterm = g.scale(value_loss, config.value_coef);
                let eterm = g.scale(eval.entropy, -config.entropy_coef);
                let partial = g.add(policy_loss, vterm);
                let loss = g.add(partial, eterm);

                let loss_v = g.scalar(loss);
                if !loss_v.is_finite() {
                    return Err(TrainError::NonFiniteLoss { update: update_index });
                }
                g.backward(loss, inv, store);

                stats.policy_loss += g.scalar(policy_loss);
                stats.value_loss += g.scalar(value_loss);
                stats.entropy += g.scalar(eval.entropy);
                if (g.scalar(ratio) - 1.0).abs() > eps {
                    stats.clip_fraction += 1.0;
                }
                visits += 1;
            }
            store.clip_global_grad_norm(config.max_grad_norm);
            adam.step(store);
        }
    }

    let inv = 1.0 / visits as Real;
    stats.policy_loss *= inv;
    stats.value_loss *= inv;
    stats.entropy *= inv;
    stats.clip_fraction *= inv;
    Ok(stats)
}
