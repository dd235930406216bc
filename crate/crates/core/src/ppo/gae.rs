//! Generalized advantage estimation over rollout segments.

use crate::Real;

/// Compute advantages and value targets for one contiguous segment.
///
/// `bootstrap` is V(s_T) of the state following the last sample; it is
/// ignored wherever `dones` cuts the trajectory. Returns
/// `(advantages, returns)` with `returns[t] = advantages[t] + values[t]`.
pub fn compute_gae(
    rewards: &[Real],
    values: &[Real],
    dones: &[bool],
    bootstrap: Real,
    gamma: Real,
    lambda: Real,
) -> (Vec<Real>, Vec<Real>) {
    let n = rewards.len();
    assert_eq!(values.len(), n);
    assert_eq!(dones.len(), n);
    let mut advantages = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        if dones[t] {
            next_value = 0.0;
            next_adv = 0.0;
        }
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        advantages[t] = next_adv;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}
