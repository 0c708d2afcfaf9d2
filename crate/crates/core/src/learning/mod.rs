//! Rollouts in the three supervision modes, loss assembly, and training.

mod loss;
mod rollout;
mod train;

pub use loss::{loc_loss, localization_items, nav_loss, value_loss, LossWeights};
pub use rollout::{
    expert_next_hop, rollout, Controller, EpisodeContext, Rollout, RolloutConfig, RolloutMode,
    StepRecord, StepVars, TrajectoryRecord,
};
pub use train::{
    episode_loss, init_model, train, CurveRow, EpisodeLoss, ReplayPlan, TrainConfig, TrainOutcome, TrainSet,
};

use crate::graph::DistanceTable;

/// Terminal bonus added to the last reward when the episode succeeds.
pub const SUCCESS_BONUS: f64 = 3.0;

/// `r_t = D(pos_t) - D(pos_{t+1})`, plus [`SUCCESS_BONUS`] on the last step
/// when the final position is within `radius` of a target.
pub fn compute_rewards(record: &mut TrajectoryRecord, dist: &DistanceTable, targets: &[usize], radius: f64) {
    let n = record.steps.len();
    let stop = record.result.stop_node;
    let nodes: Vec<usize> = record.steps.iter().map(|s| s.node).collect();
    for (t, step) in record.steps.iter_mut().enumerate() {
        let next = if t + 1 < n { nodes[t + 1] } else { stop };
        let mut r = dist.to_nearest(nodes[t], targets) - dist.to_nearest(next, targets);
        if t + 1 == n && dist.to_nearest(stop, targets) < radius {
            r += SUCCESS_BONUS;
        }
        step.reward = Some(r);
    }
}

/// `G_t = r_t + γ G_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

/// `A_t = G_t - V_t`.
pub fn advantages(returns: &[f64], values: &[f64]) -> Vec<f64> {
    returns.iter().zip(values).map(|(g, v)| g - v).collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EpisodeResult;
    use crate::graph::Adjacency;

    #[test]
    fn returns_by_hand() {
        assert_eq!(discounted_returns(&[1.0, 2.0], 1.0), vec![3.0, 2.0]);
        let g = discounted_returns(&[1.0, 0.0, 4.0], 0.5);
        assert_eq!(g, vec![1.0 + 0.25 * 4.0, 2.0, 4.0]);
        assert!(discounted_returns(&[], 0.9).is_empty());
        assert_eq!(advantages(&[3.0, 2.0], &[1.0, 2.5]), vec![2.0, -0.5]);
    }

    fn step(node: usize) -> StepRecord {
        StepRecord {
            node,
            candidates: Vec::new(),
            log_probs: Vec::new(),
            action: 0,
            expert: None,
            teacher: None,
            reward: None,
            value: 0.0,
            localization: [0.0, 0.0],
        }
    }

    fn record(nodes: &[usize], stop: usize) -> TrajectoryRecord {
        TrajectoryRecord {
            mode: RolloutMode::Rl,
            steps: nodes.iter().map(|&n| step(n)).collect(),
            result: EpisodeResult {
                episode_id: "r".into(),
                visited: nodes.to_vec(),
                path_length: 0.0,
                stop_node: stop,
                localization: None,
                steps: nodes.len(),
                stopped: true,
            },
            target_label: None,
        }
    }

    /// Chain 0 - 1 - 2 - 3 with 2 m edges.
    fn chain() -> DistanceTable {
        let adj: Adjacency = vec![vec![(1, 2.0)], vec![(0, 2.0), (2, 2.0)], vec![(1, 2.0), (3, 2.0)], vec![(2, 2.0)]];
        DistanceTable::new(&adj)
    }

    #[test]
    fn a_two_meter_hop_toward_the_goal_earns_two() {
        let d = chain();
        // 0 -> 1 -> 2 then stop at 2; target 3 is 2 m away, inside the radius
        let mut r = record(&[0, 1, 2], 2);
        compute_rewards(&mut r, &d, &[3], 3.0);
        assert_eq!(r.rewards(), vec![2.0, 2.0, 0.0 + SUCCESS_BONUS]);

        let mut away = record(&[2, 1], 1);
        compute_rewards(&mut away, &d, &[3], 3.0);
        assert_eq!(away.rewards(), vec![-2.0, 0.0]);
    }

    #[test]
    fn bonus_only_when_the_stop_is_within_radius() {
        let d = chain();
        let mut at = record(&[3], 3);
        compute_rewards(&mut at, &d, &[3], 3.0);
        assert_eq!(at.rewards(), vec![SUCCESS_BONUS]);

        let mut far = record(&[0], 0);
        compute_rewards(&mut far, &d, &[3], 3.0);
        assert_eq!(far.rewards(), vec![0.0]);

        // exactly on the radius is a failure
        let mut edge = record(&[1], 1);
        compute_rewards(&mut edge, &d, &[3], 4.0);
        assert_eq!(edge.rewards(), vec![0.0]);
    }
}
