use serde::{Deserialize, Serialize};

use super::rollout::{Rollout, RolloutMode};
use crate::error::{Error, Result};
use crate::geometry::PolarPoint;
use crate::nn::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub il: f64,
    pub rl: f64,
    pub ge: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            il: 0.5,
            rl: 0.25,
            ge: 0.25,
        }
    }
}

fn check_mode(r: &Rollout, mode: RolloutMode) -> Result<()> {
    if r.record.mode != mode {
        return Err(Error::Mode(format!(
            "expected a {mode:?} trajectory, got {:?}",
            r.record.mode
        )));
    }
    if r.vars.len() != r.record.steps.len() {
        return Err(Error::Mode("trajectory vars and records differ in length".into()));
    }
    Ok(())
}

/// Weighted sum of the imitation, policy-gradient and exploration terms:
///
/// ```text
/// -λ1 Σ log p(a*) - λ2 Σ A log p(a) - λ3 Σ log p(â)
/// ```
///
/// Advantages are plain numbers, so no gradient flows through them.
pub fn nav_loss(
    tape: &mut Tape,
    il: &[&Rollout],
    rl: &[(&Rollout, Vec<f64>)],
    ge: &[&Rollout],
    weights: &LossWeights,
) -> Result<Var> {
    let mut terms = Vec::new();
    for r in il {
        check_mode(r, RolloutMode::Il)?;
        for (s, v) in r.record.steps.iter().zip(&r.vars) {
            let a = s.expert.ok_or_else(|| Error::Mode("IL step without a* label".into()))?;
            terms.push((tape.pick(v.log_probs, a)?, -weights.il));
        }
    }
    for (r, adv) in rl {
        check_mode(r, RolloutMode::Rl)?;
        if adv.len() != r.vars.len() {
            return Err(Error::Mode("advantage count differs from step count".into()));
        }
        for ((s, v), a) in r.record.steps.iter().zip(&r.vars).zip(adv) {
            terms.push((tape.pick(v.log_probs, s.action)?, -weights.rl * a));
        }
    }
    for r in ge {
        check_mode(r, RolloutMode::Ge)?;
        for (s, v) in r.record.steps.iter().zip(&r.vars) {
            let a = s.teacher.ok_or_else(|| Error::Mode("GE step without teacher label".into()))?;
            terms.push((tape.pick(v.log_probs, a)?, -weights.ge));
        }
    }
    tape.weighted_sum(&terms)
}

/// `(1/N) Σ (ĥ - h)² + (ê - e)²`; zero when nothing is supervised.
pub fn loc_loss(tape: &mut Tape, items: &[(Var, PolarPoint)]) -> Result<Var> {
    if items.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let inv = 1.0 / items.len() as f64;
    let mut terms = Vec::with_capacity(items.len());
    for &(pred, label) in items {
        let l = tape.constant(Tensor::column(vec![label.heading, label.elevation]));
        let d = tape.sub(pred, l)?;
        let sq = tape.mul(d, d)?;
        terms.push((tape.sum(sq), inv));
    }
    tape.weighted_sum(&terms)
}

/// Final-step localization paired with its label, for every rollout that
/// stopped on a target.
pub fn localization_items(rollouts: &[&Rollout]) -> Vec<(Var, PolarPoint)> {
    rollouts
        .iter()
        .filter_map(|r| {
            let label = r.record.target_label?;
            Some((r.vars.last()?.localization, label))
        })
        .collect()
}

/// `Σ (G_t - V_t)²` for the critic.
pub fn value_loss(tape: &mut Tape, rl: &[(&Rollout, Vec<f64>)]) -> Result<Var> {
    let mut terms = Vec::new();
    for (r, returns) in rl {
        for (v, g) in r.vars.iter().zip(returns) {
            let target = tape.constant(Tensor::scalar(*g));
            let d = tape.sub(v.value, target)?;
            terms.push((tape.mul(d, d)?, 1.0));
        }
    }
    tape.weighted_sum(&terms)
}
