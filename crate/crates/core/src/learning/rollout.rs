use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EpisodeResult, NavAction, NavEnv, StepObservation, StepOutcome};
use crate::error::{Error, Result};
use crate::geometry::PolarPoint;
use crate::graph::DistanceTable;
use crate::nn::{ParamStore, Tape, Var};
use crate::planner::{teacher_action, PlannerState};
use crate::policy::{GbeModel, Modality, PolicyOutput};
use crate::worldgen::{EpisodeSpec, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutMode {
    Il,
    Rl,
    Ge,
    /// No supervision recorded.
    Eval,
}

/// How actions are chosen, independent of which supervision is recorded.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    /// Execute `a*` (the shortest-path next hop).
    Expert,
    /// Sample from the policy distribution.
    Sample,
    /// Argmax of the policy distribution.
    Greedy,
    /// Uniform over stop and every candidate.
    Uniform,
    /// Execute the teacher action (oracle mode).
    Teacher,
    /// Re-execute recorded action indices.
    Replay(&'a [usize]),
}

impl RolloutMode {
    pub fn default_controller(self) -> Controller<'static> {
        match self {
            RolloutMode::Il => Controller::Expert,
            RolloutMode::Rl | RolloutMode::Ge => Controller::Sample,
            RolloutMode::Eval => Controller::Greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub node: usize,
    pub candidates: Vec<usize>,
    pub log_probs: Vec<f64>,
    /// Index into `[stop, candidates..]`.
    pub action: usize,
    pub expert: Option<usize>,
    pub teacher: Option<usize>,
    pub reward: Option<f64>,
    pub value: f64,
    pub localization: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub mode: RolloutMode,
    pub steps: Vec<StepRecord>,
    pub result: EpisodeResult,
    /// Label of the stop node, when the agent stopped on a target.
    pub target_label: Option<PolarPoint>,
}

impl TrajectoryRecord {
    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().filter_map(|s| s.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }
}

/// Tape handles matching each recorded step.
#[derive(Debug, Clone)]
pub struct StepVars {
    pub logits: Var,
    pub log_probs: Var,
    pub localization: Var,
    pub value: Var,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub record: TrajectoryRecord,
    pub vars: Vec<StepVars>,
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeContext<'a> {
    pub world: &'a World,
    pub dist: &'a DistanceTable,
    pub episode: &'a EpisodeSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub step_cap: usize,
    pub modality: Modality,
    pub success_radius: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            step_cap: crate::env::DEFAULT_STEP_CAP,
            modality: Modality::default(),
            success_radius: 3.0,
        }
    }
}

/// First hop of a shortest path from `current` to its nearest target,
/// smallest id on ties; `None` at a target.
pub fn expert_next_hop(world: &World, dist: &DistanceTable, targets: &[usize], current: usize) -> Option<usize> {
    if targets.contains(&current) {
        return None;
    }
    let here = dist.to_nearest(current, targets);
    let mut best: Option<(f64, usize)> = None;
    for &(n, w) in world.neighbors(current) {
        let d = w + dist.to_nearest(n, targets);
        let better = match best {
            None => true,
            Some((bd, bn)) => d < bd || (d == bd && n < bn),
        };
        if better {
            best = Some((d, n));
        }
    }
    debug_assert!(best.is_none_or(|(d, _)| (d - here).abs() < 1e-9));
    best.map(|(_, n)| n)
}

fn action_index(action: NavAction, candidates: &[usize]) -> Option<usize> {
    match action {
        NavAction::Stop => Some(0),
        NavAction::GotoNode(n) => candidates.iter().position(|&c| c == n).map(|i| i + 1),
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn observe(planner: &mut PlannerState, obs: &StepObservation) -> Result<()> {
    let nbrs: Vec<(usize, &[f64])> = obs
        .neighbors
        .iter()
        .map(|n| (n.node, n.feature.as_slice()))
        .collect();
    planner.observe(obs.node, &obs.feature, &nbrs)
}

/// Runs one episode, recording the supervision stream that `mode` needs.
///
/// `language` is the already-encoded instruction; callers share it across
/// the rollouts of one training iteration.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    model: &GbeModel,
    ctx: EpisodeContext<'_>,
    language: Var,
    mode: RolloutMode,
    controller: Controller<'_>,
    cfg: &RolloutConfig,
    rng: &mut R,
) -> Result<Rollout> {
    let targets = &ctx.episode.targets;
    let mut env = NavEnv::with_step_cap(ctx.world, cfg.step_cap);
    let mut planner = PlannerState::new(ctx.world.feature_dim());
    observe(&mut planner, &env.reset(ctx.episode)?)?;

    let mut steps = Vec::new();
    let mut vars = Vec::new();
    let result = loop {
        let current = env.current();
        let fwd = model.step(tape, store, &planner, current, language, cfg.modality)?;
        planner.record_embeddings(tape.value(fwd.embeddings));
        let out: PolicyOutput = fwd.decision.output(tape);
        let cands = fwd.candidates;

        let teacher = || match teacher_action(ctx.dist, &cands, targets, current) {
            Ok(a) => Ok(action_index(a, &cands).expect("teacher picks a candidate")),
            // every observed node is visited and none is a target: only stop remains
            Err(Error::EmptyCandidates) => Ok(0),
            Err(e) => Err(e),
        };
        let expert = || -> Result<usize> {
            match expert_next_hop(ctx.world, ctx.dist, targets, current) {
                None => Ok(0),
                Some(n) => match cands.iter().position(|&c| c == n) {
                    Some(i) => Ok(i + 1),
                    None => teacher(),
                },
            }
        };

        let expert_idx = if mode == RolloutMode::Il { Some(expert()?) } else { None };
        let teacher_idx = if mode == RolloutMode::Ge { Some(teacher()?) } else { None };

        let action = match controller {
            Controller::Expert => expert_idx.map_or_else(expert, Ok)?,
            Controller::Teacher => teacher_idx.map_or_else(teacher, Ok)?,
            Controller::Sample => sample_index(&out.probs, rng),
            Controller::Greedy => argmax(&out.probs),
            Controller::Uniform => rng.random_range(0..=cands.len()),
            Controller::Replay(actions) => {
                let a = *actions
                    .get(steps.len())
                    .ok_or_else(|| Error::Mode(format!("replay ran out of actions at step {}", steps.len())))?;
                if a > cands.len() {
                    return Err(Error::Label {
                        label: a,
                        len: cands.len() + 1,
                    });
                }
                a
            }
        };

        env.set_localization(PolarPoint::new(out.localization[0], out.localization[1]));
        let nav = if action == 0 {
            NavAction::Stop
        } else {
            NavAction::GotoNode(cands[action - 1])
        };
        steps.push(StepRecord {
            node: current,
            candidates: cands,
            log_probs: tape.value(fwd.decision.log_probs).data.clone(),
            action,
            expert: expert_idx,
            teacher: teacher_idx,
            reward: None,
            value: out.value,
            localization: out.localization,
        });
        vars.push(StepVars {
            logits: fwd.decision.logits,
            log_probs: fwd.decision.log_probs,
            localization: fwd.decision.localization,
            value: fwd.decision.value,
        });
        match env.step(nav)? {
            StepOutcome::Finished(r) => break r,
            StepOutcome::Continue(obs) => observe(&mut planner, &obs)?,
        }
    };

    let target_label = if result.stopped {
        ctx.episode.label_at(result.stop_node)
    } else {
        None
    };
    let mut record = TrajectoryRecord {
        mode,
        steps,
        result,
        target_label,
    };
    if mode == RolloutMode::Rl {
        super::compute_rewards(&mut record, ctx.dist, targets, cfg.success_radius);
    }
    Ok(Rollout { record, vars })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::{fixture, model};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(
        f: &super::super::fixtures::Fixture,
        i: usize,
        mode: RolloutMode,
        controller: Controller<'_>,
        cfg: &RolloutConfig,
        seed: u64,
    ) -> Rollout {
        let (m, store) = model(3);
        let mut tape = Tape::new();
        let ctx = f.ctx(i);
        let lang = m
            .encode_language(&mut tape, &store, &ctx.episode.instruction.tokens, cfg.modality)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rollout(&mut tape, &store, &m, ctx, lang, mode, controller, cfg, &mut rng).unwrap()
    }

    /// Bellman-Ford relaxation over the edge list.
    fn oracle_distance(world: &World, from: usize, targets: &[usize]) -> f64 {
        let n = world.num_nodes();
        let mut d = vec![f64::INFINITY; n];
        for &t in targets {
            d[t] = 0.0;
        }
        for _ in 0..n {
            for e in &world.edges {
                d[e.a] = d[e.a].min(d[e.b] + e.length);
                d[e.b] = d[e.b].min(d[e.a] + e.length);
            }
        }
        d[from]
    }

    #[test]
    fn imitation_rollout_follows_a_shortest_path_and_stops_on_target() {
        let f = fixture(11, 16, 6);
        for i in 0..f.episodes.len() {
            let r = run(&f, i, RolloutMode::Il, Controller::Expert, &RolloutConfig::default(), 0);
            let ep = &f.episodes[i];
            let res = &r.record.result;
            assert!(res.stopped && ep.targets.contains(&res.stop_node));
            let gt = oracle_distance(&f.world, ep.start, &ep.targets);
            assert!((res.path_length - gt).abs() < 1e-9, "{} vs {gt}", res.path_length);
            for s in &r.record.steps {
                assert_eq!(s.expert, Some(s.action));
                assert!(s.teacher.is_none() && s.reward.is_none());
            }
            assert_eq!(r.record.steps.last().unwrap().action, 0);
            assert!(r.record.target_label.is_some());
        }
    }

    #[test]
    fn teacher_controller_is_optimal() {
        let f = fixture(5, 20, 6);
        for i in 0..f.episodes.len() {
            let r = run(&f, i, RolloutMode::Ge, Controller::Teacher, &RolloutConfig::default(), 0);
            let ep = &f.episodes[i];
            let gt = oracle_distance(&f.world, ep.start, &ep.targets);
            assert!((r.record.result.path_length - gt).abs() < 1e-9);
            assert!(r.record.steps.iter().all(|s| s.teacher == Some(s.action)));
        }
    }

    #[test]
    fn sampled_rollouts_carry_teacher_labels_and_rewards() {
        let f = fixture(2, 16, 3);
        let ge = run(&f, 0, RolloutMode::Ge, Controller::Sample, &RolloutConfig::default(), 9);
        assert!(ge.record.steps.iter().all(|s| s.teacher.is_some() && s.expert.is_none()));
        let rl = run(&f, 0, RolloutMode::Rl, Controller::Sample, &RolloutConfig::default(), 9);
        assert_eq!(rl.record.rewards().len(), rl.record.steps.len());
        for s in &rl.record.steps {
            let total: f64 = s.log_probs.iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert_eq!(s.log_probs.len(), s.candidates.len() + 1);
        }
    }

    #[test]
    fn step_cap_one_gives_a_single_step() {
        let f = fixture(2, 16, 2);
        let cfg = RolloutConfig {
            step_cap: 1,
            ..RolloutConfig::default()
        };
        for mode in [RolloutMode::Il, RolloutMode::Rl, RolloutMode::Ge] {
            let r = run(&f, 1, mode, mode.default_controller(), &cfg, 4);
            assert_eq!(r.record.steps.len(), 1);
            assert_eq!(r.vars.len(), 1);
        }
    }

    #[test]
    fn replay_reproduces_a_sampled_trajectory() {
        let f = fixture(8, 16, 2);
        let rc = RolloutConfig::default();
        let a = run(&f, 1, RolloutMode::Rl, Controller::Sample, &rc, 21);
        let actions = a.record.actions();
        let b = run(&f, 1, RolloutMode::Rl, Controller::Replay(&actions), &rc, 99);
        assert_eq!(a.record, b.record);
    }

    #[test]
    fn replay_rejects_out_of_range_actions() {
        let f = fixture(8, 16, 1);
        let (m, store) = model(3);
        let mut tape = Tape::new();
        let ctx = f.ctx(0);
        let rc = RolloutConfig::default();
        let lang = m.encode_language(&mut tape, &store, &ctx.episode.instruction.tokens, rc.modality).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = [usize::MAX];
        let e = rollout(&mut tape, &store, &m, ctx, lang, RolloutMode::Rl, Controller::Replay(&bad), &rc, &mut rng);
        assert!(matches!(e, Err(Error::Label { .. })));
        let e = rollout(&mut tape, &store, &m, ctx, lang, RolloutMode::Rl, Controller::Replay(&[]), &rc, &mut rng);
        assert!(matches!(e, Err(Error::Mode(_))));
    }
}
