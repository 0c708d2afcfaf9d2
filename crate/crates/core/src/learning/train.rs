use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loc_loss, localization_items, nav_loss, value_loss, LossWeights};
use super::rollout::{rollout, Controller, EpisodeContext, Rollout, RolloutConfig, RolloutMode};
use super::{advantages, discounted_returns};
use crate::dataset::WorldSet;
use crate::error::{Error, Result};
use crate::eval::{evaluate, summarize, Agent};
use crate::nn::{ParamStore, RmsProp, Tape, Var};
use crate::policy::{GbeModel, ModelConfig, Modality};
use crate::worldgen::EpisodeSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub weights: LossWeights,
    pub gamma: f64,
    pub lr: f64,
    /// Optimizer steps; each consumes `batch_size` training episodes.
    pub iterations: usize,
    pub batch_size: usize,
    pub value_weight: f64,
    pub loc_weight: f64,
    /// Entropy bonus on the policy-gradient steps; off by default.
    pub entropy_weight: f64,
    /// Standardize advantages within each trajectory.
    pub normalize_advantages: bool,
    pub step_cap: usize,
    pub success_radius: f64,
    pub modality: Modality,
    /// Evaluate every this many iterations (0 disables).
    pub eval_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            weights: LossWeights::default(),
            gamma: 0.95,
            lr: 1e-4,
            iterations: 2000,
            batch_size: 1,
            value_weight: 0.5,
            loc_weight: 1.0,
            entropy_weight: 0.0,
            normalize_advantages: true,
            step_cap: crate::env::DEFAULT_STEP_CAP,
            success_radius: crate::metrics::SUCCESS_RADIUS,
            modality: Modality::default(),
            eval_every: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if [w.il, w.rl, w.ge].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if w.il + w.rl + w.ge == 0.0 {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !(self.lr >= 0.0) || self.batch_size == 0 || self.step_cap == 0 {
            return Err(Error::Config("lr, batch_size and step_cap must be positive".into()));
        }
        self.model.validate()
    }

    pub fn rollout_config(&self) -> RolloutConfig {
        RolloutConfig {
            step_cap: self.step_cap,
            modality: self.modality,
            success_radius: self.success_radius,
        }
    }

    /// Total training episodes consumed.
    pub fn episodes(&self) -> usize {
        self.iterations * self.batch_size
    }
}

/// Zero mean, unit variance; a constant sequence maps to zeros.
fn standardize(a: &[f64]) -> Vec<f64> {
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let sd = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    a.iter().map(|x| (x - mean) / (sd + 1e-8)).collect()
}

/// Actions (and frozen advantages) that reproduce one iteration exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayPlan {
    pub il: Option<Vec<usize>>,
    pub rl: Option<Vec<usize>>,
    pub rl_advantages: Option<Vec<f64>>,
    pub ge: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct EpisodeLoss {
    pub total: Var,
    pub nav: Var,
    pub loc: Var,
    pub value: Var,
    pub rollouts: Vec<Rollout>,
    pub plan: ReplayPlan,
}

/// One IL, one RL and one GE rollout on the same episode (each skipped when
/// its weight is zero), sharing one language encoding, combined into
/// `L_nav + w_loc L_loc + w_v L_value - w_H H`.
pub fn episode_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    model: &GbeModel,
    ctx: EpisodeContext<'_>,
    cfg: &TrainConfig,
    replay: Option<&ReplayPlan>,
    rng: &mut R,
) -> Result<EpisodeLoss> {
    let rc = cfg.rollout_config();
    let language = model.encode_language(tape, store, &ctx.episode.instruction.tokens, cfg.modality)?;
    let w = &cfg.weights;
    let mut plan = ReplayPlan::default();

    let run = |tape: &mut Tape, mode: RolloutMode, actions: Option<&Vec<usize>>, rng: &mut R| {
        let controller = match actions {
            Some(a) => Controller::Replay(a),
            None => mode.default_controller(),
        };
        rollout(tape, store, model, ctx, language, mode, controller, &rc, rng)
    };
    let pick = |f: fn(&ReplayPlan) -> &Option<Vec<usize>>| replay.and_then(|p| f(p).as_ref());

    let il = if w.il > 0.0 {
        Some(run(tape, RolloutMode::Il, pick(|p| &p.il), rng)?)
    } else {
        None
    };
    let rl = if w.rl > 0.0 {
        Some(run(tape, RolloutMode::Rl, pick(|p| &p.rl), rng)?)
    } else {
        None
    };
    let ge = if w.ge > 0.0 {
        Some(run(tape, RolloutMode::Ge, pick(|p| &p.ge), rng)?)
    } else {
        None
    };

    let mut rl_batch = Vec::new();
    let mut value_batch = Vec::new();
    if let Some(r) = &rl {
        let returns = discounted_returns(&r.record.rewards(), cfg.gamma);
        let adv = match replay.and_then(|p| p.rl_advantages.clone()) {
            Some(a) => a,
            None => {
                let a = advantages(&returns, &r.record.values());
                if cfg.normalize_advantages {
                    standardize(&a)
                } else {
                    a
                }
            }
        };
        plan.rl_advantages = Some(adv.clone());
        rl_batch.push((r, adv));
        value_batch.push((r, returns));
    }
    plan.il = il.as_ref().map(|r| r.record.actions());
    plan.rl = rl.as_ref().map(|r| r.record.actions());
    plan.ge = ge.as_ref().map(|r| r.record.actions());

    let il_batch: Vec<&Rollout> = il.iter().collect();
    let ge_batch: Vec<&Rollout> = ge.iter().collect();
    let nav = nav_loss(tape, &il_batch, &rl_batch, &ge_batch, w)?;
    let all: Vec<&Rollout> = il.iter().chain(rl.iter()).chain(ge.iter()).collect();
    let loc = loc_loss(tape, &localization_items(&all))?;
    let value = value_loss(tape, &value_batch)?;

    let mut terms = vec![(nav, 1.0), (loc, cfg.loc_weight), (value, cfg.value_weight)];
    if cfg.entropy_weight > 0.0 {
        if let Some(r) = &rl {
            for v in &r.vars {
                let p = tape.softmax(v.logits)?;
                let plogp = tape.mul(p, v.log_probs)?;
                terms.push((tape.sum(plogp), cfg.entropy_weight));
            }
        }
    }
    let total = tape.weighted_sum(&terms)?;
    let rollouts = [il, rl, ge].into_iter().flatten().collect();
    Ok(EpisodeLoss {
        total,
        nav,
        loc,
        value,
        rollouts,
        plan,
    })
}

/// Episodes and houses available to [`train`].
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a> {
    pub worlds: &'a WorldSet,
    pub episodes: &'a [EpisodeSpec],
    /// Episodes scored every `eval_every` iterations.
    pub eval: &'a [EpisodeSpec],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub l_nav: f64,
    pub l_loc: f64,
    pub eval_sr: Option<f64>,
    pub eval_spl: Option<f64>,
    pub eval_sfpl: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GbeModel,
    pub store: ParamStore,
    pub curve: Vec<CurveRow>,
}

/// Builds a fresh model from the config seed.
pub fn init_model(cfg: &TrainConfig) -> Result<(GbeModel, ParamStore)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let model = GbeModel::new(&mut store, cfg.model.clone(), &mut rng)?;
    Ok((model, store))
}

/// Runs the training loop. Deterministic for a fixed config.
pub fn train(cfg: &TrainConfig, data: TrainSet<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.episodes.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    for iw in data.worlds.iter() {
        if iw.world.feature_dim() != cfg.model.feature_dim {
            return Err(Error::Dimension {
                expected: cfg.model.feature_dim,
                got: iw.world.feature_dim(),
            });
        }
    }
    let (model, mut store) = init_model(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let opt = RmsProp::new(cfg.lr);
    let rc = cfg.rollout_config();

    let mut order: Vec<usize> = Vec::new();
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (mut l_nav, mut l_loc) = (0.0, 0.0);
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..data.episodes.len()).collect();
                order.shuffle(&mut rng);
            }
            let ep = &data.episodes[order.pop().expect("refilled")];
            let iw = data.worlds.get(ep.world_id)?;
            let ctx = EpisodeContext {
                world: &iw.world,
                dist: &iw.dist,
                episode: ep,
            };
            let mut tape = Tape::new();
            let loss = episode_loss(&mut tape, &store, &model, ctx, cfg, None, &mut rng)?;
            let total = tape.scalar(loss.total);
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("loss on episode {}", ep.id),
                    iteration: it,
                });
            }
            l_nav += tape.scalar(loss.nav);
            l_loc += tape.scalar(loss.loc);
            tape.backward(loss.total, &mut store);
        }
        opt.step(&mut store).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, iteration: it },
            other => other,
        })?;
        let b = cfg.batch_size as f64;
        let mut row = CurveRow {
            iteration: it + 1,
            l_nav: l_nav / b,
            l_loc: l_loc / b,
            eval_sr: None,
            eval_spl: None,
            eval_sfpl: None,
        };
        if cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0 && !data.eval.is_empty() {
            let out = evaluate(Some((&model, &store)), data.worlds, data.eval, Agent::Greedy, &rc, cfg.seed)?;
            let s = summarize(&out);
            row.eval_sr = Some(s.sr);
            row.eval_spl = Some(s.spl);
            row.eval_sfpl = Some(s.sfpl);
        }
        curve.push(row);
    }
    Ok(TrainOutcome { model, store, curve })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::{fixture, model_config};
    use super::*;
    use crate::nn::{grad_check, grad_check_params, GradCheckConfig};
    use crate::worldgen::World;

    fn small_cfg(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            lr: 1e-3,
            model: model_config(),
            ..TrainConfig::default()
        }
    }

    fn set(world: World) -> WorldSet {
        WorldSet::new([world])
    }

    #[test]
    fn standardize_by_hand() {
        let z = standardize(&[1.0, 3.0]);
        assert!((z[0] + 1.0).abs() < 1e-7 && (z[1] - 1.0).abs() < 1e-7);
        assert_eq!(standardize(&[2.0, 2.0, 2.0]), vec![0.0; 3]);
    }

    #[test]
    fn zero_iterations_and_reruns_are_reproducible() {
        let f = fixture(3, 12, 4);
        let ws = set(f.world.clone());
        let data = TrainSet {
            worlds: &ws,
            episodes: &f.episodes,
            eval: &[],
        };
        let zero = train(&small_cfg(0), data).unwrap();
        let (_, init) = init_model(&small_cfg(0)).unwrap();
        assert_eq!(zero.store.to_checkpoint(), init.to_checkpoint());
        assert!(zero.curve.is_empty());

        let a = train(&small_cfg(6), data).unwrap();
        let b = train(&small_cfg(6), data).unwrap();
        assert_eq!(a.store.to_checkpoint().to_json().unwrap(), b.store.to_checkpoint().to_json().unwrap());
        assert_eq!(a.curve, b.curve);
        assert_ne!(a.store.to_checkpoint(), init.to_checkpoint());
    }

    #[test]
    fn imitation_loss_falls_on_a_fixed_episode() {
        let f = fixture(6, 12, 1);
        let ws = set(f.world.clone());
        let mut cfg = small_cfg(150);
        cfg.weights = LossWeights {
            il: 1.0,
            rl: 0.0,
            ge: 0.0,
        };
        cfg.lr = 1e-2;
        let out = train(
            &cfg,
            TrainSet {
                worlds: &ws,
                episodes: &f.episodes,
                eval: &[],
            },
        )
        .unwrap();
        let first = out.curve[0].l_nav;
        let last = out.curve.last().unwrap().l_nav;
        assert!(last < 0.2 * first, "{first} -> {last}");
    }

    /// The critic reads a detached context, so finite differences of the
    /// value term disagree with backprop everywhere except the critic's own
    /// weights. Check the rest with the value term off, then the critic alone.
    #[test]
    fn full_episode_loss_gradients_match_finite_differences() {
        let f = fixture(9, 4, 1);
        let mut cfg = small_cfg(1);
        cfg.value_weight = 0.0;
        let (m, mut store) = init_model(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new();
        let first = episode_loss(&mut tape, &store, &m, f.ctx(0), &cfg, None, &mut rng).unwrap();
        let plan = first.plan.clone();
        assert!(plan.il.is_some() && plan.rl.is_some() && plan.ge.is_some());
        let report = grad_check(
            &mut store,
            |t, s| {
                let mut r = ChaCha8Rng::seed_from_u64(0);
                Ok(episode_loss(t, s, &m, f.ctx(0), &cfg, Some(&plan), &mut r)?.total)
            },
            &GradCheckConfig {
                eps: 1e-5,
                ..GradCheckConfig::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");

        cfg.value_weight = 0.5;
        let critic = grad_check_params(
            &mut store,
            |t, s| {
                let mut r = ChaCha8Rng::seed_from_u64(0);
                Ok(episode_loss(t, s, &m, f.ctx(0), &cfg, Some(&plan), &mut r)?.total)
            },
            &GradCheckConfig::default(),
            |n| n.starts_with("value."),
        )
        .unwrap();
        assert!(critic.checked > 0 && critic.max_rel_error < 1e-3, "{critic:?}");
    }

    #[test]
    fn rejects_bad_configs() {
        let f = fixture(3, 12, 1);
        let ws = set(f.world.clone());
        let data = TrainSet {
            worlds: &ws,
            episodes: &f.episodes,
            eval: &[],
        };
        let mut c = small_cfg(1);
        c.weights = LossWeights {
            il: 0.0,
            rl: 0.0,
            ge: 0.0,
        };
        assert!(matches!(train(&c, data), Err(Error::Config(_))));
        let mut c = small_cfg(1);
        c.model.feature_dim = 9;
        assert!(matches!(train(&c, data), Err(Error::Dimension { .. })));
        let empty = TrainSet { episodes: &[], ..data };
        assert!(matches!(train(&small_cfg(1), empty), Err(Error::Config(_))));
    }
}
