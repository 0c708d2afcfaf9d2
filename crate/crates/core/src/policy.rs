//! Decision head: vision and language encoders, cross-modal matching, the
//! candidate scorer, and the localization and value heads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, ParamId, ParamStore, SequenceEncoder, Tape, Tensor, Var};
use crate::planner::{readout, GraphConv, PlannerState, ReadoutNeighbors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub word_dim: usize,
    pub vocab_size: usize,
    pub gcn_layers: usize,
    pub scorer_hidden: usize,
    pub readout: ReadoutNeighbors,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            hidden: 64,
            word_dim: 32,
            vocab_size: crate::vocab::Vocab::new().len(),
            gcn_layers: 2,
            scorer_hidden: 64,
            readout: ReadoutNeighbors::Graph,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("feature_dim", self.feature_dim),
            ("hidden", self.hidden),
            ("word_dim", self.word_dim),
            ("vocab_size", self.vocab_size),
            ("scorer_hidden", self.scorer_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Input switches for the modality ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Modality {
    pub vision: bool,
    pub language: bool,
}

impl Default for Modality {
    fn default() -> Self {
        Self {
            vision: true,
            language: true,
        }
    }
}

/// Plain-value view of one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    /// Index 0 is stop; index `i` is candidate `i - 1`.
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    /// Raw `(heading, elevation)` regression.
    pub localization: [f64; 2],
    pub value: f64,
}

/// Tape handles for one decision.
#[derive(Debug, Clone)]
pub struct Decision {
    pub logits: Var,
    pub log_probs: Var,
    pub localization: Var,
    pub value: Var,
}

impl Decision {
    pub fn output(&self, tape: &Tape) -> PolicyOutput {
        let logits = tape.value(self.logits).data.clone();
        let probs = tape.value(self.log_probs).data.iter().map(|v| v.exp()).collect();
        let loc = &tape.value(self.localization).data;
        PolicyOutput {
            probs,
            logits,
            localization: [loc[0], loc[1]],
            value: tape.scalar(self.value),
        }
    }
}

/// Everything produced by one step of the full forward pass.
#[derive(Debug, Clone)]
pub struct StepForward {
    pub candidates: Vec<usize>,
    pub decision: Decision,
    /// Propagated node embeddings, rows in planner order.
    pub embeddings: Var,
    /// Feature matrix actually fed to the vision encoder.
    pub inputs: Tensor,
    pub attention: Var,
}

#[derive(Debug, Clone)]
pub struct GbeModel {
    pub config: ModelConfig,
    vision_w: ParamId,
    vision_b: ParamId,
    pub gcn: GraphConv,
    pub language: SequenceEncoder,
    cross: Linear,
    nav_ctx: Linear,
    nav_cand: ParamId,
    nav_out: ParamId,
    stop: ParamId,
    loc: Linear,
    value: Linear,
}

impl GbeModel {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (dv, dm, h) = (config.feature_dim, config.hidden, config.scorer_hidden);
        let vision_w = store.add_uniform("vision.w", dv, dm, dv, rng);
        let vision_b = store.add_uniform("vision.b", dm, 1, dv, rng);
        let gcn = GraphConv::new(store, "gcn", dm, config.gcn_layers, rng);
        let language = SequenceEncoder::new(store, "language", config.vocab_size, config.word_dim, dm, rng);
        let cross = Linear::new(store, "cross", 2 * dm, dm, rng);
        let nav_ctx = Linear::new(store, "nav.ctx", dm, h, rng);
        let nav_cand = store.add_uniform("nav.cand", dm, h, dm, rng);
        let nav_out = store.add_uniform("nav.out", h, 1, h, rng);
        let stop = store.add_uniform("nav.stop", dm, 1, 1, rng);
        let loc = Linear::new(store, "loc", dm, 2, rng);
        let value = Linear::new(store, "value", dm, 1, rng);
        Ok(Self {
            config,
            vision_w,
            vision_b,
            gcn,
            language,
            cross,
            nav_ctx,
            nav_cand,
            nav_out,
            stop,
            loc,
            value,
        })
    }

    /// `g`: row-wise `tanh(F W + b)` on an `n x D_v` feature matrix.
    pub fn encode_vision(&self, tape: &mut Tape, store: &ParamStore, features: Var) -> Result<Var> {
        let cols = tape.value(features).cols;
        if cols != self.config.feature_dim {
            return Err(Error::Dimension {
                expected: self.config.feature_dim,
                got: cols,
            });
        }
        let w = tape.param(store, self.vision_w);
        let b = tape.param(store, self.vision_b);
        let fw = tape.matmul(features, w)?;
        let pre = tape.add_row_bias(fw, b)?;
        Ok(tape.tanh(pre))
    }

    /// Per-token language states (`T x D_m`), zeroed when language is ablated.
    pub fn encode_language(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tokens: &[usize],
        modality: Modality,
    ) -> Result<Var> {
        let enc = self.language.encode(tape, store, tokens)?;
        if modality.language {
            Ok(enc.matrix)
        } else {
            Ok(tape.constant(Tensor::zeros(tokens.len(), self.config.hidden)))
        }
    }

    /// Attention of `f_g` over language states; returns `(f̃, weights)`.
    pub fn cross_modal(&self, tape: &mut Tape, store: &ParamStore, f_g: Var, language: Var) -> Result<(Var, Var)> {
        let scores = tape.matmul(language, f_g)?;
        let alpha = tape.softmax(scores)?;
        let lt = tape.transpose(language);
        let attended = tape.matmul(lt, alpha)?;
        let joint = tape.concat(&[f_g, attended])?;
        let pre = self.cross.forward(tape, store, joint)?;
        Ok((tape.tanh(pre), alpha))
    }

    /// Scores stop plus each candidate row of `candidates` (`k x D_m`).
    pub fn decide(&self, tape: &mut Tape, store: &ParamStore, f_t: Var, candidates: &[Var]) -> Result<Decision> {
        let stop = tape.param(store, self.stop);
        let mut rows = Vec::with_capacity(candidates.len() + 1);
        rows.push(stop);
        rows.extend_from_slice(candidates);
        let x = tape.stack_rows(&rows)?;
        let wc = tape.param(store, self.nav_cand);
        let xc = tape.matmul(x, wc)?;
        let ctx = self.nav_ctx.forward(tape, store, f_t)?;
        let pre = tape.add_row_bias(xc, ctx)?;
        let hidden = tape.tanh(pre);
        let out = tape.param(store, self.nav_out);
        let logits = tape.matmul(hidden, out)?;
        let log_probs = tape.log_softmax(logits)?;
        let localization = self.loc.forward(tape, store, f_t)?;
        // the critic reads a detached copy so its regression does not reshape f̃
        let detached = tape.constant(tape.value(f_t).clone());
        let value = self.value.forward(tape, store, detached)?;
        Ok(Decision {
            logits,
            log_probs,
            localization,
            value,
        })
    }

    /// Full step: encode planner nodes, propagate, read out at `current`,
    /// match against `language`, and score the frontier.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        planner: &PlannerState,
        current: usize,
        language: Var,
        modality: Modality,
    ) -> Result<StepForward> {
        let order = planner.order();
        let inputs = if modality.vision {
            planner.feature_matrix()
        } else {
            Tensor::zeros(order.len(), planner.feature_dim())
        };
        let f = tape.constant(inputs.clone());
        let m0 = self.encode_vision(tape, store, f)?;
        let adj = tape.constant(planner.normalized_adjacency());
        let m = self.gcn.propagate(tape, store, adj, m0)?;
        let rows = planner.readout_rows(current, self.config.readout)?;
        let f_g = readout(tape, m, &rows)?;
        let (f_t, attention) = self.cross_modal(tape, store, f_g, language)?;
        let candidates = planner.candidates();
        let mut cand_rows = Vec::with_capacity(candidates.len());
        for c in &candidates {
            let i = order.binary_search(c).map_err(|_| Error::MissingEmbedding(*c))?;
            cand_rows.push(tape.row(m0, i)?);
        }
        let decision = self.decide(tape, store, f_t, &cand_rows)?;
        Ok(StepForward {
            candidates,
            decision,
            embeddings: m,
            inputs,
            attention,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, grad_check_params, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            feature_dim: 4,
            hidden: 5,
            word_dim: 3,
            vocab_size: 9,
            gcn_layers: 2,
            scorer_hidden: 6,
            readout: ReadoutNeighbors::Graph,
        }
    }

    fn model(seed: u64) -> (ParamStore, GbeModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = GbeModel::new(&mut store, small(), &mut rng).unwrap();
        (store, m)
    }

    fn planner() -> PlannerState {
        let mut p = PlannerState::new(4);
        p.observe(0, &[0.1, 0.2, -0.3, 0.4], &[(1, &[1.0, 0.0, 0.2, -0.5]), (2, &[-0.4, 0.9, 0.0, 0.3])])
            .unwrap();
        p
    }

    #[test]
    fn zero_vision_input_gives_tanh_bias() {
        let (store, m) = model(0);
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(1, 4));
        let y = m.encode_vision(&mut t, &store, x).unwrap();
        let b = store.value(m.vision_b).map(f64::tanh);
        assert_eq!(t.value(y).data, b.data);
        let bad = t.constant(Tensor::zeros(1, 3));
        assert!(matches!(m.encode_vision(&mut t, &store, bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn single_token_attention_returns_its_state() {
        let (store, m) = model(1);
        let mut t = Tape::new();
        let lang = t.constant(Tensor::from_vec(1, 5, vec![0.3, -0.1, 0.7, 0.0, 2.0]));
        let fg = t.constant(Tensor::column(vec![9.0, -3.0, 1.0, 0.5, 4.0]));
        let (_, alpha) = m.cross_modal(&mut t, &store, fg, lang).unwrap();
        assert_eq!(t.value(alpha).data, vec![1.0]);
    }

    #[test]
    fn cross_modal_matches_dense_math() {
        let (store, m) = model(2);
        let states = vec![0.3, -0.1, 0.7, 0.0, 2.0, -1.0, 0.5, 0.25, 0.1, -0.6];
        let fg_v = vec![0.2, -0.3, 1.0, 0.5, -0.4];
        let mut t = Tape::new();
        let lang = t.constant(Tensor::from_vec(2, 5, states.clone()));
        let fg = t.constant(Tensor::column(fg_v.clone()));
        let (ft, alpha) = m.cross_modal(&mut t, &store, fg, lang).unwrap();

        let s: Vec<f64> = (0..2).map(|i| (0..5).map(|k| states[i * 5 + k] * fg_v[k]).sum()).collect();
        let mx = s[0].max(s[1]);
        let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
        let a: Vec<f64> = e.iter().map(|v| v / (e[0] + e[1])).collect();
        assert!((t.value(alpha).data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let att: Vec<f64> = (0..5).map(|k| a[0] * states[k] + a[1] * states[5 + k]).collect();
        let joint: Vec<f64> = fg_v.iter().chain(&att).copied().collect();
        let w = store.value(m.cross.w);
        let b = store.value(m.cross.b);
        for r in 0..5 {
            let pre: f64 = (0..10).map(|c| w.at(r, c) * joint[c]).sum::<f64>() + b.data[r];
            assert!((t.value(ft).data[r] - pre.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_candidates_force_stop() {
        let (store, m) = model(3);
        let mut t = Tape::new();
        let ft = t.constant(Tensor::column(vec![0.1; 5]));
        let d = m.decide(&mut t, &store, ft, &[]).unwrap();
        assert_eq!(d.output(&t).probs, vec![1.0]);
    }

    #[test]
    fn identical_candidates_tie() {
        let (store, m) = model(4);
        let mut t = Tape::new();
        let ft = t.constant(Tensor::column(vec![0.1, -0.2, 0.3, 0.0, 0.9]));
        let c = t.constant(Tensor::column(vec![0.5, 0.5, -0.5, 0.1, 0.0]));
        let out = m.decide(&mut t, &store, ft, &[c, c]).unwrap().output(&t);
        assert_eq!(out.probs.len(), 3);
        assert_eq!(out.probs[1], out.probs[2]);
        assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn argmax_ignores_logit_shift() {
        let (store, m) = model(5);
        let mut t = Tape::new();
        let ft = t.constant(Tensor::column(vec![0.4, -0.2, 0.3, 0.8, -0.9]));
        let c1 = t.constant(Tensor::column(vec![0.5, 0.1, -0.5, 0.1, 0.0]));
        let c2 = t.constant(Tensor::column(vec![-0.3, 0.2, 0.6, -0.1, 0.4]));
        let d = m.decide(&mut t, &store, ft, &[c1, c2]).unwrap();
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let logits = t.value(d.logits).clone();
        let shifted = t.constant(logits.map(|v| v + 123.0));
        let lp = t.log_softmax(shifted).unwrap();
        assert_eq!(argmax(&t.value(lp).data), argmax(&t.value(d.log_probs).data));
        assert_eq!(argmax(&logits.data), argmax(&t.value(d.log_probs).data));
    }

    #[test]
    fn candidate_permutation_equivariance() {
        let (store, m) = model(6);
        let mut t = Tape::new();
        let ft = t.constant(Tensor::column(vec![0.4, -0.2, 0.3, 0.8, -0.9]));
        let cs: Vec<Var> = [[0.5, 0.1, -0.5, 0.1, 0.0], [-0.3, 0.2, 0.6, -0.1, 0.4], [0.9, -0.9, 0.0, 0.3, 0.3]]
            .iter()
            .map(|v| t.constant(Tensor::column(v.to_vec())))
            .collect();
        let a = m.decide(&mut t, &store, ft, &cs).unwrap().output(&t);
        let perm = [cs[2], cs[0], cs[1]];
        let b = m.decide(&mut t, &store, ft, &perm).unwrap().output(&t);
        assert!((a.probs[0] - b.probs[0]).abs() < 1e-15);
        for (i, j) in [(3, 1), (1, 2), (2, 3)] {
            assert!((a.probs[i] - b.probs[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn localization_reads_only_the_context() {
        let (store, m) = model(7);
        let mut t = Tape::new();
        let ft = t.constant(Tensor::column(vec![0.4, -0.2, 0.3, 0.8, -0.9]));
        let c1 = t.constant(Tensor::column(vec![0.5, 0.1, -0.5, 0.1, 0.0]));
        let c2 = t.constant(Tensor::column(vec![-3.0, 2.0, 0.6, -0.1, 0.4]));
        let a = m.decide(&mut t, &store, ft, &[c1]).unwrap().output(&t);
        let b = m.decide(&mut t, &store, ft, &[c2, c1, c2]).unwrap().output(&t);
        assert_eq!(a.localization, b.localization);
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn zeroed_language_ignores_tokens() {
        let (store, m) = model(8);
        let p = planner();
        let off = Modality {
            vision: true,
            language: false,
        };
        let mut t = Tape::new();
        let la = m.encode_language(&mut t, &store, &[1, 2, 3], off).unwrap();
        let lb = m.encode_language(&mut t, &store, &[7, 0, 4], off).unwrap();
        let a = m.step(&mut t, &store, &p, 0, la, off).unwrap().decision.output(&t);
        let b = m.step(&mut t, &store, &p, 0, lb, off).unwrap().decision.output(&t);
        assert_eq!(a, b);
        // with language on, the tokens matter
        let on = Modality::default();
        let la = m.encode_language(&mut t, &store, &[1, 2, 3], on).unwrap();
        let lb = m.encode_language(&mut t, &store, &[7, 0, 4], on).unwrap();
        let a = m.step(&mut t, &store, &p, 0, la, on).unwrap().decision.output(&t);
        let b = m.step(&mut t, &store, &p, 0, lb, on).unwrap().decision.output(&t);
        assert_ne!(a, b);
    }

    #[test]
    fn zeroed_vision_ignores_features() {
        let (store, m) = model(9);
        let p = planner();
        let mut q = PlannerState::new(4);
        q.observe(0, &[5.0, 5.0, 5.0, 5.0], &[(1, &[-1.0; 4]), (2, &[2.0; 4])]).unwrap();
        let off = Modality {
            vision: false,
            language: true,
        };
        let mut t = Tape::new();
        let l = m.encode_language(&mut t, &store, &[1, 2, 3], off).unwrap();
        let a = m.step(&mut t, &store, &p, 0, l, off).unwrap();
        let b = m.step(&mut t, &store, &q, 0, l, off).unwrap();
        assert!(a.inputs.data.iter().all(|&v| v == 0.0));
        assert_eq!(a.decision.output(&t), b.decision.output(&t));
    }

    #[test]
    fn random_parameters_stay_finite() {
        let p = planner();
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let m = GbeModel::new(&mut store, small(), &mut rng).unwrap();
            // inflate weights to stress the softmax
            for id in store.ids().collect::<Vec<_>>() {
                let scale = 1.0 + rng.random::<f64>() * 20.0;
                let p = store.get_mut(id);
                p.value = p.value.map(|v| v * scale);
            }
            let mut t = Tape::new();
            let l = m.encode_language(&mut t, &store, &[4, 1], Modality::default()).unwrap();
            let out = m.step(&mut t, &store, &p, 0, l, Modality::default()).unwrap().decision.output(&t);
            assert!(out.probs.iter().all(|v| v.is_finite() && *v >= 0.0));
            assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(out.localization.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn step_gradients_match_differences() {
        let (mut store, m) = model(10);
        let p = planner();
        let r = grad_check(
            &mut store,
            |t, s| {
                let l = m.encode_language(t, s, &[2, 5, 1], Modality::default())?;
                let f = m.step(t, s, &p, 0, l, Modality::default())?;
                let lp = t.pick(f.decision.log_probs, 1)?;
                let loc = t.mul(f.decision.localization, f.decision.localization)?;
                let loc = t.sum(loc);
                t.weighted_sum(&[(lp, -1.0), (loc, 0.5)])
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn critic_gradient_stops_at_its_input() {
        let (mut store, m) = model(11);
        let p = planner();
        let value_only = |t: &mut Tape, s: &ParamStore| {
            let l = m.encode_language(t, s, &[2, 5, 1], Modality::default())?;
            let f = m.step(t, s, &p, 0, l, Modality::default())?;
            let v = t.mul(f.decision.value, f.decision.value)?;
            Ok(t.sum(v))
        };
        let mut t = Tape::new();
        let v = value_only(&mut t, &store).unwrap();
        t.backward(v, &mut store);
        for param in store.iter() {
            let touched = param.grad.data.iter().any(|g| *g != 0.0);
            assert_eq!(touched, param.name.starts_with("value."), "{}", param.name);
        }
        store.zero_grad();
        let r = grad_check_params(&mut store, value_only, &GradCheckConfig::default(), |n| n.starts_with("value.")).unwrap();
        assert!(r.checked > 0 && r.max_rel_error < 1e-3, "{r:?}");
    }
}
