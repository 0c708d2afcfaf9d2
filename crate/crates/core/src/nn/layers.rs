use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `y = W x + b` with `W: out x in`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), output, input, input, rng);
        let b = store.add_uniform(format!("{name}.b"), output, 1, input, rng);
        Self {
            w,
            b,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        linear(tape, x, w, b)
    }
}

pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(w, x)?;
    tape.add(y, b)
}

/// `-log softmax(z)[label]`.
pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, label: usize) -> Result<Var> {
    let n = tape.value(logits).len();
    if label >= n {
        return Err(Error::Label { label, len: n });
    }
    let lp = tape.log_softmax(logits)?;
    let picked = tape.pick(lp, label)?;
    Ok(tape.scale(picked, -1.0))
}

#[derive(Debug, Clone)]
pub struct EncodedSequence {
    pub states: Vec<Var>,
    /// `T x H` matrix of per-token states.
    pub matrix: Var,
    /// Final hidden state.
    pub pooled: Var,
}

/// Word embeddings followed by a single-layer GRU.
#[derive(Debug, Clone, Copy)]
pub struct SequenceEncoder {
    pub embedding: ParamId,
    pub vocab: usize,
    pub word_dim: usize,
    pub hidden: usize,
    wz: ParamId,
    wr: ParamId,
    wn: ParamId,
    uz: ParamId,
    ur: ParamId,
    un: ParamId,
    bz: ParamId,
    br: ParamId,
    bn: ParamId,
}

impl SequenceEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        word_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let embedding = store.add_uniform(format!("{name}.embedding"), vocab, word_dim, 1, rng);
        let mut w = |g: &str| store.add_uniform(format!("{name}.w_{g}"), hidden, word_dim, word_dim, rng);
        let (wz, wr, wn) = (w("z"), w("r"), w("n"));
        let mut u = |g: &str| store.add_uniform(format!("{name}.u_{g}"), hidden, hidden, hidden, rng);
        let (uz, ur, un) = (u("z"), u("r"), u("n"));
        let mut b = |g: &str| store.add_uniform(format!("{name}.b_{g}"), hidden, 1, hidden, rng);
        let (bz, br, bn) = (b("z"), b("r"), b("n"));
        Self {
            embedding,
            vocab,
            word_dim,
            hidden,
            wz,
            wr,
            wn,
            uz,
            ur,
            un,
            bz,
            br,
            bn,
        }
    }

    /// ```text
    /// z = σ(Wz x + Uz h + bz)
    /// r = σ(Wr x + Ur h + br)
    /// n = tanh(Wn x + bn + r ⊙ (Un h))
    /// h' = n + z ⊙ (h - n)
    /// ```
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, tokens: &[usize]) -> Result<EncodedSequence> {
        if tokens.is_empty() {
            return Err(Error::Config("token sequence must not be empty".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab) {
            return Err(Error::OutOfVocabulary(bad));
        }
        let emb = tape.param(store, self.embedding);
        let p = |tape: &mut Tape, id| tape.param(store, id);
        let (wz, wr, wn) = (p(tape, self.wz), p(tape, self.wr), p(tape, self.wn));
        let (uz, ur, un) = (p(tape, self.uz), p(tape, self.ur), p(tape, self.un));
        let (bz, br, bn) = (p(tape, self.bz), p(tape, self.br), p(tape, self.bn));

        let mut h = tape.constant(Tensor::zeros(self.hidden, 1));
        let mut states = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            let x = tape.row(emb, tok)?;
            let gate = |tape: &mut Tape, w, u, b| -> Result<Var> {
                let wx = tape.matmul(w, x)?;
                let uh = tape.matmul(u, h)?;
                let s = tape.add(wx, uh)?;
                tape.add(s, b)
            };
            let zp = gate(tape, wz, uz, bz)?;
            let z = tape.sigmoid(zp);
            let rp = gate(tape, wr, ur, br)?;
            let r = tape.sigmoid(rp);
            let wnx = tape.matmul(wn, x)?;
            let wnx = tape.add(wnx, bn)?;
            let unh = tape.matmul(un, h)?;
            let gated = tape.mul(r, unh)?;
            let np = tape.add(wnx, gated)?;
            let n = tape.tanh(np);
            let diff = tape.sub(h, n)?;
            let zd = tape.mul(z, diff)?;
            h = tape.add(n, zd)?;
            states.push(h);
        }
        let matrix = tape.stack_rows(&states)?;
        Ok(EncodedSequence {
            pooled: *states.last().expect("non-empty"),
            states,
            matrix,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_linear() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::identity(3));
        let b = store.add("b", Tensor::zeros(3, 1));
        let mut t = Tape::new();
        let x = t.constant(Tensor::column(vec![1.0, 2.0, 3.0]));
        let (wv, bv) = (t.param(&store, w), t.param(&store, b));
        let y = linear(&mut t, x, wv, bv).unwrap();
        assert_eq!(t.value(y).data, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let l = Linear::new(&mut store, "l", 4, 2, &mut rng);
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(4, 1));
        let y = l.forward(&mut t, &store, x).unwrap();
        assert_eq!(t.value(y), store.value(l.b));
    }

    #[test]
    fn linear_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let l = Linear::new(&mut store, "l", 4, 2, &mut rng);
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(3, 1));
        assert!(matches!(l.forward(&mut t, &store, x), Err(Error::Shape { .. })));
    }

    #[test]
    fn linear_gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let l = Linear::new(&mut store, "l", 5, 3, &mut rng);
        let xs = store.add_uniform("x", 5, 1, 1, &mut rng);
        let r = grad_check(
            &mut store,
            |t, s| {
                let x = t.param(s, xs);
                let y = l.forward(t, s, x)?;
                let sq = t.mul(y, y)?;
                let tot = t.sum(sq);
                Ok(tot)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn cross_entropy_cases() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::column(vec![0.7; 5]));
        let l = softmax_cross_entropy(&mut t, z, 2).unwrap();
        assert!((t.scalar(l) - 5f64.ln()).abs() < 1e-12);

        let z = t.constant(Tensor::column(vec![0.0, 800.0, -3.0]));
        let l = softmax_cross_entropy(&mut t, z, 1).unwrap();
        assert!(t.scalar(l).abs() < 1e-12);

        assert!(matches!(
            softmax_cross_entropy(&mut t, z, 3),
            Err(Error::Label { label: 3, len: 3 })
        ));
    }

    #[test]
    fn cross_entropy_gradient_is_p_minus_onehot() {
        let logits = vec![0.3, -1.2, 2.0, 0.0];
        let mut t = Tape::new();
        let z = t.constant(Tensor::column(logits.clone()));
        let l = softmax_cross_entropy(&mut t, z, 1).unwrap();
        let g = t.gradients(l)[0].clone().unwrap();
        let m = logits.iter().copied().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for (i, gi) in g.data.iter().enumerate() {
            let expect = e[i] / s - if i == 1 { 1.0 } else { 0.0 };
            assert!((gi - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn sequence_encoder_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = SequenceEncoder::new(&mut store, "lang", 10, 4, 6, &mut rng);
        let mut t = Tape::new();
        let one = enc.encode(&mut t, &store, &[3]).unwrap();
        assert_eq!(one.states.len(), 1);
        assert_eq!(t.value(one.pooled), t.value(one.states[0]));
        let a = enc.encode(&mut t, &store, &[1, 2, 3]).unwrap();
        let b = enc.encode(&mut t, &store, &[1, 2, 3]).unwrap();
        assert_eq!(t.value(a.matrix), t.value(b.matrix));
        assert_eq!(t.value(a.matrix).shape(), (3, 6));
        assert!(matches!(
            enc.encode(&mut t, &store, &[10]),
            Err(Error::OutOfVocabulary(10))
        ));
        assert!(enc.encode(&mut t, &store, &[]).is_err());
    }

    #[test]
    fn sequence_encoder_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let enc = SequenceEncoder::new(&mut store, "lang", 7, 3, 4, &mut rng);
        let r = grad_check(
            &mut store,
            |t, s| {
                let e = enc.encode(t, s, &[0, 5, 2, 5])?;
                let sq = t.mul(e.matrix, e.matrix)?;
                let tot = t.sum(sq);
                let p = t.sum(e.pooled);
                t.weighted_sum(&[(tot, 1.0), (p, 0.5)])
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }
}
