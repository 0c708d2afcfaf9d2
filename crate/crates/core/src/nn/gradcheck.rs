//! Central-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Check at most this many entries per tensor (all when `None`).
    pub max_per_tensor: Option<usize>,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_per_tensor: None,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Reverse-mode gradients of `loss` at the store's current values.
pub fn analytic_gradients<F>(store: &mut ParamStore, loss: &mut F) -> Result<Vec<Tensor>>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    tape.backward(l, store);
    let grads = store.iter().map(|p| p.grad.clone()).collect();
    store.zero_grad();
    Ok(grads)
}

/// Compares supplied gradients against central differences of `loss`.
pub fn compare_gradients<F>(
    store: &mut ParamStore,
    loss: &mut F,
    analytic: &[Tensor],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    compare_filtered(store, loss, analytic, cfg, &|_| true)
}

fn compare_filtered<F>(
    store: &mut ParamStore,
    loss: &mut F,
    analytic: &[Tensor],
    cfg: &GradCheckConfig,
    keep: &dyn Fn(&str) -> bool,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        if !keep(&store.get(id).name) {
            continue;
        }
        let n = store.value(id).len();
        let entries: Vec<usize> = match cfg.max_per_tensor {
            Some(m) if m < n => {
                let mut e = sample(&mut rng, n, m).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..n).collect(),
        };
        for i in entries {
            let orig = store.value(id).data[i];
            store.get_mut(id).value.data[i] = orig + cfg.eps;
            let plus = eval(store, loss)?;
            store.get_mut(id).value.data[i] = orig - cfg.eps;
            let minus = eval(store, loss)?;
            store.get_mut(id).value.data[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let err = relative_error(analytic[k].data[i], numeric, cfg.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

fn eval<F>(store: &ParamStore, loss: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    Ok(tape.scalar(l))
}

/// Reverse-mode vs central differences for every (or a sample of) entries.
pub fn grad_check<F>(store: &mut ParamStore, mut loss: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let analytic = analytic_gradients(store, &mut loss)?;
    compare_gradients(store, &mut loss, &analytic, cfg)
}

/// [`grad_check`] restricted to parameters whose name passes `keep`.
pub fn grad_check_params<F>(
    store: &mut ParamStore,
    mut loss: F,
    cfg: &GradCheckConfig,
    keep: impl Fn(&str) -> bool,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let analytic = analytic_gradients(store, &mut loss)?;
    compare_filtered(store, &mut loss, &analytic, cfg, &keep)
}
