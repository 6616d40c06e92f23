//! Central finite-difference gradient checks (64-bit only).

use rand::Rng;
use rand::seq::index::sample;

use crate::Result;

use super::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Step of the five-point central stencil.
    pub step: f64,
    /// Entries sampled per parameter or input tensor; smaller tensors are
    /// checked exhaustively.
    pub max_entries: usize,
    /// Denominator floor of the relative error, so that entries whose true
    /// gradient is below finite-difference resolution do not dominate.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_entries: 24,
            floor: 1e-6,
            seed: 0x6d5,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Location of the worst entry, e.g. `param cmb/w1/weight[3]`.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }

    fn record(&mut self, analytic: f64, numeric: f64, floor: f64, what: impl FnOnce() -> String) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(floor);
        self.checked += 1;
        self.max_abs_error = self.max_abs_error.max(abs);
        if rel > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = what();
        }
    }
}

/// Compares reverse-mode gradients of `⟨f(params, inputs), R⟩` (R a fixed
/// random tensor) with five-point central differences, over every trainable
/// parameter in `store` and every tensor in `inputs`. `f` runs in evaluation mode.
pub fn check_gradients<F>(store: &mut ParamStore<f64>, inputs: &[Tensor<f64>], opts: &GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut rng = crate::seeded_rng(opts.seed);
    let probe = {
        let mut g = Graph::eval(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).shape().to_vec()
    };
    let weights = Tensor::from_fn(&probe, |_| rng.random::<f64>() * 2.0 - 1.0);

    let loss_value = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::eval(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).dot(&weights))
    };

    // analytic pass
    store.zero_grad();
    let input_grads: Vec<Option<Tensor<f64>>> = {
        let mut g = Graph::eval(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let w = g.constant(weights.clone());
        let prod = g.mul(out, w)?;
        let loss = g.sum(prod);
        let tape = g.into_tape();
        let mut scratch = store.clone();
        let grads = tape.backward(loss, &mut scratch)?;
        for (p, s) in store.iter_mut().zip(scratch.iter()) {
            p.grad = s.grad.clone();
        }
        vars.iter().map(|&v| grads.get(v).cloned()).collect()
    };

    let mut report = GradCheckReport::default();
    let h = opts.step;
    let ids: Vec<_> = store.ids().filter(|&id| store.get(id).trainable).collect();
    for id in ids {
        let n = store.get(id).value.len();
        for k in pick(n, opts.max_entries, &mut rng) {
            let orig = store.get(id).value.data()[k];
            let numeric = stencil(h, |dx| {
                store.get_mut(id).value.data_mut()[k] = orig + dx;
                let v = loss_value(store, inputs);
                store.get_mut(id).value.data_mut()[k] = orig;
                v
            })?;
            let analytic = store.get(id).grad.data()[k];
            report.record(analytic, numeric, opts.floor, || format!("param {}[{k}]", store.get(id).name));
        }
    }
    let mut perturbed: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, ig) in input_grads.iter().enumerate() {
        let n = inputs[i].len();
        for k in pick(n, opts.max_entries, &mut rng) {
            let orig = inputs[i].data()[k];
            let numeric = stencil(h, |dx| {
                perturbed[i].data_mut()[k] = orig + dx;
                let v = loss_value(store, &perturbed);
                perturbed[i].data_mut()[k] = orig;
                v
            })?;
            let analytic = ig.as_ref().map_or(0.0, |g| g.data()[k]);
            report.record(analytic, numeric, opts.floor, || format!("input {i}[{k}]"));
        }
    }
    Ok(report)
}

/// `[−f(2h) + 8f(h) − 8f(−h) + f(−2h)] / 12h`, exact for quartics.
fn stencil(h: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let (a, b, c, d) = (f(2.0 * h)?, f(h)?, f(-h)?, f(-2.0 * h)?);
    Ok((-a + 8.0 * b - 8.0 * c + d) / (12.0 * h))
}

fn pick<R: Rng>(n: usize, max: usize, rng: &mut R) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        let mut v = sample(rng, n, max).into_vec();
        v.sort_unstable();
        v
    }
}
