use rand::Rng;

use crate::{Error, Result};

use super::{init_truncated_normal, ConvMode, ConvSpec, Graph, ParamId, ParamStore, Real, Tape, Tensor, Var};


/// Standard deviation of the truncated-normal weight initialisation.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply<T: Real>(self, tape: &mut Tape<T>, x: Var) -> Var {
        match self {
            Activation::Gelu => tape.gelu(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

impl<T: Real> Tape<T> {
    /// Normalises over the last (channel) axis, then applies `gain` and
    /// `offset` per channel.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        for (p, name) in [(gain, "gain"), (offset, "offset")] {
            let ps = self.shape(p);
            if ps != [c] {
                return Err(Error::dim("layer_norm", name, c, ps.iter().product()));
            }
        }
        let eps = T::lit(super::LAYER_NORM_EPS);
        let inv_c = T::one() / T::lit(c as f64);
        let xv = self.value(x).data();
        let gv = self.value(gain).data();
        let bv = self.value(offset).data();
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(c) {
            let mu = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_c;
            let inv = T::one() / (var + eps).sqrt();
            for k in 0..c {
                out.push((row[k] - mu) * inv * gv[k] + bv[k]);
            }
        }
        let out = Tensor::from_vec(shape.clone(), out)?;
        Ok(self.push_op(out, &[x, gain, offset], move |cx| {
            let xv = cx.inputs[0].data();
            let gv = cx.inputs[1].data();
            let g = cx.grad.data();
            let mut gx = vec![T::zero(); xv.len()];
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            let mut xhat = vec![T::zero(); c];
            let mut dxhat = vec![T::zero(); c];
            for (r, row) in xv.chunks(c).enumerate() {
                let mu = row.iter().copied().sum::<T>() * inv_c;
                let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_c;
                let inv = T::one() / (var + eps).sqrt();
                let grow = &g[r * c..(r + 1) * c];
                let mut m1 = T::zero();
                let mut m2 = T::zero();
                for k in 0..c {
                    xhat[k] = (row[k] - mu) * inv;
                    dxhat[k] = grow[k] * gv[k];
                    gg[k] += grow[k] * xhat[k];
                    gb[k] += grow[k];
                    m1 += dxhat[k];
                    m2 += dxhat[k] * xhat[k];
                }
                m1 *= inv_c;
                m2 *= inv_c;
                for k in 0..c {
                    gx[r * c + k] = inv * (dxhat[k] - m1 - xhat[k] * m2);
                }
            }
            vec![
                cx.needs[0].then(|| Tensor::from_vec(shape.clone(), gx).unwrap()),
                cx.needs[1].then(|| Tensor::from_vec(vec![c], gg).unwrap()),
                cx.needs[2].then(|| Tensor::from_vec(vec![c], gb).unwrap()),
            ]
        }))
    }

    /// Affine map of an `N×F` input with an `F×G` weight and `G` bias.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, f) = match self.shape(x)[..] {
            [n, f] => (n, f),
            _ => return Err(Error::shape("linear", format!("expected N×F input, got {:?}", self.shape(x)))),
        };
        let (wf, g_out) = match self.shape(weight)[..] {
            [a, b] => (a, b),
            _ => return Err(Error::shape("linear", "weight must be F×G")),
        };
        if wf != f {
            return Err(Error::dim("linear", "F_in", wf, f));
        }
        if self.shape(bias) != [g_out] {
            return Err(Error::dim("linear", "bias", g_out, self.value(bias).len()));
        }
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let bv = self.value(bias).data();
        let mut out = Vec::with_capacity(n * g_out);
        for r in 0..n {
            let mut row = bv.to_vec();
            for k in 0..f {
                let xk = xv[r * f + k];
                for (o, &wkj) in row.iter_mut().zip(&wv[k * g_out..(k + 1) * g_out]) {
                    *o += xk * wkj;
                }
            }
            out.extend(row);
        }
        let out = Tensor::from_vec(vec![n, g_out], out)?;
        Ok(self.push_op(out, &[x, weight, bias], move |cx| {
            let xv = cx.inputs[0].data();
            let wv = cx.inputs[1].data();
            let g = cx.grad.data();
            let gx = cx.needs[0].then(|| {
                Tensor::from_fn(&[n, f], |i| {
                    let (r, k) = (i / f, i % f);
                    (0..g_out).map(|j| g[r * g_out + j] * wv[k * g_out + j]).sum()
                })
            });
            let gw = cx.needs[1].then(|| {
                Tensor::from_fn(&[f, g_out], |i| {
                    let (k, j) = (i / g_out, i % g_out);
                    (0..n).map(|r| xv[r * f + k] * g[r * g_out + j]).sum()
                })
            });
            let gb = cx.needs[2].then(|| Tensor::from_fn(&[g_out], |j| (0..n).map(|r| g[r * g_out + j]).sum()));
            vec![gx, gw, gb]
        }))
    }

    /// Spatial mean per channel: `N×H×W×C → N×1×1×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, h, w, c] = self.value(x).dims4("global_avg_pool")?;
        let hw = h * w;
        let inv = T::one() / T::lit(hw as f64);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * c];
        for b in 0..n {
            for p in 0..hw {
                let base = (b * hw + p) * c;
                for k in 0..c {
                    out[b * c + k] += xv[base + k];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor::from_vec(vec![n, 1, 1, c], out)?;
        Ok(self.push_op(out, &[x], move |cx| {
            let g = cx.grad.data();
            let gx = Tensor::from_fn(&[n, h, w, c], |i| {
                let b = i / (hw * c);
                g[b * c + i % c] * inv
            });
            vec![Some(gx)]
        }))
    }

    /// Stochastic depth on a residual branch: each sample is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1−rate)`. With no
    /// generator (evaluation) this is the identity.
    pub fn drop_path_with<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("drop-path rate must lie in [0, 1), got {rate}")));
        }
        let Some(rng) = rng else { return Ok(x) };
        if rate == 0.0 {
            return Ok(x);
        }
        let shape = self.shape(x).to_vec();
        let n = shape[0];
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mut mshape = vec![1; shape.len()];
        mshape[0] = n;
        let m = self.constant(Tensor::from_vec(mshape, mask)?);
        self.mul(x, m)
    }
}

/// Convolution layer owning its weight (and optional bias) parameters.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv2d {
    /// Square `k×k` kernel. For depthwise convolutions `cin` must equal `cout`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        spec: ConvSpec,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let shape = match spec.mode {
            ConvMode::Standard => [k, k, cin, cout],
            ConvMode::Depthwise => {
                assert_eq!(cin, cout, "depthwise convolution keeps the channel count");
                [k, k, 1, cout]
            }
            ConvMode::Transposed => [k, k, cout, cin],
        };
        let weight = store.add(format!("{name}/weight"), init_truncated_normal(&shape, INIT_STD, rng));
        let bias = bias.then(|| store.add(format!("{name}/bias"), Tensor::zeros(&[cout])));
        Self { weight, bias, spec }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, fin: usize, fout: usize, rng: &mut R) -> Self {
        Self {
            weight: store.add(format!("{name}/weight"), init_truncated_normal(&[fin, fout], INIT_STD, rng)),
            bias: store.add(format!("{name}/bias"), Tensor::zeros(&[fout])),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        Self {
            gain: store.add(format!("{name}/gain"), Tensor::ones(&[c])),
            offset: store.add(format!("{name}/offset"), Tensor::zeros(&[c])),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let a = g.param(self.gain);
        let b = g.param(self.offset);
        g.layer_norm(x, a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_constant_input_gives_offset() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::full(&[1, 2, 2, 3], 0.7));
        let g = tape.constant(Tensor::ones(&[3]));
        let b = tape.constant(Tensor::from_vec(vec![3], vec![0.1, -0.2, 0.3]).unwrap());
        let y = tape.layer_norm(x, g, b).unwrap();
        for row in tape.value(y).data().chunks(3) {
            for (v, e) in row.iter().zip([0.1, -0.2, 0.3]) {
                assert!((v - e).abs() < 1e-9, "{v} vs {e}");
            }
        }
    }

    #[test]
    fn layer_norm_statistics() {
        let mut rng = crate::seeded_rng(3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::from_fn(&[2, 3, 3, 16], |_| rng.random::<f64>() * 4.0 - 1.0));
        let g = tape.constant(Tensor::ones(&[16]));
        let b = tape.constant(Tensor::zeros(&[16]));
        let y = tape.layer_norm(x, g, b).unwrap();
        for row in tape.value(y).data().chunks(16) {
            let mu: f64 = row.iter().sum::<f64>() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 16.0;
            assert!(mu.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn layer_norm_gain_length_checked() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[1, 1, 1, 4]));
        let g = tape.constant(Tensor::ones(&[3]));
        let b = tape.constant(Tensor::zeros(&[4]));
        assert!(matches!(tape.layer_norm(x, g, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn linear_arithmetic() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap());
        // y_j = Σ_k x_k W[k, j] with W = [[1, 0], [1, 1]] stored F×G
        let w = tape.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::zeros(&[2]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 2.0]);
    }

    #[test]
    fn pool_values_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::<f64>::from_vec(vec![1, 2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        let p = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(p).data(), &[1.5]);
        let s = tape.sum(p);
        let g = tape.gradients(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn drop_path_identities_and_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::ones(&[4, 1, 1, 2]));
        let mut rng = crate::seeded_rng(0);
        assert_eq!(tape.drop_path_with(x, 0.0, Some(&mut rng)).unwrap(), x);
        assert_eq!(tape.drop_path_with::<crate::SeededRng>(x, 0.5, None).unwrap(), x);
        assert!(matches!(tape.drop_path_with(x, 1.0, Some(&mut rng)), Err(Error::Config(_))));
    }

    #[test]
    fn drop_path_preserves_expectation() {
        let n = 100_000;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::full(&[n, 1], 2.0));
        let mut rng = crate::seeded_rng(11);
        let y = tape.drop_path_with(x, 0.3, Some(&mut rng)).unwrap();
        let mean = tape.value(y).sum() / n as f64;
        assert!((mean - 2.0).abs() / 2.0 < 0.01, "mean {mean}");
    }
}
