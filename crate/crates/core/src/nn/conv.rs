//! 2-D convolutions on channel-last tensors.
//!
//! Weight layouts:
//! - standard: `KH×KW×Cin×Cout`
//! - depthwise: `KH×KW×1×C` (one filter per channel)
//! - transposed: `KH×KW×Cout×Cin`, i.e. the layout of the standard
//!   convolution whose input-adjoint it is.

use crate::{Error, Result};

use super::{Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    Standard,
    Depthwise,
    Transposed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub mode: ConvMode,
}

impl ConvSpec {
    pub fn standard(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            mode: ConvMode::Standard,
        }
    }

    /// Stride-1 depthwise convolution with "same" padding for odd `k`.
    pub fn depthwise_same(k: usize) -> Self {
        Self {
            stride: 1,
            padding: k / 2,
            mode: ConvMode::Depthwise,
        }
    }

    pub fn transposed(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            mode: ConvMode::Transposed,
        }
    }
}

/// Geometry shared by the three kernels: the "big" side is the input of a
/// standard convolution, the "small" side its output.
#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    #[inline]
    fn taps(&self, oh: usize, ow: usize, mut f: impl FnMut(usize, usize, usize)) {
        for ki in 0..self.kh {
            let ih = (oh * self.stride + ki) as isize - self.pad as isize;
            if ih < 0 || ih >= self.h as isize {
                continue;
            }
            for kj in 0..self.kw {
                let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                if iw < 0 || iw >= self.w as isize {
                    continue;
                }
                f(ki * self.kw + kj, ih as usize, iw as usize);
            }
        }
    }
}

fn gather<T: Real>(big: &[T], w: &[T], g: Geom, a: usize, b: usize) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.oh * g.ow * b];
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o = ((n * g.oh + oh) * g.ow + ow) * b;
                let orow = &mut out[o..o + b];
                g.taps(oh, ow, |k, ih, iw| {
                    let base = ((n * g.h + ih) * g.w + iw) * a;
                    for ai in 0..a {
                        let xa = big[base + ai];
                        let wrow = &w[(k * a + ai) * b..(k * a + ai + 1) * b];
                        for (o, &wv) in orow.iter_mut().zip(wrow) {
                            *o += xa * wv;
                        }
                    }
                });
            }
        }
    }
    out
}

fn scatter<T: Real>(small: &[T], w: &[T], g: Geom, a: usize, b: usize) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.h * g.w * a];
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o = ((n * g.oh + oh) * g.ow + ow) * b;
                let srow = &small[o..o + b];
                g.taps(oh, ow, |k, ih, iw| {
                    let base = ((n * g.h + ih) * g.w + iw) * a;
                    for ai in 0..a {
                        let wrow = &w[(k * a + ai) * b..(k * a + ai + 1) * b];
                        let mut acc = T::zero();
                        for (&wv, &sv) in wrow.iter().zip(srow) {
                            acc += wv * sv;
                        }
                        out[base + ai] += acc;
                    }
                });
            }
        }
    }
    out
}

fn weight_grad<T: Real>(big: &[T], small: &[T], g: Geom, a: usize, b: usize) -> Vec<T> {
    let mut gw = vec![T::zero(); g.kh * g.kw * a * b];
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o = ((n * g.oh + oh) * g.ow + ow) * b;
                let srow = &small[o..o + b];
                g.taps(oh, ow, |k, ih, iw| {
                    let base = ((n * g.h + ih) * g.w + iw) * a;
                    for ai in 0..a {
                        let xa = big[base + ai];
                        let grow = &mut gw[(k * a + ai) * b..(k * a + ai + 1) * b];
                        for (gv, &sv) in grow.iter_mut().zip(srow) {
                            *gv += xa * sv;
                        }
                    }
                });
            }
        }
    }
    gw
}

fn gather_dw<T: Real>(big: &[T], w: &[T], g: Geom, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.oh * g.ow * c];
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o = ((n * g.oh + oh) * g.ow + ow) * c;
                let orow = &mut out[o..o + c];
                g.taps(oh, ow, |k, ih, iw| {
                    let base = ((n * g.h + ih) * g.w + iw) * c;
                    let xr = &big[base..base + c];
                    let wr = &w[k * c..(k + 1) * c];
                    for ((o, &x), &wv) in orow.iter_mut().zip(xr).zip(wr) {
                        *o += x * wv;
                    }
                });
            }
        }
    }
    out
}

fn scatter_dw<T: Real>(small: &[T], w: &[T], g: Geom, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.h * g.w * c];
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o = ((n * g.oh + oh) * g.ow + ow) * c;
                let srow = &small[o..o + c];
                g.taps(oh, ow, |k, ih, iw| {
                    let base = ((n * g.h + ih) * g.w + iw) * c;
                    let wr = &w[k * c..(k + 1) * c];
                    for ((dst, &s), &wv) in out[base..base + c].iter_mut().zip(srow).zip(wr) {
                        *dst += s * wv;
                    }
                });
            }
        }
    }
    out
}

fn weight_grad_dw<T: Real>(big: &[T], small: &[T], g: Geom, c: usize) -> Vec<T> {
    let mut gw = vec![T::zero(); g.kh * g.kw * c];
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o = ((n * g.oh + oh) * g.ow + ow) * c;
                let srow = &small[o..o + c];
                g.taps(oh, ow, |k, ih, iw| {
                    let base = ((n * g.h + ih) * g.w + iw) * c;
                    let xr = &big[base..base + c];
                    for ((gv, &x), &s) in gw[k * c..(k + 1) * c].iter_mut().zip(xr).zip(srow) {
                        *gv += x * s;
                    }
                });
            }
        }
    }
    gw
}

fn bias_grad<T: Real>(g: &Tensor<T>, c: usize) -> Tensor<T> {
    let mut gb = Tensor::zeros(&[c]);
    let gbd = gb.data_mut();
    for row in g.data().chunks(c) {
        for (b, &v) in gbd.iter_mut().zip(row) {
            *b += v;
        }
    }
    gb
}

fn add_bias<T: Real>(data: &mut [T], bias: &[T]) {
    let c = bias.len();
    for row in data.chunks_mut(c) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

impl<T: Real> Tape<T> {
    /// 2-D convolution of an `N×H×W×C` input.
    ///
    /// Output extents are `(H + 2p − K)/s + 1` for standard and depthwise
    /// modes and `(H − 1)s − 2p + K` for the transposed mode.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let [n, h, w, c] = self.value(x).dims4("conv2d")?;
        let [kh, kw, wa, wb] = self.value(weight).dims4("conv2d")?;
        let ConvSpec { stride, padding: pad, mode } = spec;
        if stride == 0 {
            return Err(Error::Config("conv2d: stride must be at least 1".into()));
        }
        let (cin_expected, cout) = match mode {
            ConvMode::Standard => (wa, wb),
            ConvMode::Depthwise => {
                if wa != 1 {
                    return Err(Error::dim("conv2d", "depthwise weight axis 2", 1, wa));
                }
                (wb, wb)
            }
            ConvMode::Transposed => (wb, wa),
        };
        if c != cin_expected {
            return Err(Error::dim("conv2d", "C_in", cin_expected, c));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != [cout] {
                return Err(Error::dim("conv2d", "bias", cout, bs.iter().product()));
            }
        }
        let geom = match mode {
            ConvMode::Standard | ConvMode::Depthwise => {
                if h + 2 * pad < kh {
                    return Err(Error::dim("conv2d", "H", kh, h + 2 * pad));
                }
                if w + 2 * pad < kw {
                    return Err(Error::dim("conv2d", "W", kw, w + 2 * pad));
                }
                Geom {
                    n,
                    h,
                    w,
                    oh: (h + 2 * pad - kh) / stride + 1,
                    ow: (w + 2 * pad - kw) / stride + 1,
                    kh,
                    kw,
                    stride,
                    pad,
                }
            }
            ConvMode::Transposed => {
                let bh = (h - 1) * stride + kh;
                let bw = (w - 1) * stride + kw;
                if bh <= 2 * pad || bw <= 2 * pad {
                    return Err(Error::shape("conv2d", "transposed output would be empty"));
                }
                Geom {
                    n,
                    h: bh - 2 * pad,
                    w: bw - 2 * pad,
                    oh: h,
                    ow: w,
                    kh,
                    kw,
                    stride,
                    pad,
                }
            }
        };
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let (mut data, out_shape) = match mode {
            ConvMode::Standard => (gather(xv, wv, geom, wa, wb), [n, geom.oh, geom.ow, cout]),
            ConvMode::Depthwise => (gather_dw(xv, wv, geom, c), [n, geom.oh, geom.ow, cout]),
            ConvMode::Transposed => (scatter(xv, wv, geom, wa, wb), [n, geom.h, geom.w, cout]),
        };
        if let Some(b) = bias {
            add_bias(&mut data, self.value(b).data());
        }
        let out = Tensor::from_vec(out_shape.to_vec(), data)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let x_shape = [n, h, w, c];
        let w_shape = [kh, kw, wa, wb];
        Ok(self.push_op(out, &inputs, move |cx| {
            let g = cx.grad.data();
            let xv = cx.inputs[0].data();
            let wv = cx.inputs[1].data();
            let gx = cx.needs[0].then(|| {
                let d = match mode {
                    ConvMode::Standard => scatter(g, wv, geom, wa, wb),
                    ConvMode::Depthwise => scatter_dw(g, wv, geom, c),
                    ConvMode::Transposed => gather(g, wv, geom, wa, wb),
                };
                Tensor::from_vec(x_shape.to_vec(), d).unwrap()
            });
            let gw = cx.needs[1].then(|| {
                let d = match mode {
                    ConvMode::Standard => weight_grad(xv, g, geom, wa, wb),
                    ConvMode::Depthwise => weight_grad_dw(xv, g, geom, c),
                    ConvMode::Transposed => weight_grad(g, xv, geom, wa, wb),
                };
                Tensor::from_vec(w_shape.to_vec(), d).unwrap()
            });
            let mut res = vec![gx, gw];
            if cx.inputs.len() == 3 {
                res.push(cx.needs[2].then(|| bias_grad(cx.grad, cout)));
            }
            res
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    #[test]
    fn identity_one_by_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::from_fn(&[1, 4, 4, 1], |i| i as f64 * 0.5));
        let w = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let y = tape.conv2d(x, w, None, ConvSpec::standard(1, 0)).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn all_ones_three_by_three_sums_to_nine() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::ones(&[1, 3, 3, 1]));
        let w = tape.constant(Tensor::ones(&[3, 3, 1, 1]));
        let y = tape.conv2d(x, w, None, ConvSpec::standard(1, 0)).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.0]);
    }

    #[test]
    fn output_arithmetic() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[2, 32, 40, 3]));
        let down = tape.constant(Tensor::zeros(&[4, 4, 3, 6]));
        let y = tape.conv2d(x, down, None, ConvSpec::standard(2, 1)).unwrap();
        assert_eq!(tape.shape(y), &[2, 16, 20, 6]);
        let up = tape.constant(Tensor::zeros(&[2, 2, 3, 6]));
        let z = tape.conv2d(y, up, None, ConvSpec::transposed(2, 0)).unwrap();
        assert_eq!(tape.shape(z), &[2, 32, 40, 3]);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[1, 4, 4, 3]));
        let w = tape.constant(Tensor::zeros(&[3, 3, 2, 4]));
        let err = tape.conv2d(x, w, None, ConvSpec::standard(1, 1)).unwrap_err();
        assert!(err.to_string().contains("C_in"), "{err}");
        let dw = tape.constant(Tensor::zeros(&[3, 3, 1, 4]));
        assert!(tape.conv2d(x, dw, None, ConvSpec::depthwise_same(3)).is_err());
    }

    #[test]
    fn bias_gradient_sums_positions() {
        let mut store = ParamStore::<f64>::new();
        let b = store.add("b", Tensor::zeros(&[2]));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[1, 3, 3, 1], |i| i as f64));
        let w = tape.constant(Tensor::ones(&[1, 1, 1, 2]));
        let bv = tape.param(&store, b);
        let y = tape.conv2d(x, w, Some(bv), ConvSpec::standard(1, 0)).unwrap();
        let s = tape.sum(y);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(b).grad.data(), &[9.0, 9.0]);
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = crate::seeded_rng(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn depthwise_equals_block_diagonal_standard() {
        let (k, c) = (3, 4);
        let x = random(&[1, 8, 8, c], 1);
        let wd = random(&[k, k, 1, c], 2);
        let dense = Tensor::from_fn(&[k, k, c, c], |i| {
            let (tap, ci, co) = (i / (c * c), (i / c) % c, i % c);
            if ci == co { wd.data()[tap * c + co] } else { 0.0 }
        });
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let (a, b) = (tape.constant(wd), tape.constant(dense));
        let y1 = tape.conv2d(xv, a, None, ConvSpec::depthwise_same(k)).unwrap();
        let y2 = tape.conv2d(xv, b, None, ConvSpec::standard(1, 1)).unwrap();
        for (p, q) in tape.value(y1).data().iter().zip(tape.value(y2).data()) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn conv_is_adjoint_to_input_gradient() {
        let cases = [
            (ConvSpec::standard(1, 1), [3, 3, 3, 5], [1, 7, 6, 3]),
            (ConvSpec::standard(2, 1), [4, 4, 3, 5], [2, 8, 6, 3]),
            (ConvSpec::depthwise_same(5), [5, 5, 1, 3], [1, 6, 7, 3]),
            (ConvSpec::transposed(2, 0), [2, 2, 5, 3], [1, 4, 3, 3]),
        ];
        for (i, (spec, wshape, xshape)) in cases.into_iter().enumerate() {
            let x = random(&xshape, 10 + i as u64);
            let w = random(&wshape, 20 + i as u64);
            let mut tape = Tape::new();
            let xv = tape.input(x.clone());
            let wv = tape.constant(w);
            let out = tape.conv2d(xv, wv, None, spec).unwrap();
            let y = random(tape.shape(out), 30 + i as u64);
            let lhs = tape.value(out).dot(&y);
            let yv = tape.constant(y);
            let prod = tape.mul(out, yv).unwrap();
            let loss = tape.sum(prod);
            let grads = tape.gradients(loss).unwrap();
            let rhs = x.dot(grads.get(xv).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{spec:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn two_backward_passes_double_the_gradient() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", random(&[3, 3, 2, 2], 3));
        let x = random(&[1, 5, 5, 2], 4);
        let pass = |store: &mut ParamStore<f64>| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.param(store, w);
            let y = tape.conv2d(xv, wv, None, ConvSpec::standard(1, 1)).unwrap();
            let s = tape.sum(y);
            tape.backward(s, store).unwrap();
        };
        pass(&mut store);
        let once = store.get(w).grad.clone();
        pass(&mut store);
        for (a, b) in store.get(w).grad.data().iter().zip(once.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let run = || {
            let mut store = ParamStore::<f64>::new();
            let mut rng = crate::seeded_rng(42);
            let w = store.add("w", crate::nn::init_truncated_normal(&[3, 3, 2, 4], 0.02, &mut rng));
            let mut tape = Tape::new();
            let xv = tape.constant(random(&[2, 6, 6, 2], 5));
            let wv = tape.param(&store, w);
            let y = tape.conv2d(xv, wv, None, ConvSpec::standard(2, 1)).unwrap();
            let y2 = tape.gelu(y);
            let s = tape.sum(y2);
            tape.backward(s, &mut store).unwrap();
            (tape.value(y2).clone(), store.get(w).grad.clone())
        };
        assert_eq!(run(), run());
    }
}
