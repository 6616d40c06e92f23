//! Elementwise, broadcasting, reduction and layout ops.

use crate::{Error, Result};

use super::tape::BackCtx;
use super::{Real, Tape, Tensor, Var};

fn pad4(shape: &[usize]) -> [usize; 4] {
    let mut out = [1; 4];
    out[4 - shape.len()..].copy_from_slice(shape);
    out
}

/// Row-major strides of `shape` read through a broadcast to `out`; axes of
/// extent 1 that broadcast get stride 0.
fn bcast_strides(shape: [usize; 4], out: [usize; 4]) -> [usize; 4] {
    let mut strides = [0; 4];
    let mut acc = 1;
    for ax in (0..4).rev() {
        strides[ax] = if shape[ax] == 1 && out[ax] != 1 { 0 } else { acc };
        acc *= shape[ax];
    }
    strides
}

fn for_each_bcast(out: [usize; 4], sa: [usize; 4], sb: [usize; 4], mut f: impl FnMut(usize, usize, usize)) {
    let mut o = 0;
    for i0 in 0..out[0] {
        for i1 in 0..out[1] {
            for i2 in 0..out[2] {
                let ba = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let bb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..out[3] {
                    f(o, ba + i3 * sa[3], bb + i3 * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("rank mismatch: {:?} vs {:?}", a, b)));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(ax, (&x, &y))| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::dim(op, format!("axis {ax}"), x, y)),
        })
        .collect()
}

/// Sums `g` (of broadcast shape) down to `shape`.
fn reduce_to<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let out4 = pad4(g.shape());
    let s = bcast_strides(pad4(shape), out4);
    let mut acc = Tensor::zeros(shape);
    let gd = g.data();
    let ad = acc.data_mut();
    for_each_bcast(out4, s, s, |o, ia, _| ad[ia] += gd[o]);
    acc
}

#[derive(Clone, Copy, Debug)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn gelu_fwd<T: Real>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let c = T::lit(0.044715);
    let half = T::lit(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let c = T::lit(0.044715);
    let half = T::lit(0.5);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::lit(3.0) * c * x * x)
}

fn softplus_fwd<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    fn binary(&mut self, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let name = match op {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        };
        let (sa_shape, sb_shape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(name, &sa_shape, &sb_shape)?;
        let out4 = pad4(&out_shape);
        let sa = bcast_strides(pad4(&sa_shape), out4);
        let sb = bcast_strides(pad4(&sb_shape), out4);
        let mut out = Tensor::zeros(&out_shape);
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            let od = out.data_mut();
            match op {
                BinOp::Add => for_each_bcast(out4, sa, sb, |o, i, j| od[o] = ad[i] + bd[j]),
                BinOp::Sub => for_each_bcast(out4, sa, sb, |o, i, j| od[o] = ad[i] - bd[j]),
                BinOp::Mul => for_each_bcast(out4, sa, sb, |o, i, j| od[o] = ad[i] * bd[j]),
                BinOp::Div => for_each_bcast(out4, sa, sb, |o, i, j| od[o] = ad[i] / bd[j]),
            }
        }
        Ok(self.push_op(out, &[a, b], move |cx: &BackCtx<'_, T>| {
            let g = cx.grad.data();
            let (av, bv) = (cx.inputs[0], cx.inputs[1]);
            match op {
                BinOp::Add | BinOp::Sub => {
                    let ga = cx.needs[0].then(|| reduce_to(cx.grad, &sa_shape));
                    let gb = cx.needs[1].then(|| {
                        let r = reduce_to(cx.grad, &sb_shape);
                        if matches!(op, BinOp::Sub) {
                            r.map(|x| -x)
                        } else {
                            r
                        }
                    });
                    vec![ga, gb]
                }
                BinOp::Mul | BinOp::Div => {
                    let mut ga = Tensor::zeros(&sa_shape);
                    let mut gb = Tensor::zeros(&sb_shape);
                    let (ad, bd) = (av.data(), bv.data());
                    {
                        let (gad, gbd) = (ga.data_mut(), gb.data_mut());
                        if matches!(op, BinOp::Mul) {
                            for_each_bcast(out4, sa, sb, |o, i, j| {
                                gad[i] += g[o] * bd[j];
                                gbd[j] += g[o] * ad[i];
                            });
                        } else {
                            for_each_bcast(out4, sa, sb, |o, i, j| {
                                let inv = T::one() / bd[j];
                                gad[i] += g[o] * inv;
                                gbd[j] -= g[o] * ad[i] * inv * inv;
                            });
                        }
                    }
                    vec![cx.needs[0].then_some(ga), cx.needs[1].then_some(gb)]
                }
            }
        }))
    }

    /// Broadcasting `a + b` (equal ranks, each axis equal or 1).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Sub, a, b)
    }

    /// Broadcasting Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Div, a, b)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Var {
        let out = self.value(x).map(f);
        self.push_op(out, &[x], move |cx| {
            let gx = cx.inputs[0].zip_map(cx.grad, |xv, g| g * df(xv));
            vec![Some(gx)]
        })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, move |v| v * c, move |_| c)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, move |v| v + c, |_| T::one())
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    /// Elementwise `|x|`; the subgradient at 0 is taken as 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), |v| {
            if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu_fwd, gelu_grad)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), |v| if v > T::zero() { T::one() } else { T::zero() })
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus_fwd, sigmoid)
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push_op(v, &[x], |cx| {
            let g = cx.grad.data()[0];
            vec![Some(Tensor::full(cx.inputs[0].shape(), g))]
        })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::lit(self.value(x).len() as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Mean absolute error against `target`.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape(
                "l1_loss",
                format!("prediction {:?} vs target {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        let d = self.sub(pred, target)?;
        let a = self.abs(d);
        Ok(self.mean(a))
    }

    /// Sum over the last axis, keeping it with extent 1.
    pub fn sum_channels(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let c = *shape.last().unwrap();
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = 1;
        let data: Vec<T> = xv.data().chunks(c).map(|ch| ch.iter().copied().sum()).collect();
        let out = Tensor::from_vec(out_shape, data).unwrap();
        self.push_op(out, &[x], move |cx| {
            let g = cx.grad.data();
            let mut gx = Tensor::zeros(&shape);
            for (chunk, &gv) in gx.data_mut().chunks_mut(c).zip(g) {
                chunk.iter_mut().for_each(|v| *v = gv);
            }
            vec![Some(gx)]
        })
    }

    /// Broadcasts `x` to `shape`; the gradient is summed back.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        let out_shape = broadcast_shape("broadcast_to", &src, shape)?;
        if out_shape != shape {
            return Err(Error::shape("broadcast_to", format!("cannot broadcast {:?} to {:?}", src, shape)));
        }
        let out4 = pad4(shape);
        let s = bcast_strides(pad4(&src), out4);
        let mut out = Tensor::zeros(shape);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for_each_bcast(out4, s, s, |o, i, _| od[o] = xd[i]);
        }
        Ok(self.push_op(out, &[x], move |cx| vec![Some(reduce_to(cx.grad, &src))]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push_op(out, &[x], move |cx| vec![Some(cx.grad.reshaped(&src).unwrap())]))
    }

    /// Concatenation along the last axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::shape(
                    "concat_channels",
                    format!("leading extents differ: {:?} vs {:?}", first, s),
                ));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out_shape = lead.to_vec();
        out_shape.push(total);
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::from_vec(out_shape, data)?;
        let lead = lead.to_vec();
        Ok(self.push_op(out, parts, move |cx| {
            let g = cx.grad.data();
            let mut off = 0;
            let mut res = Vec::with_capacity(widths.len());
            for (k, &w) in widths.iter().enumerate() {
                if !cx.needs[k] {
                    res.push(None);
                    off += w;
                    continue;
                }
                let mut shape = lead.clone();
                shape.push(w);
                let mut gp = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    gp.extend_from_slice(&g[r * total + off..r * total + off + w]);
                }
                res.push(Some(Tensor::from_vec(shape, gp).unwrap()));
                off += w;
            }
            res
        }))
    }

    /// Entries `start..start + len` of the last axis.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        if start + len > c || len == 0 {
            return Err(Error::shape("slice_channels", format!("range {start}..{} out of {c}", start + len)));
        }
        let rows = self.value(x).len() / c;
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&self.value(x).data()[r * c + start..r * c + start + len]);
        }
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = len;
        let out = Tensor::from_vec(out_shape, data)?;
        Ok(self.push_op(out, &[x], move |cx| {
            let mut gx = Tensor::zeros(&shape);
            let g = cx.grad.data();
            let gd = gx.data_mut();
            for r in 0..rows {
                gd[r * c + start..r * c + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
            }
            vec![Some(gx)]
        }))
    }

    /// Zero-pads the bottom and right of an `N×H×W×C` tensor to `h×w`.
    pub fn pad_hw(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let [_, sh, sw, _] = self.value(x).dims4("pad_hw")?;
        if h < sh || w < sw {
            return Err(Error::shape("pad_hw", format!("cannot pad {sh}×{sw} to {h}×{w}")));
        }
        let out = Tensor::pad_hw(self.value(x), h, w)?;
        Ok(self.push_op(out, &[x], move |cx| vec![Some(crop_tensor(cx.grad, sh, sw))]))
    }

    /// Keeps the top-left `h×w` window of an `N×H×W×C` tensor.
    pub fn crop_hw(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let [_, sh, sw, _] = self.value(x).dims4("crop_hw")?;
        if h > sh || w > sw {
            return Err(Error::shape("crop_hw", format!("cannot crop {sh}×{sw} to {h}×{w}")));
        }
        let out = crop_tensor(self.value(x), h, w);
        Ok(self.push_op(out, &[x], move |cx| vec![Some(Tensor::pad_hw(cx.grad, sh, sw).unwrap())]))
    }

    /// Dispersion: channel `n` is translated right by `d·n` columns,
    /// giving `N×H×(W+d(C−1))×C`.
    pub fn shear(&mut self, x: Var, d: usize) -> Result<Var> {
        let [_, _, w, c] = self.value(x).dims4("shear")?;
        let ws = w + d * c.saturating_sub(1);
        let out = shear_tensor(self.value(x), d, ws);
        Ok(self.push_op(out, &[x], move |cx| vec![Some(unshear_tensor(cx.grad, d, w))]))
    }

    /// Inverse of [`Tape::shear`]: crops channel `n` from columns
    /// `d·n..d·n+width`.
    pub fn unshear(&mut self, x: Var, d: usize, width: usize) -> Result<Var> {
        let [_, _, ws, c] = self.value(x).dims4("unshear")?;
        if width + d * c.saturating_sub(1) != ws {
            return Err(Error::dim("unshear", "W", width + d * c.saturating_sub(1), ws));
        }
        let out = unshear_tensor(self.value(x), d, width);
        Ok(self.push_op(out, &[x], move |cx| vec![Some(shear_tensor(cx.grad, d, ws))]))
    }
}

pub(crate) fn crop_tensor<T: Real>(src: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [n, sh, sw, c] = src.dims4("crop").unwrap();
    let mut out = Tensor::zeros(&[n, h, w, c]);
    let sd = src.data();
    let od = out.data_mut();
    for b in 0..n {
        for i in 0..h {
            let s = ((b * sh + i) * sw) * c;
            let d = ((b * h + i) * w) * c;
            od[d..d + w * c].copy_from_slice(&sd[s..s + w * c]);
        }
    }
    out
}

pub(crate) fn shear_tensor<T: Real>(src: &Tensor<T>, d: usize, ws: usize) -> Tensor<T> {
    let [n, h, w, c] = src.dims4("shear").unwrap();
    let mut out = Tensor::zeros(&[n, h, ws, c]);
    let sd = src.data();
    let od = out.data_mut();
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let s = ((b * h + i) * w + j) * c;
                for ch in 0..c {
                    od[((b * h + i) * ws + j + d * ch) * c + ch] = sd[s + ch];
                }
            }
        }
    }
    out
}

pub(crate) fn unshear_tensor<T: Real>(src: &Tensor<T>, d: usize, w: usize) -> Tensor<T> {
    let [n, h, ws, c] = src.dims4("unshear").unwrap();
    let mut out = Tensor::zeros(&[n, h, w, c]);
    let sd = src.data();
    let od = out.data_mut();
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let o = ((b * h + i) * w + j) * c;
                for ch in 0..c {
                    od[o + ch] = sd[((b * h + i) * ws + j + d * ch) * c + ch];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn broadcast_mul_and_its_gradient() {
        let mut tape = Tape::new();
        let a = tape.input(t(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.input(t(&[1, 1, 1, 1], &[3.0]));
        let c = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 6.0, 9.0, 12.0]);
        let s = tape.sum(c);
        let g = tape.backward(s, &mut ParamStore::new()).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[3.0; 4]);
        assert_eq!(g.get(b).unwrap().data(), &[10.0]);
    }

    #[test]
    fn incompatible_broadcast_names_axis() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::zeros(&[1, 2, 3, 1]));
        let b = tape.constant(Tensor::<f64>::zeros(&[1, 2, 4, 1]));
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.contains("axis 2"), "{err}");
    }

    #[test]
    fn sum_gives_all_ones_gradient() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::<f64>::from_fn(&[2, 3], |i| i as f64));
        let s = tape.sum(x);
        let g = tape.gradients(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let a = tape.input(t(&[3], &[1.0, -2.0, 0.5]));
        let b = tape.input(t(&[3], &[4.0, 5.0, -6.0]));
        let p = tape.mul(a, b).unwrap();
        let s = tape.sum(p);
        let g = tape.gradients(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), tape.value(b).data());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::<f64>::zeros(&[2]));
        assert!(matches!(tape.gradients(x), Err(Error::Usage(_))));
    }

    #[test]
    fn gelu_values() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[3], &[0.0, 10.0, -10.0]));
        let y = tape.gelu(x);
        let v = tape.value(y).data().to_vec();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 10.0).abs() < 1e-4);
        assert!(v[2].abs() < 1e-4);
        assert_eq!(gelu_grad(0.0f64), 0.5);
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        assert!((softplus_fwd(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus_fwd(800.0f64) - 800.0).abs() < 1e-12);
        assert!(softplus_fwd(-800.0f64) >= 0.0);
    }

    #[test]
    fn shear_example_and_round_trip() {
        // H=1, W=2, two bands: band0=[1,2], band1=[3,4]
        let x = t(&[1, 1, 2, 2], &[1.0, 3.0, 2.0, 4.0]);
        let s = shear_tensor(&x, 1, 3);
        // band0 = [1,2,0], band1 = [0,3,4]
        assert_eq!(s.data(), &[1.0, 0.0, 2.0, 3.0, 0.0, 4.0]);
        assert_eq!(unshear_tensor(&s, 1, 2), x);
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64));
        let b = tape.input(Tensor::<f64>::from_fn(&[1, 2, 2, 1], |i| -(i as f64)));
        let c = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[1, 2, 2, 3]);
        let back = tape.slice_channels(c, 0, 2).unwrap();
        assert_eq!(tape.value(back), tape.value(a));
        let s = tape.sum(back);
        let g = tape.gradients(s).unwrap();
        assert!(g.get(b).is_none() || g.get(b).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.get(a).unwrap().data().iter().all(|&v| v == 1.0));
    }
}
