//! Finite-difference coverage of every differentiable building block.

use rand::Rng;

use super::Check;
use crate::cassi::{forward, CodedMask, HsiCube, SensingOperator};
use crate::denoisers::{Cab, CmFormer, CmFormerConfig, Cmb, FfnVariant, Ffn};
use crate::nn::gradcheck::{check_gradients, GradCheckOptions};
use crate::nn::{ConvSpec, Graph, ParamStore, Tensor, Var};
use crate::unfolding::{EstimatorNet, FrameworkKind, InitialNetwork, SensingBatch, UnfoldConfig, UnfoldingNet};
use crate::{seeded_rng, Result, SeededRng};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// How the entries of an input tensor are drawn.
#[derive(Clone, Copy)]
enum Init {
    /// `±[0.2, 1)` with random sign, away from the kinks of `abs`/`relu`.
    Signed,
    /// `[0.5, 1.5)`, for denominators.
    Positive,
}

fn tensor(shape: &[usize], init: Init, rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| match init {
        Init::Signed => {
            let m = rng.random_range(0.2..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        }
        Init::Positive => rng.random_range(0.5..1.5),
    })
}

type Op = Box<dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    inputs: Vec<(Vec<usize>, Init)>,
    op: Op,
}

fn case(name: &'static str, inputs: &[(&[usize], Init)], op: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var> + 'static) -> Case {
    Case {
        name,
        inputs: inputs.iter().map(|(s, i)| (s.to_vec(), *i)).collect(),
        op: Box::new(op),
    }
}

use Init::{Positive as P, Signed as S};

fn primitives() -> Vec<Case> {
    const X: &[usize] = &[2, 3, 4, 2];
    vec![
        case("add (broadcast)", &[(X, S), (&[1, 1, 1, 2], S)], |g, v| g.add(v[0], v[1])),
        case("sub (broadcast)", &[(X, S), (&[2, 1, 1, 1], S)], |g, v| g.sub(v[0], v[1])),
        case("mul (broadcast)", &[(X, S), (&[1, 3, 4, 1], S)], |g, v| g.mul(v[0], v[1])),
        case("div (broadcast)", &[(X, S), (&[2, 1, 1, 2], P)], |g, v| g.div(v[0], v[1])),
        case("scale", &[(X, S)], |g, v| Ok(g.scale(v[0], -1.7))),
        case("add_scalar", &[(X, S)], |g, v| Ok(g.add_scalar(v[0], 0.3))),
        case("neg", &[(X, S)], |g, v| Ok(g.neg(v[0]))),
        case("abs", &[(X, S)], |g, v| Ok(g.abs(v[0]))),
        case("gelu", &[(X, S)], |g, v| Ok(g.gelu(v[0]))),
        case("relu", &[(X, S)], |g, v| Ok(g.relu(v[0]))),
        case("softplus", &[(X, S)], |g, v| Ok(g.softplus(v[0]))),
        case("sum", &[(X, S)], |g, v| Ok(g.sum(v[0]))),
        case("mean", &[(X, S)], |g, v| Ok(g.mean(v[0]))),
        case("l1_loss", &[(X, S), (X, P)], |g, v| {
            // targets in [2.5, 3.5) keep every difference away from the kink
            let target = g.add_scalar(v[1], 2.0);
            g.l1_loss(v[0], target)
        }),
        case("sum_channels", &[(X, S)], |g, v| Ok(g.sum_channels(v[0]))),
        case("broadcast_to", &[(&[1, 3, 1, 2], S)], |g, v| g.broadcast_to(v[0], &[2, 3, 4, 2])),
        case("reshape", &[(X, S)], |g, v| g.reshape(v[0], &[6, 8])),
        case("concat_channels", &[(X, S), (&[2, 3, 4, 3], S)], |g, v| g.concat_channels(&[v[0], v[1]])),
        case("slice_channels", &[(&[2, 3, 4, 5], S)], |g, v| g.slice_channels(v[0], 1, 3)),
        case("pad_hw", &[(X, S)], |g, v| g.pad_hw(v[0], 5, 7)),
        case("crop_hw", &[(X, S)], |g, v| g.crop_hw(v[0], 2, 3)),
        case("shear", &[(&[1, 3, 4, 3], S)], |g, v| g.shear(v[0], 2)),
        case("unshear", &[(&[1, 3, 8, 3], S)], |g, v| g.unshear(v[0], 2, 4)),
        case("conv2d 3×3", &[(&[1, 5, 5, 2], S), (&[3, 3, 2, 3], S), (&[3], S)], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), ConvSpec::standard(1, 1))
        }),
        case("conv2d stride 2", &[(&[2, 6, 4, 2], S), (&[4, 4, 2, 3], S)], |g, v| g.conv2d(v[0], v[1], None, ConvSpec::standard(2, 1))),
        case("depthwise conv 5×5", &[(&[1, 6, 5, 3], S), (&[5, 5, 1, 3], S), (&[3], S)], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), ConvSpec::depthwise_same(5))
        }),
        case("transposed conv", &[(&[1, 3, 2, 4], S), (&[2, 2, 3, 4], S)], |g, v| g.conv2d(v[0], v[1], None, ConvSpec::transposed(2, 0))),
        case("layer_norm", &[(X, S), (&[2], S), (&[2], S)], |g, v| g.layer_norm(v[0], v[1], v[2])),
        case("linear", &[(&[3, 4], S), (&[4, 5], S), (&[5], S)], |g, v| g.linear(v[0], v[1], v[2])),
        case("global_avg_pool", &[(X, S)], |g, v| g.global_avg_pool(v[0])),
        case("drop_path (fixed draw)", &[(&[6, 2, 2, 2], S)], |g, v| {
            let mut rng = seeded_rng(17);
            g.drop_path_with(v[0], 0.4, Some(&mut rng))
        }),
    ]
}

fn run_case(c: &Case, store: &mut ParamStore<f64>, rng: &mut SeededRng, opts: &GradCheckOptions) -> Result<Check> {
    let inputs: Vec<_> = c.inputs.iter().map(|(s, i)| tensor(s, *i, rng)).collect();
    let r = check_gradients(store, &inputs, opts, &c.op)?;
    Ok(Check::new(format!("grad {}", c.name), r.max_rel_error, GRADCHECK_TOLERANCE, r.checked).with_detail(format!("worst at {}", r.worst)))
}

fn block<F>(name: &str, store: &mut ParamStore<f64>, shape: &[usize], rng: &mut SeededRng, f: F) -> Result<Check>
where
    F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    let input = tensor(shape, Init::Signed, rng);
    let r = check_gradients(store, &[input], &GradCheckOptions::default(), |g, v| f(g, v[0]))?;
    Ok(Check::new(format!("grad {name}"), r.max_rel_error, GRADCHECK_TOLERANCE, r.checked).with_detail(format!("worst at {}", r.worst)))
}

/// Every nonzero parameter in `store` is nudged off its initial value so
/// that zero-initialised biases and unit gains are exercised too.
fn jitter(store: &mut ParamStore<f64>, rng: &mut SeededRng, amount: f64) {
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-amount..amount);
        }
    }
}

pub fn all(seed: u64) -> Result<Vec<Check>> {
    let mut rng = seeded_rng(seed ^ 0x96ad);
    let mut checks = Vec::new();
    let opts = GradCheckOptions { seed, ..Default::default() };
    for c in primitives() {
        checks.push(run_case(&c, &mut ParamStore::new(), &mut rng, &opts)?);
    }

    let cfg = CmFormerConfig { ffn_expansion: 2, ..CmFormerConfig::tiny() };
    let mut s = ParamStore::new();
    let cmb = Cmb::new(&mut s, "cmb", 3, 3, &mut rng);
    jitter(&mut s, &mut rng, 0.2);
    checks.push(block("cmb", &mut s, &[1, 5, 5, 3], &mut rng, |g, x| cmb.forward(g, x))?);

    for variant in [FfnVariant::Full, FfnVariant::NoDw, FfnVariant::PointwiseOnly] {
        let mut s = ParamStore::new();
        let ffn = Ffn::new(&mut s, "ffn", 3, &CmFormerConfig { ffn: variant, ..cfg.clone() }, &mut rng).expect("variant has an FFN");
        jitter(&mut s, &mut rng, 0.2);
        let name = format!("ffn ({})", variant.as_str());
        checks.push(block(&name, &mut s, &[1, 4, 4, 3], &mut rng, |g, x| ffn.forward(g, x))?);
    }

    let mut s = ParamStore::new();
    let cab = Cab::new(&mut s, "cab", 3, &cfg, 0.0, &mut rng);
    jitter(&mut s, &mut rng, 0.2);
    checks.push(block("cab", &mut s, &[1, 4, 4, 3], &mut rng, |g, x| cab.forward(g, x))?);

    let mut s = ParamStore::new();
    let net = CmFormer::new(&mut s, "cmformer", 2, &cfg, &mut rng)?;
    jitter(&mut s, &mut rng, 0.1);
    let beta = Tensor::full(&[1, 1, 1, 1], 0.7);
    let opts_sampled = GradCheckOptions { max_entries: 8, seed, ..Default::default() };
    let input = tensor(&[1, 8, 8, 2], Init::Signed, &mut rng);
    let r = check_gradients(&mut s, &[input, beta], &opts_sampled, |g, v| net.forward(g, v[0], v[1]))?;
    checks.push(Check::new("grad cmformer", r.max_rel_error, GRADCHECK_TOLERANCE, r.checked).with_detail(format!("worst at {}", r.worst)));

    let mut s = ParamStore::new();
    let init = InitialNetwork::new(&mut s, "init", 2, &mut rng);
    jitter(&mut s, &mut rng, 0.2);
    let inputs = [tensor(&[1, 3, 5, 2], Init::Signed, &mut rng), tensor(&[1, 3, 5, 2], Init::Positive, &mut rng)];
    let r = check_gradients(&mut s, &inputs, &opts, |g, v| init.forward(g, v[0], v[1]))?;
    checks.push(Check::new("grad initial network", r.max_rel_error, GRADCHECK_TOLERANCE, r.checked).with_detail(format!("worst at {}", r.worst)));

    let mut s = ParamStore::new();
    let est = EstimatorNet::new(&mut s, "estimator", 2, 6, 2, &mut rng);
    jitter(&mut s, &mut rng, 0.2);
    checks.push(block("estimator", &mut s, &[2, 4, 6, 2], &mut rng, |g, x| {
        let (a, b) = est.forward(g, x)?;
        g.concat_channels(&[a, b])
    })?);

    checks.push(two_stage_network(seed, &mut rng)?);
    Ok(checks)
}

/// The whole 2-stage R2ADMM network on an `8×8×2` scene, gradients with
/// respect to every trainable parameter group.
fn two_stage_network(seed: u64, rng: &mut SeededRng) -> Result<Check> {
    let mask = CodedMask::random_binary(8, 8, 1, 0.5, rng);
    let cube = HsiCube::new(ndarray::Array3::from_shape_simple_fn((8, 8, 2), || rng.random()))?;
    let y = forward(&cube, &mask)?;
    let op = SensingOperator::new(&mask, 2)?;
    let mut cfg = UnfoldConfig::tiny(FrameworkKind::R2Admm, 2);
    cfg.bands = 2;
    cfg.shift_step = 1;
    let mut store = ParamStore::<f64>::new();
    let net = UnfoldingNet::new(&mut store, &cfg, rng)?;
    jitter(&mut store, rng, 0.05);
    for (i, &id) in net.gamma.iter().enumerate() {
        store.get_mut(id).value = Tensor::full(&[1], 0.3 + 0.2 * i as f64);
    }
    let batch = SensingBatch::<f64>::new(&[(&y, &op)])?;
    let opts = GradCheckOptions { max_entries: 6, seed, ..Default::default() };
    let r = check_gradients(&mut store, &[], &opts, |g, _| Ok(net.forward(g, &batch)?.output))?;
    Ok(Check::new("grad 2-stage network", r.max_rel_error, GRADCHECK_TOLERANCE, r.checked).with_detail(format!("worst at {}", r.worst)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_gradient_check_passes() {
        let checks = all(0).unwrap();
        assert!(checks.len() >= 40);
        for c in &checks {
            assert!(c.passed, "{c}");
        }
    }
}
