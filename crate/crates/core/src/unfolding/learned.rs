//! Trainable unfolding: initial network `I`, parameter estimator `E`, one
//! CMFormer per stage and (for R2ADMM) one `γ` per stage.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FrameworkKind, StageParams};
use crate::cassi::{apply_phi_t, Measurement, SensingOperator, ShearedCube};
use crate::denoisers::{CmFormer, CmFormerConfig};
use crate::nn::{Activation, Conv2d, ConvSpec, Graph, Linear, ParamId, ParamStore, Real, Tensor, Var};
use crate::{Error, Result};

/// Which stage scalars are learned. Disabled `α`/`β` fall back to the fixed
/// constants of [`UnfoldConfig`]; a disabled `γ` is frozen at `gamma_init`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamGroups {
    pub alpha: bool,
    pub beta: bool,
    pub gamma: bool,
}

impl Default for ParamGroups {
    fn default() -> Self {
        Self {
            alpha: true,
            beta: true,
            gamma: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnfoldConfig {
    pub framework: FrameworkKind,
    pub stages: usize,
    pub bands: usize,
    pub shift_step: usize,
    pub denoiser: CmFormerConfig,
    pub estimator_hidden: usize,
    pub groups: ParamGroups,
    pub fixed_alpha: f64,
    pub fixed_beta: f64,
    pub gamma_init: f64,
}

impl Default for UnfoldConfig {
    fn default() -> Self {
        Self {
            framework: FrameworkKind::R2Admm,
            stages: 1,
            bands: 28,
            shift_step: 2,
            denoiser: CmFormerConfig::default(),
            estimator_hidden: 64,
            groups: ParamGroups::default(),
            fixed_alpha: 1.0,
            fixed_beta: 1.0,
            gamma_init: 0.0,
        }
    }
}

impl UnfoldConfig {
    /// Narrow model for desk-scale runs: tiny CMFormer, 4 bands.
    pub fn tiny(framework: FrameworkKind, stages: usize) -> Self {
        Self {
            framework,
            stages,
            bands: 4,
            denoiser: CmFormerConfig::tiny(),
            estimator_hidden: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 {
            return Err(Error::Config("at least one band is required".into()));
        }
        if self.estimator_hidden == 0 {
            return Err(Error::Config("estimator width must be positive".into()));
        }
        if !(self.fixed_alpha > 0.0) || !(self.fixed_beta > 0.0) {
            return Err(Error::Config(format!(
                "fixed α and β must be positive, got {} and {}",
                self.fixed_alpha, self.fixed_beta
            )));
        }
        self.denoiser.validate()
    }

    fn needs_estimator(&self) -> bool {
        self.stages > 0 && (self.groups.alpha || self.groups.beta)
    }
}

/// `z⁰ = conv1×1([Φᵀy ‖ M])`.
#[derive(Clone, Debug)]
pub struct InitialNetwork {
    pub conv: Conv2d,
    pub bands: usize,
}

impl InitialNetwork {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, bands: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(store, name, 1, 2 * bands, bands, ConvSpec::standard(1, 0), true, rng),
            bands,
        }
    }

    /// `phit_y`, `mask`: `N×H×W′×Nλ`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, phit_y: Var, mask: Var) -> Result<Var> {
        let c = *g.shape(phit_y).last().unwrap_or(&0);
        if c != self.bands {
            return Err(Error::dim("initial_network", "bands", self.bands, c));
        }
        let x = g.concat_channels(&[phit_y, mask])?;
        self.conv.forward(g, x)
    }

    pub fn apply<T: Real>(&self, store: &ParamStore<T>, y: &Measurement, op: &SensingOperator) -> Result<ShearedCube> {
        let batch = SensingBatch::<T>::new(&[(y, op)])?;
        let mut g = Graph::eval(store);
        let (p, m) = (g.constant(batch.phit_y.clone()), g.constant(batch.mask.clone()));
        let z0 = self.forward(&mut g, p, m)?;
        ShearedCube::from_tensor(g.value(z0), 0, op.shift_step())
    }
}

/// conv1×1 → conv3×3/2 → global pool → three linear layers → softplus,
/// emitting `K+1` values of `α` followed by `K+1` values of `β`.
///
/// [`EstimatorNet::POSITIVE_FLOOR`] is added after the softplus, which
/// underflows to zero for raw values below about −745.
#[derive(Clone, Debug)]
pub struct EstimatorNet {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc: [Linear; 3],
    pub stages: usize,
    pub activation: Activation,
}

impl EstimatorNet {
    pub const POSITIVE_FLOOR: f64 = 1e-6;

    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        bands: usize,
        hidden: usize,
        stages: usize,
        rng: &mut R,
    ) -> Self {
        let p = |s: &str| format!("{name}/{s}");
        Self {
            conv1: Conv2d::new(store, &p("conv1"), 1, bands, hidden, ConvSpec::standard(1, 0), true, rng),
            conv2: Conv2d::new(store, &p("conv2"), 3, hidden, hidden, ConvSpec::standard(2, 1), true, rng),
            fc: [
                Linear::new(store, &p("fc1"), hidden, hidden, rng),
                Linear::new(store, &p("fc2"), hidden, hidden, rng),
                Linear::new(store, &p("fc3"), hidden, 2 * (stages + 1), rng),
            ],
            stages,
            activation: Activation::Gelu,
        }
    }

    pub fn outputs(&self) -> usize {
        2 * (self.stages + 1)
    }

    /// `(α, β)`, each `N×1×1×(K+1)` and strictly positive.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, z0: Var) -> Result<(Var, Var)> {
        let n = g.shape(z0)[0];
        let act = self.activation;
        let h = self.conv1.forward(g, z0)?;
        let h = act.apply(g, h);
        let h = self.conv2.forward(g, h)?;
        let h = act.apply(g, h);
        let h = g.global_avg_pool(h)?;
        let width = g.shape(h)[3];
        let mut h = g.reshape(h, &[n, width])?;
        for (i, fc) in self.fc.iter().enumerate() {
            h = fc.forward(g, h)?;
            if i < 2 {
                h = act.apply(g, h);
            }
        }
        let h = g.softplus(h);
        let h = g.add_scalar(h, T::lit(Self::POSITIVE_FLOOR));
        let h = g.reshape(h, &[n, 1, 1, self.outputs()])?;
        let k1 = self.stages + 1;
        Ok((g.slice_channels(h, 0, k1)?, g.slice_channels(h, k1, k1)?))
    }

    /// `K+1` positive `(α, β)` pairs for one `z⁰`; `gamma` is left empty.
    pub fn estimate<T: Real>(&self, store: &ParamStore<T>, z0: &ShearedCube, stages: usize) -> Result<StageParams> {
        if stages != self.stages {
            return Err(Error::Config(format!("estimator built for {} stages, asked for {stages}", self.stages)));
        }
        let mut g = Graph::eval(store);
        let z = g.constant(z0.to_tensor());
        let (a, b) = self.forward(&mut g, z)?;
        let read = |v: Var| g.value(v).data().iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>();
        Ok(StageParams {
            alpha: read(a),
            beta: read(b),
            gamma: Vec::new(),
        })
    }
}

/// Measurements and operators of a batch as `N×H×W′×·` tensors.
#[derive(Clone, Debug)]
pub struct SensingBatch<T> {
    pub y: Tensor<T>,
    pub phit_y: Tensor<T>,
    pub mask: Tensor<T>,
    pub delta: Tensor<T>,
    /// `1/δ`, zero where `δ = 0`.
    pub delta_inv: Tensor<T>,
    pub shift_step: usize,
    pub width: usize,
}

fn stack<T: Real>(parts: Vec<Tensor<T>>) -> Tensor<T> {
    let mut shape = parts[0].shape().to_vec();
    shape[0] = parts.len();
    let data = parts.into_iter().flat_map(|t| t.into_data()).collect();
    Tensor::from_vec(shape, data).expect("equal extents")
}

impl<T: Real> SensingBatch<T> {
    pub fn new(samples: &[(&Measurement, &SensingOperator)]) -> Result<Self> {
        let Some(&(_, first)) = samples.first() else {
            return Err(Error::Usage("empty sensing batch".into()));
        };
        let dims = first.sheared_dim();
        let (mut ys, mut phis, mut masks, mut deltas) = (vec![], vec![], vec![], vec![]);
        for &(y, op) in samples {
            if op.sheared_dim() != dims || op.shift_step() != first.shift_step() {
                return Err(Error::shape("SensingBatch", format!("sample extents {:?} differ from {:?}", op.sheared_dim(), dims)));
            }
            op.check_measurement(y, "SensingBatch")?;
            ys.push(y.to_tensor());
            phis.push(apply_phi_t(y, op)?.to_tensor());
            let (h, ws, n) = dims;
            masks.push(Tensor::from_vec(vec![1, h, ws, n], op.shifted_mask().iter().map(|&v| T::lit(v)).collect())?);
            deltas.push(Tensor::from_vec(vec![1, h, ws, 1], op.delta().iter().map(|&v| T::lit(v)).collect())?);
        }
        let delta = stack(deltas);
        let delta_inv = delta.map(|d| if d > T::zero() { T::one() / d } else { T::zero() });
        Ok(Self {
            y: stack(ys),
            phit_y: stack(phis),
            mask: stack(masks),
            delta,
            delta_inv,
            shift_step: first.shift_step(),
            width: first.width(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_gap(&self) -> Result<()> {
        for (i, (&d, &y)) in self.delta.data().iter().zip(self.y.data()).enumerate() {
            if d == T::zero() && y != T::zero() {
                return Err(Error::Singular(format!("δ = 0 with nonzero measurement at flat index {i}")));
            }
        }
        Ok(())
    }
}

struct BatchVars {
    y: Var,
    mask: Var,
    delta: Var,
    delta_inv: Var,
}

/// Graph nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct UnfoldTrace {
    pub z0: Var,
    /// `(x, z)` after every stage.
    pub stages: Vec<(Var, Var)>,
    pub output: Var,
    pub alpha: Option<Var>,
    pub beta: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct UnfoldingNet {
    pub config: UnfoldConfig,
    pub init: InitialNetwork,
    pub estimator: Option<EstimatorNet>,
    pub denoisers: Vec<CmFormer>,
    pub gamma: Vec<ParamId>,
}

impl UnfoldingNet {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: &UnfoldConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let k = config.stages;
        let init = InitialNetwork::new(store, "init", config.bands, rng);
        let estimator = config
            .needs_estimator()
            .then(|| EstimatorNet::new(store, "estimator", config.bands, config.estimator_hidden, k, rng));
        let denoisers = (0..k)
            .map(|i| CmFormer::new(store, &format!("stage{i}"), config.bands, &config.denoiser, rng))
            .collect::<Result<Vec<_>>>()?;
        let gamma = if config.framework == FrameworkKind::R2Admm {
            (0..k)
                .map(|i| {
                    let v = Tensor::full(&[1], T::lit(config.gamma_init));
                    let name = format!("gamma{i}");
                    if config.groups.gamma {
                        store.add(name, v)
                    } else {
                        store.add_frozen(name, v)
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            config: config.clone(),
            init,
            estimator,
            denoisers,
            gamma,
        })
    }

    pub fn stages(&self) -> usize {
        self.config.stages
    }

    fn projection<T: Real>(&self, g: &mut Graph<'_, T>, b: &BatchVars, r: Var, alpha: Var) -> Result<Var> {
        let prod = g.mul(b.mask, r)?;
        let phi_r = g.sum_channels(prod);
        let res = g.sub(b.y, phi_r)?;
        let q = if self.config.framework == FrameworkKind::Gap {
            g.mul(res, b.delta_inv)?
        } else {
            let den = g.add(b.delta, alpha)?;
            g.div(res, den)?
        };
        let corr = g.mul(b.mask, q)?;
        g.add(r, corr)
    }

    fn stage_scalar<T: Real>(&self, g: &mut Graph<'_, T>, learned: Option<Var>, i: usize, fixed: f64, n: usize) -> Result<Var> {
        match learned {
            Some(v) => g.slice_channels(v, i, 1),
            None => Ok(g.constant(Tensor::full(&[n, 1, 1, 1], T::lit(fixed)))),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, batch: &SensingBatch<T>) -> Result<UnfoldTrace> {
        let kind = self.config.framework;
        if kind == FrameworkKind::Gap {
            batch.check_gap()?;
        }
        let [n, _, _, c] = batch.mask.dims4("unfolding")?;
        if c != self.config.bands {
            return Err(Error::dim("unfolding", "bands", self.config.bands, c));
        }
        let b = BatchVars {
            y: g.constant(batch.y.clone()),
            mask: g.constant(batch.mask.clone()),
            delta: g.constant(batch.delta.clone()),
            delta_inv: g.constant(batch.delta_inv.clone()),
        };
        let phit_y = g.constant(batch.phit_y.clone());
        let z0 = self.init.forward(g, phit_y, b.mask)?;
        let (alpha, beta) = match &self.estimator {
            Some(e) => {
                let (a, be) = e.forward(g, z0)?;
                (self.config.groups.alpha.then_some(a), self.config.groups.beta.then_some(be))
            }
            None => (None, None),
        };
        let mut z = z0;
        let mut u: Option<Var> = None;
        let mut stages = Vec::with_capacity(self.stages());
        for (i, den) in self.denoisers.iter().enumerate() {
            let a = self.stage_scalar(g, alpha, i, self.config.fixed_alpha, n)?;
            let be = self.stage_scalar(g, beta, i, self.config.fixed_beta, n)?;
            let step = |g: &mut Graph<'_, T>, z: Var, u: &mut Option<Var>| -> Result<(Var, Var)> {
                Ok(match kind {
                    FrameworkKind::Hqs | FrameworkKind::Gap => {
                        let x = self.projection(g, &b, z, a)?;
                        (x, den.forward_padded(g, x, be)?)
                    }
                    FrameworkKind::Admm | FrameworkKind::R2Admm => {
                        let r = match *u {
                            Some(u) => g.add(z, u)?,
                            None => z,
                        };
                        let x = self.projection(g, &b, r, a)?;
                        let v = match *u {
                            Some(u) => g.sub(x, u)?,
                            None => x,
                        };
                        let z = den.forward_padded(g, v, be)?;
                        let diff = g.sub(x, z)?;
                        let scaled = if kind == FrameworkKind::Admm {
                            diff
                        } else {
                            let gamma = g.param(self.gamma[i]);
                            let gamma = g.reshape(gamma, &[1, 1, 1, 1])?;
                            g.mul(diff, gamma)?
                        };
                        *u = Some(match *u {
                            Some(u) => g.sub(u, scaled)?,
                            None => g.neg(scaled),
                        });
                        (x, z)
                    }
                    FrameworkKind::PlainStack => {
                        let z = den.forward_padded(g, z, be)?;
                        (z, z)
                    }
                })
            };
            let (x, zn) = step(g, z, &mut u).map_err(|e| e.at_stage(i))?;
            stages.push((x, zn));
            z = zn;
        }
        Ok(UnfoldTrace {
            z0,
            stages,
            output: z,
            alpha,
            beta,
        })
    }

    /// Sheared reconstruction for one measurement (evaluation mode).
    pub fn reconstruct<T: Real>(&self, store: &ParamStore<T>, y: &Measurement, op: &SensingOperator) -> Result<ShearedCube> {
        let batch = SensingBatch::new(&[(y, op)])?;
        let mut g = Graph::eval(store);
        let trace = self.forward(&mut g, &batch)?;
        ShearedCube::from_tensor(g.value(trace.output), 0, op.shift_step())
    }

    /// The stage scalars this network would use for `z0`, in the form taken
    /// by the fixed-parameter solver.
    pub fn stage_params<T: Real>(&self, store: &ParamStore<T>, z0: &ShearedCube) -> Result<StageParams> {
        let k = self.stages();
        let est = match &self.estimator {
            Some(e) => Some(e.estimate(store, z0, k)?),
            None => None,
        };
        let pick = |on: bool, fixed: f64, vals: Option<&Vec<f64>>| match (on, vals) {
            (true, Some(v)) => v.clone(),
            _ => vec![fixed; k],
        };
        Ok(StageParams {
            alpha: pick(self.config.groups.alpha, self.config.fixed_alpha, est.as_ref().map(|e| &e.alpha)),
            beta: pick(self.config.groups.beta, self.config.fixed_beta, est.as_ref().map(|e| &e.beta)),
            gamma: self.gamma.iter().map(|&id| store.get(id).value.data()[0].to_f64_lossy()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cassi::{forward, CodedMask, HsiCube};
    use crate::denoisers::CmFormerDenoiser;
    use crate::nn::gradcheck::{check_gradients, GradCheckOptions};
    use crate::unfolding::{run_unfold, UnfoldOptions};
    use ndarray::Array3;

    fn scene(h: usize, w: usize, n: usize, d: usize, seed: u64) -> (HsiCube, Measurement, SensingOperator) {
        let mut rng = crate::seeded_rng(seed);
        let cube = HsiCube::new(Array3::from_shape_simple_fn((h, w, n), || rng.random())).unwrap();
        let mask = CodedMask::random_binary(h, w, d, 0.5, &mut rng);
        let y = forward(&cube, &mask).unwrap();
        let op = SensingOperator::new(&mask, n).unwrap();
        (cube, y, op)
    }

    #[test]
    fn initial_network_identity_weights_give_phit_y() {
        let (_, y, op) = scene(4, 6, 3, 1, 1);
        let mut store = ParamStore::<f64>::new();
        let init = InitialNetwork::new(&mut store, "init", 3, &mut crate::seeded_rng(0));
        store.get_mut(init.conv.weight).value = Tensor::from_fn(&[1, 1, 6, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        let z0 = init.apply(&store, &y, &op).unwrap();
        assert_eq!(z0, apply_phi_t(&y, &op).unwrap());
        assert_eq!(z0.dim(), op.sheared_dim());
    }

    #[test]
    fn initial_network_gradcheck() {
        let mut store = ParamStore::<f64>::new();
        let init = InitialNetwork::new(&mut store, "init", 2, &mut crate::seeded_rng(0));
        let mut rng = crate::seeded_rng(2);
        let inputs = [Tensor::from_fn(&[1, 3, 5, 2], |_| rng.random()), Tensor::from_fn(&[1, 3, 5, 2], |_| rng.random())];
        let r = check_gradients(&mut store, &inputs, &GradCheckOptions::default(), |g, v| init.forward(g, v[0], v[1])).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn estimator_zero_head_gives_ln2() {
        let mut store = ParamStore::<f64>::new();
        let est = EstimatorNet::new(&mut store, "e", 2, 8, 3, &mut crate::seeded_rng(0));
        for id in [est.fc[2].weight, est.fc[2].bias] {
            let p = store.get_mut(id);
            p.value = Tensor::zeros(p.value.shape());
        }
        let (_, y, op) = scene(4, 5, 2, 1, 3);
        let params = est.estimate(&store, &apply_phi_t(&y, &op).unwrap(), 3).unwrap();
        assert_eq!(params.alpha.len(), 4);
        assert_eq!(est.outputs(), 8);
        for v in params.alpha.iter().chain(&params.beta) {
            assert!((v - std::f64::consts::LN_2 - EstimatorNet::POSITIVE_FLOOR).abs() < 1e-15);
        }
        assert!(matches!(est.estimate(&store, &apply_phi_t(&y, &op).unwrap(), 2), Err(Error::Config(_))));
    }

    #[test]
    fn estimator_outputs_positive() {
        let mut store = ParamStore::<f64>::new();
        let est = EstimatorNet::new(&mut store, "e", 2, 8, 2, &mut crate::seeded_rng(0));
        // large weights push raw outputs far from zero
        for p in store.iter_mut() {
            p.value = p.value.map(|v| v * 200.0);
        }
        let mut rng = crate::seeded_rng(4);
        for _ in 0..1000 {
            let z0 = ShearedCube::new(Array3::from_shape_simple_fn((3, 5, 2), || rng.random_range(-5.0..5.0)), 1).unwrap();
            let p = est.estimate(&store, &z0, 2).unwrap();
            assert!(p.alpha.iter().chain(&p.beta).all(|&v| v > 0.0));
        }
    }

    #[test]
    fn estimator_gradcheck_and_gradient_flow() {
        let mut store = ParamStore::<f64>::new();
        let est = EstimatorNet::new(&mut store, "e", 2, 6, 2, &mut crate::seeded_rng(0));
        let mut rng = crate::seeded_rng(5);
        let input = Tensor::from_fn(&[2, 4, 6, 2], |_| rng.random());
        let r = check_gradients(&mut store, &[input], &GradCheckOptions::default(), |g, v| {
            let (a, b) = est.forward(g, v[0])?;
            g.concat_channels(&[a, b])
        })
        .unwrap();
        assert!(r.passes(1e-4), "{r:?}");
        for id in [est.conv1.weight, est.conv2.weight, est.fc[0].weight, est.fc[2].weight] {
            assert!(store.get(id).grad.max_abs() > 0.0);
        }
    }

    fn plain_equivalent(kind: FrameworkKind, gamma: f64) {
        let (_, y, op) = scene(5, 6, 2, 2, 6);
        let mut cfg = UnfoldConfig::tiny(kind, 2);
        cfg.bands = 2;
        let mut store = ParamStore::<f64>::new();
        let net = UnfoldingNet::new(&mut store, &cfg, &mut crate::seeded_rng(7)).unwrap();
        for &id in &net.gamma {
            store.get_mut(id).value = Tensor::full(&[1], gamma);
        }
        let tape_out = net.reconstruct(&store, &y, &op).unwrap();
        let z0 = net.init.apply(&store, &y, &op).unwrap();
        let params = net.stage_params(&store, &z0).unwrap();
        let dens: Vec<_> = net.denoisers.iter().map(|d| CmFormerDenoiser::new(d.clone(), store.clone())).collect();
        let plain = run_unfold(kind, 2, &dens, &y, &op, &params, z0, UnfoldOptions::default()).unwrap();
        let scale = plain.output.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dev = crate::unfolding::distance(&plain.output, &tape_out);
        assert!(dev <= 1e-12 * scale.max(1.0) * 10.0, "{kind}: deviation {dev}");
    }

    #[test]
    fn tape_forward_matches_plain_solver() {
        plain_equivalent(FrameworkKind::Hqs, 0.0);
        plain_equivalent(FrameworkKind::Admm, 0.0);
        plain_equivalent(FrameworkKind::R2Admm, 0.37);
        plain_equivalent(FrameworkKind::PlainStack, 0.0);
    }

    #[test]
    fn tape_r2admm_with_zero_gamma_is_hqs() {
        let (_, y, op) = scene(4, 6, 4, 2, 8);
        let mut outs = Vec::new();
        for kind in [FrameworkKind::R2Admm, FrameworkKind::Hqs] {
            let mut store = ParamStore::<f64>::new();
            let net = UnfoldingNet::new(&mut store, &UnfoldConfig::tiny(kind, 3), &mut crate::seeded_rng(9)).unwrap();
            outs.push(net.reconstruct(&store, &y, &op).unwrap());
        }
        // γ parameters are registered last, so both draws share all other weights
        assert_eq!(outs[0], outs[1]);
    }

    #[test]
    fn zero_stage_network_returns_initial_value() {
        let (_, y, op) = scene(4, 4, 4, 2, 10);
        let mut store = ParamStore::<f64>::new();
        let net = UnfoldingNet::new(&mut store, &UnfoldConfig::tiny(FrameworkKind::R2Admm, 0), &mut crate::seeded_rng(0)).unwrap();
        assert!(net.estimator.is_none());
        assert_eq!(net.reconstruct(&store, &y, &op).unwrap(), net.init.apply(&store, &y, &op).unwrap());
    }

    #[test]
    fn frozen_gamma_group() {
        let mut cfg = UnfoldConfig::tiny(FrameworkKind::R2Admm, 2);
        cfg.groups.gamma = false;
        cfg.gamma_init = 0.5;
        let mut store = ParamStore::<f64>::new();
        let net = UnfoldingNet::new(&mut store, &cfg, &mut crate::seeded_rng(0)).unwrap();
        for &id in &net.gamma {
            assert!(!store.get(id).trainable);
            assert_eq!(store.get(id).value.data(), &[0.5]);
        }
    }

    #[test]
    fn full_parameter_budget() {
        let mut store = ParamStore::<f32>::new();
        UnfoldingNet::new(&mut store, &UnfoldConfig::default(), &mut crate::seeded_rng(0)).unwrap();
        // denoiser 730_604, initial network 1_596, estimator 47_364, one γ
        assert_eq!(store.num_scalars(), 730_604 + 1_596 + 47_364 + 1);
    }

    #[test]
    fn two_stage_network_gradcheck() {
        let (_, y, op) = scene(8, 8, 2, 1, 11);
        let mut cfg = UnfoldConfig::tiny(FrameworkKind::R2Admm, 2);
        cfg.bands = 2;
        cfg.shift_step = 1;
        let mut store = ParamStore::<f64>::new();
        let net = UnfoldingNet::new(&mut store, &cfg, &mut crate::seeded_rng(12)).unwrap();
        for (i, &id) in net.gamma.iter().enumerate() {
            store.get_mut(id).value = Tensor::full(&[1], 0.3 + 0.2 * i as f64);
        }
        let batch = SensingBatch::<f64>::new(&[(&y, &op)]).unwrap();
        let opts = GradCheckOptions { max_entries: 6, ..Default::default() };
        let r = check_gradients(&mut store, &[], &opts, |g, _| Ok(net.forward(g, &batch)?.output)).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }
}
