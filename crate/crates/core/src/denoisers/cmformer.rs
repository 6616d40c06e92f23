//! CMFormer: a three-level U-Net of convolutional-modulation blocks.
//!
//! ```text
//! [z ‖ β] ─conv3×3─ L1 ─down─ L2 ─down─ bottleneck ─up─ ⊕skip─1×1─ L2′ ─up─ ⊕skip─1×1─ L1′ ─conv3×3─ + z
//! ```
//!
//! Widths are `C`, `2C`, `4C`. Every block is a [`Cab`]: pre-norm residual
//! modulation followed by a pre-norm residual feed-forward network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_beta, Denoiser};
use crate::cassi::ShearedCube;
use crate::nn::{Activation, Conv2d, ConvSpec, Graph, LayerNorm, ParamInfo, ParamStore, Real, Tensor, Var};
use crate::{Error, Result};

/// Feed-forward variants. `NoDw` drops the depthwise 3×3, `PointwiseOnly`
/// replaces it with a dense 1×1, `None` removes the FFN (and its norm).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FfnVariant {
    #[default]
    Full,
    None,
    NoDw,
    #[serde(rename = "pw-only")]
    PointwiseOnly,
}

impl FfnVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::None => "none",
            Self::NoDw => "no-dw",
            Self::PointwiseOnly => "pw-only",
        }
    }
}

impl std::fmt::Display for FfnVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FfnVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "none" => Ok(Self::None),
            "no-dw" => Ok(Self::NoDw),
            "pw-only" => Ok(Self::PointwiseOnly),
            _ => Err(Error::Config(format!("unknown FFN variant `{s}` (expected full, none, no-dw or pw-only)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmFormerConfig {
    pub channels: usize,
    /// CAB counts of encoder level 1, level 2 and the bottleneck. The
    /// decoder mirrors the encoder.
    pub blocks: [usize; 3],
    pub kernel_size: usize,
    /// Hidden width factor of the FFN. 4 puts the one-stage model at
    /// ≈0.78M parameters; 2 would give ≈0.58M.
    pub ffn_expansion: usize,
    pub ffn: FfnVariant,
    /// Drop-path rate of encoder and decoder blocks.
    pub drop_path: f64,
    /// Drop-path rate of bottleneck blocks.
    pub bottleneck_drop_path: f64,
    pub activation: Activation,
}

impl Default for CmFormerConfig {
    fn default() -> Self {
        Self {
            channels: 28,
            blocks: [1, 1, 3],
            kernel_size: 7,
            ffn_expansion: 4,
            ffn: FfnVariant::Full,
            drop_path: 0.0,
            bottleneck_drop_path: 0.0,
            activation: Activation::Gelu,
        }
    }
}

impl CmFormerConfig {
    /// A narrow variant for tests and desk-scale runs.
    pub fn tiny() -> Self {
        Self {
            channels: 8,
            blocks: [1, 1, 1],
            kernel_size: 3,
            ffn_expansion: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("CMFormer needs at least one channel".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.kernel_size)));
        }
        if self.blocks.contains(&0) {
            return Err(Error::Config(format!("every level needs at least one block, got {:?}", self.blocks)));
        }
        if self.ffn_expansion == 0 {
            return Err(Error::Config("FFN expansion must be at least 1".into()));
        }
        for rate in [self.drop_path, self.bottleneck_drop_path] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("drop-path rate {rate} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn with_drop_path_for_stages(mut self, stages: usize) -> Self {
        (self.drop_path, self.bottleneck_drop_path) = drop_path_rates(stages);
        self
    }
}

/// `(encoder/decoder, bottleneck)` drop-path rates for a `stages`-stage
/// model. Counts between table rows use the row below.
pub fn drop_path_rates(stages: usize) -> (f64, f64) {
    const TABLE: [(usize, f64, f64); 6] = [(1, 0.0, 0.0), (2, 0.1, 0.1), (3, 0.1, 0.2), (5, 0.1, 0.2), (9, 0.0, 0.3), (13, 0.1, 0.2)];
    TABLE
        .iter()
        .rev()
        .find(|(s, ..)| *s <= stages)
        .map_or((0.0, 0.0), |&(_, c, b)| (c, b))
}

/// `W₃(DW_k(W₁X) ⊙ W₂X)`.
#[derive(Clone, Debug)]
pub struct Cmb {
    pub w1: Conv2d,
    pub dw: Conv2d,
    pub w2: Conv2d,
    pub w3: Conv2d,
}

impl Cmb {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c: usize, k: usize, rng: &mut R) -> Self {
        let pw = ConvSpec::standard(1, 0);
        Self {
            w1: Conv2d::new(store, &format!("{name}/w1"), 1, c, c, pw, true, rng),
            dw: Conv2d::new(store, &format!("{name}/dw"), k, c, c, ConvSpec::depthwise_same(k), true, rng),
            w2: Conv2d::new(store, &format!("{name}/w2"), 1, c, c, pw, true, rng),
            w3: Conv2d::new(store, &format!("{name}/w3"), 1, c, c, pw, true, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let a = self.w1.forward(g, x)?;
        let a = self.dw.forward(g, a)?;
        let v = self.w2.forward(g, x)?;
        let m = g.mul(a, v)?;
        self.w3.forward(g, m)
    }
}

/// Expand → (depthwise 3×3 | 1×1 | nothing) → activation → project.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub expand: Conv2d,
    pub mid: Option<Conv2d>,
    pub project: Conv2d,
    pub activation: Activation,
}

impl Ffn {
    /// `None` for [`FfnVariant::None`].
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        cfg: &CmFormerConfig,
        rng: &mut R,
    ) -> Option<Self> {
        let hidden = c * cfg.ffn_expansion;
        let pw = ConvSpec::standard(1, 0);
        if cfg.ffn == FfnVariant::None {
            return None;
        }
        let expand = Conv2d::new(store, &format!("{name}/expand"), 1, c, hidden, pw, true, rng);
        let mid = match cfg.ffn {
            FfnVariant::Full => Some(Conv2d::new(store, &format!("{name}/dw"), 3, hidden, hidden, ConvSpec::depthwise_same(3), true, rng)),
            FfnVariant::PointwiseOnly => Some(Conv2d::new(store, &format!("{name}/pw"), 1, hidden, hidden, pw, true, rng)),
            FfnVariant::NoDw | FfnVariant::None => None,
        };
        let project = Conv2d::new(store, &format!("{name}/project"), 1, hidden, c, pw, true, rng);
        Some(Self {
            expand,
            mid,
            project,
            activation: cfg.activation,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut h = self.expand.forward(g, x)?;
        if let Some(mid) = &self.mid {
            h = mid.forward(g, h)?;
        }
        let h = self.activation.apply(g, h);
        self.project.forward(g, h)
    }
}

/// `Y = X + DropPath(CMB(LN(X)))`, then `Y + DropPath(FFN(LN(Y)))`.
#[derive(Clone, Debug)]
pub struct Cab {
    pub norm1: LayerNorm,
    pub cmb: Cmb,
    pub ffn: Option<(LayerNorm, Ffn)>,
    pub drop_path: f64,
}

impl Cab {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        cfg: &CmFormerConfig,
        drop_path: f64,
        rng: &mut R,
    ) -> Self {
        let norm1 = LayerNorm::new(store, &format!("{name}/norm1"), c);
        let cmb = Cmb::new(store, &format!("{name}/cmb"), c, cfg.kernel_size, rng);
        let ffn = (cfg.ffn != FfnVariant::None).then(|| {
            let norm2 = LayerNorm::new(store, &format!("{name}/norm2"), c);
            (norm2, Ffn::new(store, &format!("{name}/ffn"), c, cfg, rng).expect("variant has an FFN"))
        });
        Self { norm1, cmb, ffn, drop_path }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, x)?;
        let h = self.cmb.forward(g, h)?;
        let h = g.drop_path(h, self.drop_path)?;
        let y = g.add(x, h)?;
        let Some((norm2, ffn)) = &self.ffn else {
            return Ok(y);
        };
        let h = norm2.forward(g, y)?;
        let h = ffn.forward(g, h)?;
        let h = g.drop_path(h, self.drop_path)?;
        g.add(y, h)
    }
}

fn cab_stack<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    n: usize,
    c: usize,
    cfg: &CmFormerConfig,
    rate: f64,
    rng: &mut R,
) -> Vec<Cab> {
    (0..n).map(|i| Cab::new(store, &format!("{name}/cab{i}"), c, cfg, rate, rng)).collect()
}

fn run_stack<T: Real>(blocks: &[Cab], g: &mut Graph<'_, T>, mut x: Var) -> Result<Var> {
    for b in blocks {
        x = b.forward(g, x)?;
    }
    Ok(x)
}

#[derive(Clone, Debug)]
pub struct CmFormer {
    pub config: CmFormerConfig,
    pub bands: usize,
    prefix: String,
    embed: Conv2d,
    encoder: [Vec<Cab>; 2],
    down: [Conv2d; 2],
    bottleneck: Vec<Cab>,
    up: [Conv2d; 2],
    fuse: [Conv2d; 2],
    decoder: [Vec<Cab>; 2],
    head: Conv2d,
}

impl CmFormer {
    /// Registers all weights in `store` under `prefix`.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        bands: usize,
        config: &CmFormerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if bands == 0 {
            return Err(Error::Config("CMFormer needs at least one band".into()));
        }
        let c = config.channels;
        let [n1, n2, n3] = config.blocks;
        let (dp, bdp) = (config.drop_path, config.bottleneck_drop_path);
        let p = |s: &str| format!("{prefix}/{s}");
        let down_spec = ConvSpec::standard(2, 1);
        let up_spec = ConvSpec::transposed(2, 0);
        let pw = ConvSpec::standard(1, 0);

        let embed = Conv2d::new(store, &p("embed"), 3, bands + 1, c, ConvSpec::standard(1, 1), false, rng);
        let enc1 = cab_stack(store, &p("enc1"), n1, c, config, dp, rng);
        let down1 = Conv2d::new(store, &p("down1"), 4, c, 2 * c, down_spec, false, rng);
        let enc2 = cab_stack(store, &p("enc2"), n2, 2 * c, config, dp, rng);
        let down2 = Conv2d::new(store, &p("down2"), 4, 2 * c, 4 * c, down_spec, false, rng);
        let bottleneck = cab_stack(store, &p("bottleneck"), n3, 4 * c, config, bdp, rng);
        let up2 = Conv2d::new(store, &p("up2"), 2, 4 * c, 2 * c, up_spec, false, rng);
        let fuse2 = Conv2d::new(store, &p("fuse2"), 1, 4 * c, 2 * c, pw, false, rng);
        let dec2 = cab_stack(store, &p("dec2"), n2, 2 * c, config, dp, rng);
        let up1 = Conv2d::new(store, &p("up1"), 2, 2 * c, c, up_spec, false, rng);
        let fuse1 = Conv2d::new(store, &p("fuse1"), 1, 2 * c, c, pw, false, rng);
        let dec1 = cab_stack(store, &p("dec1"), n1, c, config, dp, rng);
        let head = Conv2d::new(store, &p("head"), 3, c, bands, ConvSpec::standard(1, 1), false, rng);
        Ok(Self {
            config: config.clone(),
            bands,
            prefix: prefix.to_string(),
            embed,
            encoder: [enc1, enc2],
            down: [down1, down2],
            bottleneck,
            up: [up1, up2],
            fuse: [fuse1, fuse2],
            decoder: [dec1, dec2],
            head,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn head(&self) -> &Conv2d {
        &self.head
    }

    /// Parameters registered by this network, in registration order.
    pub fn parameters<T: Real>(&self, store: &ParamStore<T>) -> Vec<ParamInfo> {
        let scope = format!("{}/", self.prefix);
        store.infos().into_iter().filter(|p| p.name.starts_with(&scope)).collect()
    }

    /// `z`: `N×H×W×Nλ` with `H`, `W` divisible by 4; `beta`: `N×1×1×1`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, z: Var, beta: Var) -> Result<Var> {
        let [n, h, w, c] = g.value(z).dims4("cmformer")?;
        if c != self.bands {
            return Err(Error::dim("cmformer", "bands", self.bands, c));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape(
                "cmformer",
                format!(
                    "extents {h}×{w} must be divisible by 4; pad by {}×{} (bottom×right)",
                    (4 - h % 4) % 4,
                    (4 - w % 4) % 4
                ),
            ));
        }
        let bmap = g.broadcast_to(beta, &[n, h, w, 1])?;
        let input = g.concat_channels(&[z, bmap])?;
        let x0 = self.embed.forward(g, input)?;
        let s1 = run_stack(&self.encoder[0], g, x0)?;
        let x = self.down[0].forward(g, s1)?;
        let s2 = run_stack(&self.encoder[1], g, x)?;
        let x = self.down[1].forward(g, s2)?;
        let x = run_stack(&self.bottleneck, g, x)?;

        let x = self.up[1].forward(g, x)?;
        let x = g.concat_channels(&[x, s2])?;
        let x = self.fuse[1].forward(g, x)?;
        let x = run_stack(&self.decoder[1], g, x)?;
        let x = self.up[0].forward(g, x)?;
        let x = g.concat_channels(&[x, s1])?;
        let x = self.fuse[0].forward(g, x)?;
        let x = run_stack(&self.decoder[0], g, x)?;
        let out = self.head.forward(g, x)?;
        g.add(out, z)
    }

    /// [`CmFormer::forward`] for any extents: zero-pads bottom/right to a
    /// multiple of 4 and crops the result back.
    pub fn forward_padded<T: Real>(&self, g: &mut Graph<'_, T>, z: Var, beta: Var) -> Result<Var> {
        let [_, h, w, _] = g.value(z).dims4("cmformer")?;
        let (ph, pw) = (h.next_multiple_of(4), w.next_multiple_of(4));
        if (ph, pw) == (h, w) {
            return self.forward(g, z, beta);
        }
        let padded = g.pad_hw(z, ph, pw)?;
        let out = self.forward(g, padded, beta)?;
        g.crop_hw(out, h, w)
    }
}

/// Frozen-weight CMFormer behind the [`Denoiser`] interface.
#[derive(Clone, Debug)]
pub struct CmFormerDenoiser {
    pub net: CmFormer,
    pub store: ParamStore<f64>,
}

impl CmFormerDenoiser {
    pub fn new(net: CmFormer, store: ParamStore<f64>) -> Self {
        Self { net, store }
    }

    pub fn random<R: Rng + ?Sized>(bands: usize, config: &CmFormerConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = CmFormer::new(&mut store, "denoiser", bands, config, rng)?;
        Ok(Self { net, store })
    }
}

impl Denoiser for CmFormerDenoiser {
    fn apply(&self, v: &ShearedCube, beta: f64) -> Result<ShearedCube> {
        check_beta(beta)?;
        let mut g = Graph::eval(&self.store);
        let z = g.constant(v.to_tensor::<f64>());
        let b = g.constant(Tensor::full(&[1, 1, 1, 1], beta));
        let out = self.net.forward_padded(&mut g, z, b)?;
        ShearedCube::from_tensor(g.value(out), 0, v.shift_step())
    }

    fn parameters(&self) -> Vec<ParamInfo> {
        self.net.parameters(&self.store)
    }

    fn name(&self) -> &str {
        "cmformer"
    }
}
