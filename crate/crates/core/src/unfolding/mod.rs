//! Unfolded splitting solvers.
//!
//! Every framework alternates a closed-form data step `L` and a prior step
//! `D`:
//!
//! | kind        | data step            | prior step     | dual            |
//! |-------------|----------------------|----------------|-----------------|
//! | HQS         | `x = L(y, z, α)`     | `z = D(x, β)`  | none            |
//! | ADMM        | `x = L(y, z+u, α)`   | `z = D(x−u, β)`| `u -= (x−z)`    |
//! | R2ADMM      | `x = L(y, z+u, α)`   | `z = D(x−u, β)`| `u -= γ(x−z)`   |
//! | GAP         | `x = L₀(y, z)`       | `z = D(x, β)`  | none            |
//! | PlainStack  | none                 | `z = D(z, β)`  | none            |
//!
//! with `L(y, r, α) = r + Φᵀ[(y − Φr) / (α + δ)]` and `L₀` the same with the
//! denominator `δ`. The result is the last `z`.
//!
//! [`run_unfold`] drives fixed parameters and any [`Denoiser`];
//! [`UnfoldingNet`] is the trainable counterpart on the autodiff tape.

mod learned;

pub use learned::{EstimatorNet, InitialNetwork, ParamGroups, SensingBatch, UnfoldConfig, UnfoldTrace, UnfoldingNet};

use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::cassi::{apply_phi, apply_phi_t, unshift_cube, HsiCube, Measurement, SensingOperator, ShearedCube};
use crate::denoisers::Denoiser;
use crate::metrics::psnr;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameworkKind {
    Hqs,
    Admm,
    R2Admm,
    Gap,
    #[serde(rename = "plain")]
    PlainStack,
}

impl FrameworkKind {
    pub const ALL: [FrameworkKind; 5] = [Self::Hqs, Self::Admm, Self::R2Admm, Self::Gap, Self::PlainStack];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hqs => "hqs",
            Self::Admm => "admm",
            Self::R2Admm => "r2admm",
            Self::Gap => "gap",
            Self::PlainStack => "plain",
        }
    }

    /// Whether the loop carries the dual variable `u`.
    pub fn has_dual(self) -> bool {
        matches!(self, Self::Admm | Self::R2Admm)
    }

    /// Whether the data step uses `α`.
    pub fn uses_alpha(self) -> bool {
        matches!(self, Self::Hqs | Self::Admm | Self::R2Admm)
    }
}

impl std::fmt::Display for FrameworkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FrameworkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s.to_ascii_lowercase()).ok_or_else(|| {
            let valid: Vec<_> = Self::ALL.iter().map(|k| k.as_str()).collect();
            Error::Usage(format!("unknown framework `{s}`; valid values: {}", valid.join(", ")))
        })
    }
}

/// Per-stage scalars. Stage `i` reads `alpha[i]`, `beta[i]` and `gamma[i]`;
/// longer vectors (the estimator emits `K+1` pairs) are allowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl StageParams {
    pub fn constant(stages: usize, alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            alpha: vec![alpha; stages],
            beta: vec![beta; stages],
            gamma: vec![gamma; stages],
        }
    }

    pub fn validate(&self, kind: FrameworkKind, stages: usize) -> Result<()> {
        let need = |name: &str, len: usize| {
            if len < stages {
                Err(Error::Config(format!("{name} has {len} entries for {stages} stages")))
            } else {
                Ok(())
            }
        };
        need("beta", self.beta.len())?;
        if kind.uses_alpha() {
            need("alpha", self.alpha.len())?;
            if let Some(a) = self.alpha[..stages].iter().find(|a| !(**a > 0.0)) {
                return Err(Error::Domain(format!("α must be positive, got {a}")));
            }
        }
        if kind == FrameworkKind::R2Admm {
            need("gamma", self.gamma.len())?;
        }
        Ok(())
    }

    fn gamma_at(&self, kind: FrameworkKind, i: usize) -> f64 {
        match kind {
            FrameworkKind::Admm => 1.0,
            FrameworkKind::R2Admm => self.gamma[i],
            _ => 0.0,
        }
    }
}

/// Iterates of one stage; `u` stays zero for frameworks without a dual.
#[derive(Clone, Debug, PartialEq)]
pub struct UnfoldState {
    pub x: ShearedCube,
    pub z: ShearedCube,
    pub u: ShearedCube,
}

impl UnfoldState {
    pub fn new(z0: ShearedCube) -> Self {
        let zero = z0.map(|_| 0.0);
        Self {
            x: z0.clone(),
            z: z0,
            u: zero,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageDiagnostics {
    pub stage: usize,
    /// `‖x − z‖₂` after the stage.
    pub primal_residual: f64,
    pub psnr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct UnfoldOutput {
    pub output: ShearedCube,
    /// Initial state followed by the state after every stage, when
    /// requested.
    pub trajectory: Vec<UnfoldState>,
    pub diagnostics: Vec<StageDiagnostics>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UnfoldOptions<'a> {
    pub record_trajectory: bool,
    pub ground_truth: Option<&'a HsiCube>,
}

/// `x = r + Φᵀ[(y − Φr)/(α + δ)]`, which equals `(ΦᵀΦ + αI)⁻¹(Φᵀy + αr)`.
/// GAP ignores `α`; pixels with `δ = 0` then get no correction, and a
/// nonzero residual there is a [`Error::Singular`].
pub fn linear_projection(y: &Measurement, r: &ShearedCube, alpha: f64, op: &SensingOperator, kind: FrameworkKind) -> Result<ShearedCube> {
    op.check_measurement(y, "linear_projection")?;
    let phi_r = apply_phi(r, op)?;
    let residual = y.data() - phi_r.data();
    let delta = op.delta();
    let mut q = Array2::zeros(residual.dim());
    if kind == FrameworkKind::Gap {
        let mut bad = None;
        Zip::indexed(&mut q).and(&residual).and(delta).for_each(|p, q, &res, &d| {
            if d > 0.0 {
                *q = res / d;
            } else if res != 0.0 && bad.is_none() {
                bad = Some((p, res));
            }
        });
        if let Some(((i, j), res)) = bad {
            return Err(Error::Singular(format!("δ = 0 at pixel ({i}, {j}) with residual {res}")));
        }
    } else {
        if !(alpha > 0.0) {
            return Err(Error::Domain(format!("α must be positive, got {alpha}")));
        }
        Zip::from(&mut q).and(&residual).and(delta).for_each(|q, &res, &d| *q = res / (alpha + d));
    }
    let correction = apply_phi_t(&Measurement::new(q), op)?;
    Ok(r.with_data(r.data() + correction.data()))
}

/// `u − γ(x − z)`.
pub fn residual_update(u: &ShearedCube, x: &ShearedCube, z: &ShearedCube, gamma: f64) -> ShearedCube {
    let mut out = u.data().clone();
    Zip::from(&mut out).and(x.data()).and(z.data()).for_each(|o, &x, &z| *o -= gamma * (x - z));
    u.with_data(out)
}

fn add(a: &ShearedCube, b: &ShearedCube) -> ShearedCube {
    a.with_data(a.data() + b.data())
}

fn sub(a: &ShearedCube, b: &ShearedCube) -> ShearedCube {
    a.with_data(a.data() - b.data())
}

pub(crate) fn distance(a: &ShearedCube, b: &ShearedCube) -> f64 {
    Zip::from(a.data()).and(b.data()).fold(0.0, |s, &x, &y| s + (x - y) * (x - y)).sqrt()
}

/// One stage of `kind` on `state`.
pub fn unfold_step<D: Denoiser + ?Sized>(
    kind: FrameworkKind,
    denoiser: &D,
    y: &Measurement,
    op: &SensingOperator,
    state: &UnfoldState,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<UnfoldState> {
    let UnfoldState { z, u, .. } = state;
    Ok(match kind {
        FrameworkKind::Hqs | FrameworkKind::Gap => {
            let x = linear_projection(y, z, alpha, op, kind)?;
            let z = denoiser.apply(&x, beta)?;
            UnfoldState { x, z, u: u.clone() }
        }
        FrameworkKind::Admm | FrameworkKind::R2Admm => {
            let x = linear_projection(y, &add(z, u), alpha, op, kind)?;
            let z = denoiser.apply(&sub(&x, u), beta)?;
            let u = residual_update(u, &x, &z, gamma);
            UnfoldState { x, z, u }
        }
        FrameworkKind::PlainStack => {
            let z = denoiser.apply(z, beta)?;
            UnfoldState { x: z.clone(), z, u: u.clone() }
        }
    })
}

/// Runs `stages` stages from `z0`. `denoisers` holds either one prior shared
/// by all stages or one per stage.
#[allow(clippy::too_many_arguments)]
pub fn run_unfold<D: Denoiser>(
    kind: FrameworkKind,
    stages: usize,
    denoisers: &[D],
    y: &Measurement,
    op: &SensingOperator,
    params: &StageParams,
    z0: ShearedCube,
    opts: UnfoldOptions<'_>,
) -> Result<UnfoldOutput> {
    op.check_measurement(y, "run_unfold")?;
    op.check_sheared(&z0, "run_unfold")?;
    params.validate(kind, stages)?;
    if stages > 0 && denoisers.len() != 1 && denoisers.len() != stages {
        return Err(Error::Config(format!("{} denoisers for {stages} stages (expected 1 or {stages})", denoisers.len())));
    }
    if kind == FrameworkKind::Gap && op.delta().iter().any(|&d| d == 0.0) {
        log::warn!("GAP projection: pixels with δ = 0 receive no correction");
    }
    let mut state = UnfoldState::new(z0);
    let mut trajectory = Vec::new();
    if opts.record_trajectory {
        trajectory.push(state.clone());
    }
    let mut diagnostics = Vec::with_capacity(stages);
    for i in 0..stages {
        let den = &denoisers[if denoisers.len() == 1 { 0 } else { i }];
        let alpha = params.alpha.get(i).copied().unwrap_or(0.0);
        state = unfold_step(kind, den, y, op, &state, alpha, params.beta[i], params.gamma_at(kind, i)).map_err(|e| e.at_stage(i))?;
        let psnr = match opts.ground_truth {
            Some(gt) => Some(psnr(gt, &unshift_cube(&state.z), 1.0).map_err(|e| e.at_stage(i))?),
            None => None,
        };
        diagnostics.push(StageDiagnostics {
            stage: i,
            primal_residual: distance(&state.x, &state.z),
            psnr,
        });
        if opts.record_trajectory {
            trajectory.push(state.clone());
        }
    }
    Ok(UnfoldOutput {
        output: state.z,
        trajectory,
        diagnostics,
    })
}

/// Fixed-parameter solver for `min ‖y − Φx‖² + λR(x)` with penalty `τ`:
/// `α = τ`, `β = τ/λ`, started from `Φᵀy`. R2ADMM runs with `γ = 1`; use
/// [`run_unfold`] for other relaxations.
#[allow(clippy::too_many_arguments)]
pub fn classical_solve<D: Denoiser>(
    kind: FrameworkKind,
    y: &Measurement,
    op: &SensingOperator,
    prox: &D,
    tau: f64,
    lam: f64,
    iters: usize,
    opts: UnfoldOptions<'_>,
) -> Result<UnfoldOutput> {
    if !(tau > 0.0) || !(lam >= 0.0) {
        return Err(Error::Config(format!("need τ > 0 and λ ≥ 0, got τ = {tau}, λ = {lam}")));
    }
    let params = StageParams::constant(iters, tau, tau / lam, 1.0);
    let z0 = apply_phi_t(y, op)?;
    run_unfold(kind, iters, std::slice::from_ref(prox), y, op, &params, z0, opts)
}

/// `stage,primal_residual,psnr` rows.
pub fn write_diagnostics_csv<W: Write>(mut w: W, rows: &[StageDiagnostics]) -> std::io::Result<()> {
    writeln!(w, "stage,primal_residual,psnr")?;
    for r in rows {
        let psnr = r.psnr.map(|p| format!("{p:.6}")).unwrap_or_default();
        writeln!(w, "{},{:.9e},{psnr}", r.stage, r.primal_residual)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cassi::CodedMask;
    use crate::denoisers::{Identity, SoftThreshold, TvDenoiser};
    use ndarray::Array3;
    use rand::Rng;

    fn instance(h: usize, w: usize, n: usize, d: usize, seed: u64) -> (SensingOperator, Measurement, ShearedCube) {
        let mut rng = crate::seeded_rng(seed);
        let mask = CodedMask::new(Array2::from_shape_simple_fn((h, w), || rng.random_range(0.0..1.0)), d).unwrap();
        let op = SensingOperator::new(&mask, n).unwrap();
        let (_, ws, _) = op.sheared_dim();
        let y = Measurement::new(Array2::from_shape_simple_fn((h, ws), || rng.random_range(0.0..2.0)));
        let r = ShearedCube::new(Array3::from_shape_simple_fn((h, ws, n), || rng.random_range(-1.0..1.0)), d).unwrap();
        (op, y, r)
    }

    #[test]
    fn framework_names() {
        for k in FrameworkKind::ALL {
            assert_eq!(k.as_str().parse::<FrameworkKind>().unwrap(), k);
        }
        let err = "fista".parse::<FrameworkKind>().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("hqs, admm, r2admm, gap, plain"));
    }

    #[test]
    fn residual_update_examples() {
        let c = |v: f64| ShearedCube::new(Array3::from_elem((1, 1, 1), v), 0).unwrap();
        let out = residual_update(&c(0.5), &c(1.0), &c(0.25), 0.5);
        assert_eq!(out.data()[[0, 0, 0]], 0.125);
        assert_eq!(residual_update(&c(0.5), &c(1.0), &c(0.25), 0.0), c(0.5));
        assert_eq!(residual_update(&c(0.5), &c(1.0), &c(0.25), 1.0), c(-0.25));
    }

    #[test]
    fn projection_limits() {
        let (op, y, r) = instance(3, 4, 2, 1, 1);
        let x = linear_projection(&y, &r, 1e12, &op, FrameworkKind::Hqs).unwrap();
        let rel = distance(&x, &r) / r.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rel < 1e-6);
        let zero = SensingOperator::new(&CodedMask::new(Array2::zeros((3, 4)), 1).unwrap(), 2).unwrap();
        assert_eq!(linear_projection(&y, &r, 0.3, &zero, FrameworkKind::Admm).unwrap(), r);
        assert!(matches!(linear_projection(&y, &r, 0.0, &op, FrameworkKind::Hqs), Err(Error::Domain(_))));
    }

    #[test]
    fn projection_satisfies_measurement_in_gap_limit() {
        // GAP puts x on {Φx = y}
        let (op, y, r) = instance(3, 5, 3, 1, 2);
        let x = linear_projection(&y, &r, 0.0, &op, FrameworkKind::Gap).unwrap();
        let phi_x = apply_phi(&x, &op).unwrap();
        for (a, b) in phi_x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_guard() {
        let mask = CodedMask::new(ndarray::array![[1.0, 0.0, 1.0]], 0).unwrap();
        let op = SensingOperator::new(&mask, 1).unwrap();
        let r = ShearedCube::new(Array3::from_elem((1, 3, 1), 0.5), 0).unwrap();
        let ok = Measurement::new(ndarray::array![[1.0, 0.0, 2.0]]);
        let x = linear_projection(&ok, &r, 0.0, &op, FrameworkKind::Gap).unwrap();
        assert_eq!(x.data().iter().copied().collect::<Vec<_>>(), vec![1.0, 0.5, 2.0]);
        let bad = Measurement::new(ndarray::array![[1.0, 0.1, 2.0]]);
        assert!(matches!(linear_projection(&bad, &r, 0.0, &op, FrameworkKind::Gap), Err(Error::Singular(_))));
    }

    #[test]
    fn zero_stages_return_initial_value() {
        let (op, y, r) = instance(4, 4, 2, 1, 3);
        let out = run_unfold(FrameworkKind::R2Admm, 0, &[SoftThreshold], &y, &op, &StageParams::constant(0, 1.0, 1.0, 0.0), r.clone(), UnfoldOptions::default()).unwrap();
        assert_eq!(out.output, r);
    }

    #[test]
    fn r2admm_gamma_zero_is_hqs_and_one_is_admm() {
        let (op, y, r) = instance(4, 6, 3, 1, 4);
        let mut rng = crate::seeded_rng(5);
        let k = 10;
        let params = StageParams {
            alpha: (0..k).map(|_| rng.random_range(0.1..2.0)).collect(),
            beta: (0..k).map(|_| rng.random_range(0.5..5.0)).collect(),
            gamma: vec![0.0; k],
        };
        let opts = UnfoldOptions { record_trajectory: true, ..Default::default() };
        let den = [TvDenoiser { iters: 5 }];
        let run = |kind, p: &StageParams| run_unfold(kind, k, &den, &y, &op, p, r.clone(), opts).unwrap();
        let (r2, hqs) = (run(FrameworkKind::R2Admm, &params), run(FrameworkKind::Hqs, &params));
        for (a, b) in r2.trajectory.iter().zip(&hqs.trajectory) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.z, b.z);
        }
        let ones = StageParams { gamma: vec![1.0; k], ..params.clone() };
        let (r2, admm) = (run(FrameworkKind::R2Admm, &ones), run(FrameworkKind::Admm, &params));
        for (a, b) in r2.trajectory.iter().zip(&admm.trajectory) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn stage_errors_carry_index() {
        let (op, y, r) = instance(4, 4, 2, 1, 6);
        let params = StageParams { alpha: vec![1.0, 1.0], beta: vec![1.0, -1.0], gamma: vec![0.0; 2] };
        let err = run_unfold(FrameworkKind::Hqs, 2, &[SoftThreshold], &y, &op, &params, r, UnfoldOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: 1, .. }), "{err}");
    }

    #[test]
    fn identity_prox_with_huge_tau_stays_at_start() {
        let (op, y, _) = instance(3, 5, 2, 1, 7);
        let out = classical_solve(FrameworkKind::Hqs, &y, &op, &Identity, 1e14, 1.0, 20, UnfoldOptions::default()).unwrap();
        let z0 = apply_phi_t(&y, &op).unwrap();
        assert!(distance(&out.output, &z0) < 1e-9 * distance(&z0, &z0.map(|_| 0.0)));
    }

    #[test]
    fn diagnostics_csv() {
        let rows = [StageDiagnostics { stage: 0, primal_residual: 0.5, psnr: Some(21.0) }, StageDiagnostics { stage: 1, primal_residual: 0.25, psnr: None }];
        let mut buf = Vec::new();
        write_diagnostics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().collect::<Vec<_>>(), ["stage,primal_residual,psnr", "0,5.000000000e-1,21.000000", "1,2.500000000e-1,"]);
    }
}
