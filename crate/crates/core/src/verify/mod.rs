//! Self-checking suites, all at 64-bit precision.
//!
//! - `adjoint`: `⟨Φx, y⟩ = ⟨x, Φᵀy⟩`, shear/unshear and convolution
//!   adjointness, and `δ` against the dense `ΦΦᵀ`.
//! - `gradcheck`: finite differences for every tape primitive, the CMFormer
//!   blocks, the initial network, the estimator and a 2-stage network.
//! - `oracle`: the closed-form projection against a dense solve, and
//!   plug-and-play ADMM with a soft threshold against FISTA on a lasso.
//! - `equivalence`: R2ADMM with `γ ≡ 0` / `γ ≡ 1` against HQS / ADMM.

pub mod dense;
mod grad;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::cassi::{apply_phi, apply_phi_t, shift_cube, unshift_cube, CodedMask, HsiCube, Measurement, SensingOperator, ShearedCube};
use crate::denoisers::{CmFormerConfig, CmFormerDenoiser, SoftThreshold, TvDenoiser};
use crate::unfolding::{classical_solve, linear_projection, run_unfold, FrameworkKind, StageParams, UnfoldOptions};
use crate::{seeded_rng, Error, Result, SeededRng};

pub use grad::GRADCHECK_TOLERANCE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    Adjoint,
    Gradcheck,
    Oracle,
    Equivalence,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Adjoint, Suite::Gradcheck, Suite::Oracle, Suite::Equivalence];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Adjoint => "adjoint",
            Suite::Gradcheck => "gradcheck",
            Suite::Oracle => "oracle",
            Suite::Equivalence => "equivalence",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            let valid: Vec<_> = Suite::ALL.iter().map(|v| v.as_str()).collect();
            Error::Usage(format!("unknown suite `{s}`; valid values: {}", valid.join(", ")))
        })
    }
}

/// Outcome of one named check: the worst error seen and the bound it was held to.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `max_error < tolerance`, or `max_error == 0` for a zero
    /// tolerance (exact checks).
    pub fn new(name: impl Into<String>, max_error: f64, tolerance: f64, cases: usize) -> Self {
        let passed = if tolerance == 0.0 { max_error == 0.0 } else { max_error < tolerance };
        Self {
            name: name.into(),
            max_error,
            tolerance,
            cases,
            passed: passed && cases > 0,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<40} max error {:.3e} (tol {:.0e}, {} cases)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance,
            self.cases
        )?;
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn max_error(&self) -> f64 {
        self.checks.iter().map(|c| c.max_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite {}", self.suite)?;
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {failed} failed, max error {:.3e}", self.checks.len(), self.max_error())
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Adjoint => vec![phi_adjoint(seed, 100)?, shear_adjoint(seed, 50), delta_matches_dense(seed, 50)?],
        Suite::Gradcheck => grad::all(seed)?,
        Suite::Oracle => vec![projection_oracle(seed, 50)?, lasso_oracle(seed)?, admm_primal_residual(seed)?],
        Suite::Equivalence => {
            let mut v = Vec::new();
            for (gamma, other) in [(0.0, FrameworkKind::Hqs), (1.0, FrameworkKind::Admm)] {
                v.push(framework_equivalence(seed, gamma, other, 10, Prior::Tv)?);
                v.push(framework_equivalence(seed, gamma, other, 10, Prior::CmFormer)?);
            }
            v
        }
    };
    Ok(SuiteReport { suite, checks })
}

/// Random extents up to `8×8×4`, shift step `0..=2` and a continuous or
/// binary mask.
pub fn random_operator(rng: &mut SeededRng) -> Result<(SensingOperator, CodedMask, usize)> {
    let (h, w, n, d) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=4), rng.random_range(0..=2));
    let mask = if rng.random_bool(0.5) {
        CodedMask::random_binary(h, w, d, 0.5, rng)
    } else {
        CodedMask::new(Array2::from_shape_simple_fn((h, w), || rng.random()), d)?
    };
    Ok((SensingOperator::new(&mask, n)?, mask, n))
}

fn random_sheared(op: &SensingOperator, rng: &mut SeededRng, lo: f64, hi: f64) -> ShearedCube {
    let (h, ws, n) = op.sheared_dim();
    ShearedCube::new(Array3::from_shape_simple_fn((h, ws, n), || rng.random_range(lo..hi)), op.shift_step()).expect("extents")
}

fn random_measurement(op: &SensingOperator, rng: &mut SeededRng, lo: f64, hi: f64) -> Measurement {
    Measurement::new(Array2::from_shape_simple_fn(op.measurement_dim(), || rng.random_range(lo..hi)))
}

fn dot(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn phi_adjoint(seed: u64, cases: usize) -> Result<Check> {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (op, ..) = random_operator(&mut rng)?;
        let x = random_sheared(&op, &mut rng, -1.0, 1.0);
        let y = random_measurement(&op, &mut rng, -1.0, 1.0);
        let lhs = dot(apply_phi(&x, &op)?.data().iter().copied(), y.data().iter().copied());
        let rhs = dot(x.data().iter().copied(), apply_phi_t(&y, &op)?.data().iter().copied());
        // scale by the norms so that near-orthogonal pairs do not blow up
        let scale = x.data().iter().map(|v| v * v).sum::<f64>().sqrt() * y.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max((lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE));
    }
    Ok(Check::new("phi adjoint", worst, 1e-12, cases))
}

pub fn shear_adjoint(seed: u64, cases: usize) -> Check {
    let mut rng = seeded_rng(seed ^ 0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (h, w, n, d) = (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=4), rng.random_range(0..=3));
        let x = HsiCube::new(Array3::from_shape_simple_fn((h, w, n), || rng.random_range(-1.0..1.0))).expect("extents");
        let s = ShearedCube::new(Array3::from_shape_simple_fn(shift_cube(&x, d).dim(), || rng.random_range(-1.0..1.0)), d).expect("extents");
        let lhs = dot(shift_cube(&x, d).data().iter().copied(), s.data().iter().copied());
        let rhs = dot(x.data().iter().copied(), unshift_cube(&s).data().iter().copied());
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    Check::new("shear adjoint", worst, 1e-12, cases)
}

/// `δ` against the diagonal of the dense `ΦΦᵀ`, bit for bit.
pub fn delta_matches_dense(seed: u64, cases: usize) -> Result<Check> {
    let mut rng = seeded_rng(seed ^ 0xde17a);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (op, ..) = random_operator(&mut rng)?;
        let diag = dense::dense_gram_diagonal(&dense::dense_phi(&op));
        for (a, b) in op.delta().iter().zip(&diag) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(Check::new("delta equals dense diagonal", worst, 0.0, cases))
}

/// Closed-form projection against a dense Cholesky solve.
pub fn projection_oracle(seed: u64, cases: usize) -> Result<Check> {
    let mut rng = seeded_rng(seed ^ 0x0a1c);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (op, ..) = random_operator(&mut rng)?;
        let alpha = 10f64.powf(rng.random_range(-2.0..1.0));
        let y = random_measurement(&op, &mut rng, 0.0, 2.0);
        let r = random_sheared(&op, &mut rng, -1.0, 1.0);
        let fast = linear_projection(&y, &r, alpha, &op, FrameworkKind::Hqs)?;
        let phi = dense::dense_phi(&op);
        let exact = dense::dense_projection(&phi, &dense::flatten_measurement(&y), &dense::flatten_sheared(&r), alpha)
            .ok_or_else(|| Error::Singular("dense system not positive definite".into()))?;
        let fast = dense::flatten_sheared(&fast);
        worst = worst.max((&fast - &exact).norm() / exact.norm().max(f64::MIN_POSITIVE));
    }
    Ok(Check::new("projection vs dense solve", worst, 1e-10, cases))
}

/// The `1×8×2` lasso instance used by [`lasso_oracle`]: a `1×7` mask with
/// two bands and unit shift.
pub fn lasso_instance(seed: u64) -> Result<(SensingOperator, Measurement)> {
    let mut rng = seeded_rng(seed ^ 0x1a55);
    let mask = CodedMask::new(Array2::from_shape_simple_fn((1, 7), || rng.random_range(0.2..1.0)), 1)?;
    let op = SensingOperator::new(&mask, 2)?;
    let y = random_measurement(&op, &mut rng, 0.0, 1.0);
    Ok((op, y))
}

pub const LASSO_LAMBDA: f64 = 0.1;

/// Objective of plug-and-play ADMM with the soft threshold against FISTA run
/// until its iterate moves less than `1e-10`.
pub fn lasso_oracle(seed: u64) -> Result<Check> {
    let (op, y) = lasso_instance(seed)?;
    let phi = dense::dense_phi(&op);
    let yv = dense::flatten_measurement(&y);
    let (reference, iters) = dense::lasso_fista(&phi, &yv, LASSO_LAMBDA, 1e-10, 1_000_000);
    let admm = classical_solve(FrameworkKind::Admm, &y, &op, &SoftThreshold, 1.0, LASSO_LAMBDA, 2000, UnfoldOptions::default())?;
    let x = dense::flatten_sheared(&admm.output);
    let gap = (dense::lasso_objective(&phi, &yv, &x, LASSO_LAMBDA) - dense::lasso_objective(&phi, &yv, &reference, LASSO_LAMBDA)).abs();
    Ok(Check::new("admm lasso vs fista", gap, 1e-6, 1).with_detail(format!("(fista {iters} iterations)")))
}

/// `‖x − z‖` of ADMM with the soft threshold after 500 iterations.
pub fn admm_primal_residual(seed: u64) -> Result<Check> {
    let (op, y) = lasso_instance(seed)?;
    let out = classical_solve(FrameworkKind::Admm, &y, &op, &SoftThreshold, 1.0, LASSO_LAMBDA, 500, UnfoldOptions::default())?;
    let r = out.diagnostics.last().map_or(f64::INFINITY, |d| d.primal_residual);
    Ok(Check::new("admm primal residual", r, 1e-6, 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prior {
    Tv,
    CmFormer,
}

/// Max absolute deviation between R2ADMM with constant `γ` and `other`
/// over the full trajectory (`x`, `z` and `u` of every stage).
pub fn framework_equivalence(seed: u64, gamma: f64, other: FrameworkKind, stages: usize, prior: Prior) -> Result<Check> {
    let mut rng = seeded_rng(seed ^ 0xe9);
    let (h, w, n, d) = (8, 8, 4, 2);
    let mask = CodedMask::random_binary(h, w, d, 0.5, &mut rng);
    let op = SensingOperator::new(&mask, n)?;
    let cube = HsiCube::new(Array3::from_shape_simple_fn((h, w, n), || rng.random()))?;
    let y = crate::cassi::forward(&cube, &mask)?;
    let params = StageParams {
        alpha: (0..stages).map(|_| rng.random_range(0.05..1.0)).collect(),
        beta: (0..stages).map(|_| rng.random_range(0.5..5.0)).collect(),
        gamma: vec![gamma; stages],
    };
    let z0 = apply_phi_t(&y, &op)?;
    let opts = UnfoldOptions {
        record_trajectory: true,
        ground_truth: None,
    };
    let run = |kind, den: &dyn crate::denoisers::Denoiser| run_unfold(kind, stages, std::slice::from_ref(&den), &y, &op, &params, z0.clone(), opts);
    let (a, b) = match prior {
        Prior::Tv => {
            let den = TvDenoiser { iters: 20 };
            (run(FrameworkKind::R2Admm, &den)?, run(other, &den)?)
        }
        Prior::CmFormer => {
            let den = CmFormerDenoiser::random(n, &CmFormerConfig::tiny(), &mut rng)?;
            (run(FrameworkKind::R2Admm, &den)?, run(other, &den)?)
        }
    };
    let mut worst = 0.0f64;
    for (sa, sb) in a.trajectory.iter().zip(&b.trajectory) {
        for (p, q) in [(&sa.x, &sb.x), (&sa.z, &sb.z), (&sa.u, &sb.u)] {
            for (u, v) in p.data().iter().zip(q.data()) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    let name = format!("r2admm(γ={gamma}) ≡ {other} [{}]", if prior == Prior::Tv { "tv" } else { "cmformer" });
    Ok(Check::new(name, worst, 1e-12, a.trajectory.len().min(b.trajectory.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
        let err = "bogus".parse::<Suite>().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("adjoint, gradcheck, oracle, equivalence"));
    }

    #[test]
    fn adjoint_and_equivalence_suites_pass() {
        for s in [Suite::Adjoint, Suite::Equivalence] {
            let r = run_suite(s, 1).unwrap();
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn oracle_suite_passes() {
        let r = run_suite(Suite::Oracle, 2).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn dense_phi_agrees_with_operator() {
        let mut rng = seeded_rng(3);
        let (op, ..) = random_operator(&mut rng).unwrap();
        let x = random_sheared(&op, &mut rng, -1.0, 1.0);
        let dense = dense::dense_phi(&op) * dense::flatten_sheared(&x);
        let fast = dense::flatten_measurement(&apply_phi(&x, &op).unwrap());
        assert!((dense - fast).amax() < 1e-14);
    }

    #[test]
    fn failing_check_is_reported() {
        let c = Check::new("x", 1.0, 0.5, 3);
        assert!(!c.passed);
        assert!(c.to_string().starts_with("FAIL"));
        assert!(!Check::new("exact", 1e-300, 0.0, 1).passed);
        assert!(!Check::new("empty", 0.0, 1.0, 0).passed);
    }
}
