//! Dense references for the matrix-free operator and an independent lasso
//! solver.

use nalgebra::{DMatrix, DVector};

use crate::cassi::{Measurement, SensingOperator, ShearedCube};

/// `Φ` as an `(H·W′) × (H·W′·N)` matrix, rows and columns in row-major
/// order of the measurement and the sheared cube.
pub fn dense_phi(op: &SensingOperator) -> DMatrix<f64> {
    let (h, ws, n) = op.sheared_dim();
    let m = op.shifted_mask();
    let mut phi = DMatrix::zeros(h * ws, h * ws * n);
    for i in 0..h {
        for j in 0..ws {
            for b in 0..n {
                phi[(i * ws + j, (i * ws + j) * n + b)] = m[[i, j, b]];
            }
        }
    }
    phi
}

/// Diagonal of `ΦΦᵀ`, each entry summed in column order.
pub fn dense_gram_diagonal(phi: &DMatrix<f64>) -> Vec<f64> {
    (0..phi.nrows())
        .map(|r| {
            let mut s = 0.0;
            for c in 0..phi.ncols() {
                s += phi[(r, c)] * phi[(r, c)];
            }
            s
        })
        .collect()
}

pub fn flatten_sheared(x: &ShearedCube) -> DVector<f64> {
    DVector::from_iterator(x.data().len(), x.data().iter().copied())
}

pub fn flatten_measurement(y: &Measurement) -> DVector<f64> {
    DVector::from_iterator(y.data().len(), y.data().iter().copied())
}

/// Solves `(ΦᵀΦ + αI) x = Φᵀy + α r` by Cholesky factorisation.
pub fn dense_projection(phi: &DMatrix<f64>, y: &DVector<f64>, r: &DVector<f64>, alpha: f64) -> Option<DVector<f64>> {
    let n = phi.ncols();
    let a = phi.transpose() * phi + DMatrix::identity(n, n) * alpha;
    let b = phi.transpose() * y + r * alpha;
    a.cholesky().map(|c| c.solve(&b))
}

/// `‖y − Φx‖² + λ‖x‖₁`.
pub fn lasso_objective(phi: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>, lam: f64) -> f64 {
    (y - phi * x).norm_squared() + lam * x.lp_norm(1)
}

/// FISTA on the lasso objective with step `1/L`, `L = 2‖Φ‖²`, until the
/// iterate moves less than `tol` (or `max_iters` is reached).
pub fn lasso_fista(phi: &DMatrix<f64>, y: &DVector<f64>, lam: f64, tol: f64, max_iters: usize) -> (DVector<f64>, usize) {
    let n = phi.ncols();
    let lipschitz = 2.0 * phi.transpose().clone() * phi;
    let l = lipschitz.symmetric_eigenvalues().max().max(f64::MIN_POSITIVE);
    let step = 1.0 / l;
    let shrink = |v: f64| v.signum() * (v.abs() - step * lam).max(0.0);
    let mut x = DVector::zeros(n);
    let mut v = x.clone();
    let mut t = 1.0f64;
    for it in 0..max_iters {
        let grad = 2.0 * phi.transpose() * (phi * &v - y);
        let next = (&v - grad * step).map(shrink);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        v = &next + (&next - &x) * ((t - 1.0) / t_next);
        let moved = (&next - &x).amax();
        x = next;
        t = t_next;
        if moved < tol {
            return (x, it + 1);
        }
    }
    (x, max_iters)
}
