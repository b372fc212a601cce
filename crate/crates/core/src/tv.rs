//! Total variation, vector shrinkage, box projection and the inner ADMM for
//! the `s`-subproblem
//!
//! ```text
//! min_{s in K_h}  alpha |grad s|_1 + (y, s) + beta/2 |grad s - grad sigma|^2
//! ```
//!
//! split with `d = grad s` and scaled dual `u`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{stiffness_matrix, CellGradient, CellVectors, FemSpace};
use crate::sparse::{cg_solve, dot, CsrMatrix};

/// Pointwise bounds `lower <= sigma <= upper` of the admissible set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: f64,
    pub upper: f64,
}

impl BoxBounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn unbounded() -> Self {
        Self { lower: f64::NEG_INFINITY, upper: f64::INFINITY }
    }

    pub fn validate(&self, sigma0: f64) -> Result<()> {
        if !(self.upper > self.lower) {
            return Err(Error::config("bounds", format!("upper {} must exceed lower {}", self.upper, self.lower)));
        }
        if !(self.lower > -sigma0) {
            return Err(Error::config("bounds", format!("lower {} must exceed -sigma0 = {}", self.lower, -sigma0)));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerAdmmConfig {
    /// Penalty; `None` uses `beta`.
    pub rho: Option<f64>,
    pub iterations: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Per-component instead of Euclidean per-cell norms.
    pub anisotropic: bool,
}

impl Default for InnerAdmmConfig {
    fn default() -> Self {
        Self { rho: None, iterations: 40, cg_tol: 1e-10, cg_max_iter: 5000, anisotropic: false }
    }
}

impl InnerAdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::config("inner.rho", "must be positive"));
            }
        }
        if self.iterations == 0 {
            return Err(Error::config("inner.iterations", "must be at least 1"));
        }
        if !(self.cg_tol > 0.0) || self.cg_max_iter == 0 {
            return Err(Error::config("inner.cg_tol", "CG tolerance and iteration cap must be positive"));
        }
        Ok(())
    }
}

/// Gradient operator and stiffness matrix on `V_h`.
#[derive(Debug, Clone)]
pub struct TvOperator {
    pub grad: CellGradient,
    pub stiffness: CsrMatrix<f64>,
    inv_diag: Vec<f64>,
}

impl TvOperator {
    pub fn new(space: &FemSpace) -> Self {
        let stiffness = stiffness_matrix(space);
        let inv_diag = stiffness.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
        Self { grad: CellGradient::new(space), stiffness, inv_diag }
    }

    pub fn tv_seminorm(&self, v: &[f64]) -> f64 {
        tv_of_cells(&self.grad, &self.grad.apply(v), false)
    }

    /// `|grad a - grad b|_{L2}`.
    pub fn gradient_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.stiffness.quad_form(&diff).max(0.0).sqrt()
    }

    /// `alpha TV(s) + y^T s + beta/2 |grad s - grad sigma|^2`.
    pub fn s_objective(&self, s: &[f64], sigma: &[f64], y: &[f64], alpha: f64, beta: f64, anisotropic: bool) -> f64 {
        let tv = tv_of_cells(&self.grad, &self.grad.apply(s), anisotropic);
        let gd = self.gradient_distance(s, sigma);
        alpha * tv + dot(y, s) + 0.5 * beta * gd * gd
    }

    /// Runs the inner ADMM from `warm` and returns the updated `s`, `d`, `u`.
    #[allow(clippy::too_many_arguments)]
    pub fn s_subproblem(
        &self,
        sigma_next: &[f64],
        y: &[f64],
        warm: &InnerState,
        alpha: f64,
        beta: f64,
        bounds: &BoxBounds,
        cfg: &InnerAdmmConfig,
    ) -> InnerOutcome {
        let rho = cfg.rho.unwrap_or(beta);
        let grad_sigma = self.grad.apply(sigma_next);
        let kappa = alpha / (beta + rho);
        let mut s = warm.s.clone();
        let mut u = warm.u.clone();
        let mut d = warm.d.clone();
        let mut grad_s = self.grad.apply(&s);
        let mut cg_failures = 0;
        let mut cg_iterations = 0;
        for _ in 0..cfg.iterations {
            let target: CellVectors = grad_sigma
                .iter()
                .zip(grad_s.iter().zip(&u))
                .map(|(gs, (g, uu))| [0, 1, 2].map(|c| (beta * gs[c] + rho * (g[c] - uu[c])) / (beta + rho)))
                .collect();
            d = if cfg.anisotropic { shrink_anisotropic(&target, kappa) } else { shrink(&target, kappa) };
            let du: CellVectors = d.iter().zip(&u).map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]).collect();
            let rhs: Vec<f64> =
                self.grad.apply_transpose_weighted(&du).iter().zip(y).map(|(g, yy)| rho * g - yy).collect();
            let out = cg_solve(
                |v| self.stiffness.mul_vec(v).into_iter().map(|x| rho * x).collect(),
                &rhs,
                Some(&s),
                Some(&self.inv_diag.iter().map(|x| x / rho).collect::<Vec<_>>()),
                cfg.cg_tol,
                cfg.cg_max_iter,
            );
            cg_iterations += out.iterations;
            if !out.converged {
                cg_failures += 1;
                warn!("inner CG stopped at relative residual {:.3e}", out.relative_residual);
            }
            s = project_box(&out.x, bounds);
            grad_s = self.grad.apply(&s);
            for ((uu, dd), g) in u.iter_mut().zip(&d).zip(&grad_s) {
                for c in 0..3 {
                    uu[c] += dd[c] - g[c];
                }
            }
        }
        let residual: CellVectors = d.iter().zip(&grad_s).map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]]).collect();
        let primal_residual = self.grad.l2_norm(&residual);
        let objective = self.s_objective(&s, sigma_next, y, alpha, beta, cfg.anisotropic);
        let warm_objective = self.s_objective(&warm.s, sigma_next, y, alpha, beta, cfg.anisotropic);
        let reverted = objective > warm_objective;
        let (s, objective) = if reverted { (warm.s.clone(), warm_objective) } else { (s, objective) };
        InnerOutcome { state: InnerState { s, d, u }, primal_residual, objective, reverted, cg_failures, cg_iterations }
    }
}

/// Variables carried across outer iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerState {
    pub s: Vec<f64>,
    pub d: CellVectors,
    pub u: CellVectors,
}

impl InnerState {
    pub fn zeros(n_dofs: usize, n_cells: usize) -> Self {
        Self { s: vec![0.0; n_dofs], d: vec![[0.0; 3]; n_cells], u: vec![[0.0; 3]; n_cells] }
    }
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub state: InnerState,
    /// `|d - grad s|_{L2}` after the last iteration.
    pub primal_residual: f64,
    pub objective: f64,
    /// The iterate was worse than the warm start, which was returned instead.
    pub reverted: bool,
    pub cg_failures: usize,
    pub cg_iterations: usize,
}

/// `sum_T |T| |g_T|`.
pub fn tv_of_cells(grad: &CellGradient, g: &[[f64; 3]], anisotropic: bool) -> f64 {
    grad.volumes
        .iter()
        .zip(g)
        .map(|(v, c)| {
            let n = if anisotropic { c[0].abs() + c[1].abs() + c[2].abs() } else { (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() };
            v * n
        })
        .sum()
}

/// Per-cell minimizer of `kappa |d| + 1/2 |d - w|^2`.
pub fn shrink(w: &[[f64; 3]], kappa: f64) -> CellVectors {
    w.iter()
        .map(|c| {
            let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            if n <= kappa || n == 0.0 {
                [0.0; 3]
            } else {
                let f = (n - kappa) / n;
                [c[0] * f, c[1] * f, c[2] * f]
            }
        })
        .collect()
}

/// Componentwise soft thresholding.
pub fn shrink_anisotropic(w: &[[f64; 3]], kappa: f64) -> CellVectors {
    w.iter().map(|c| c.map(|x| x.signum() * (x.abs() - kappa).max(0.0))).collect()
}

/// Clips nodal coefficients to the bounds.
pub fn project_box(v: &[f64], b: &BoxBounds) -> Vec<f64> {
    v.iter().map(|x| x.clamp(b.lower, b.upper)).collect()
}
