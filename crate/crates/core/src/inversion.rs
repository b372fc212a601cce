//! Modified ADMM for the TV-regularized conductivity reconstruction.
//!
//! Each outer step solves the `sigma`-subproblem approximately by projected
//! nonlinear conjugate gradients, the `s`-subproblem by the inner ADMM of
//! [`crate::tv`], and sets the multiplier to the misfit gradient at the new
//! `sigma` (or, in classical mode, takes a dual ascent step).
//!
//! The multiplier `y` is stored as a dual vector: `(y, v)` is `y^T v` for
//! nodal coefficients `v`, with no mass matrix in between.

use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::eddy::{augmented_lagrangian, ForwardProblem, State};
use crate::error::{Error, Result};
use crate::fem::{nodal_mass_matrix, CellVectors, TraceValues};
use crate::harness::sigma_l2_error;
use crate::sparse::{dot, CsrMatrix};
use crate::tv::{project_box, BoxBounds, InnerAdmmConfig, InnerState, TvOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiplierMode {
    /// `y^{k+1} = G'(sigma^{k+1})`.
    Gradient,
    /// `y^{k+1} = y^k + beta K (s^{k+1} - sigma^{k+1})`.
    Classical,
}

/// Lower bound `m_k = min(slope (k - 1), cap)` (or without the cap when
/// `literal`), fixed upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Truncation {
    pub lower_slope: f64,
    pub lower_cap: f64,
    pub upper: f64,
    pub literal: bool,
}

impl Default for Truncation {
    fn default() -> Self {
        Self { lower_slope: 0.05, lower_cap: 0.0, upper: 15.0, literal: false }
    }
}

impl Truncation {
    /// Bounds for outer iteration `k >= 1`.
    pub fn bounds(&self, k: usize) -> BoxBounds {
        let ramp = self.lower_slope * (k.max(1) - 1) as f64;
        let lower = if self.literal { ramp } else { ramp.min(self.lower_cap) };
        BoxBounds::new(lower.min(self.upper), self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuterConfig {
    pub alpha: f64,
    pub beta: f64,
    pub outer_iterations: usize,
    pub nlcg_iterations: usize,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Largest nodal change of the first trial step of each line search.
    pub initial_step: f64,
    pub truncation: Truncation,
    pub inner: InnerAdmmConfig,
    pub multiplier_mode: MultiplierMode,
    /// Stop once `|sigma^{k+1} - sigma^k|_{L2}` falls below this.
    pub early_stop_tol: Option<f64>,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-7,
            beta: 2e-3,
            outer_iterations: 50,
            nlcg_iterations: 3,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 20,
            initial_step: 1.0,
            truncation: Truncation::default(),
            inner: InnerAdmmConfig::default(),
            multiplier_mode: MultiplierMode::Gradient,
            early_stop_tol: None,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self, sigma0: f64) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be positive, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        positive("initial_step", self.initial_step)?;
        if self.outer_iterations == 0 {
            return Err(Error::config("outer_iterations", "must be at least 1"));
        }
        if self.nlcg_iterations == 0 {
            return Err(Error::config("nlcg_iterations", "must be at least 1"));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::config("armijo_c1", "must lie in (0, 1)"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::config("backtrack_factor", "must lie in (0, 1)"));
        }
        self.inner.validate()?;
        self.truncation.bounds(1).validate(sigma0)?;
        Ok(())
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Iteration number, starting at 1.
    pub k: usize,
    pub lagrangian: f64,
    pub misfit: f64,
    pub tv: f64,
    /// `|s - sigma|_{L2}`.
    pub s_sigma_l2: f64,
    /// `|grad s - grad sigma|_{L2}`.
    pub grad_diff_l2: f64,
    pub sigma_error: Option<f64>,
    /// `|sigma^{k+1} - sigma^k|_{L2}`.
    pub step_l2: f64,
    /// `|grad s^k - grad sigma^{k+1}|_{L2}`.
    pub lag_grad_diff_l2: f64,
    /// `max |y - G'(sigma)|`.
    pub multiplier_residual: f64,
    /// Subproblem objective before and after each accepted NLCG step.
    pub nlcg_objective: Vec<f64>,
    pub line_search_failures: usize,
    pub inner_primal_residual: f64,
    pub lower_bound: f64,
    pub wall_time_s: f64,
}

/// Iterates and history of the outer loop; also the checkpoint format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    /// Completed outer iterations.
    pub k: usize,
    pub sigma: Vec<f64>,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub d: CellVectors,
    pub u: CellVectors,
    pub history: Vec<IterationRecord>,
}

impl AdmmState {
    pub fn zeros(n_dofs: usize, n_cells: usize) -> Self {
        Self {
            k: 0,
            sigma: vec![0.0; n_dofs],
            s: vec![0.0; n_dofs],
            y: vec![0.0; n_dofs],
            d: vec![[0.0; 3]; n_cells],
            u: vec![[0.0; 3]; n_cells],
            history: Vec::new(),
        }
    }

    pub fn lagrangian_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.lagrangian).collect()
    }

    pub fn misfit_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.misfit).collect()
    }

    pub fn tv_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.tv).collect()
    }

    pub fn residual_history(&self) -> Vec<(f64, f64)> {
        self.history.iter().map(|r| (r.s_sigma_l2, r.grad_diff_l2)).collect()
    }

    pub fn error_history(&self) -> Vec<f64> {
        self.history.iter().filter_map(|r| r.sigma_error).collect()
    }
}

/// Everything the outer loop needs besides the configuration.
#[derive(Debug, Clone)]
pub struct InversionProblem {
    pub forward: ForwardProblem,
    pub observations: TraceValues,
    pub tv: TvOperator,
    pub mass: CsrMatrix<f64>,
    lumped_inv: Vec<f64>,
    /// Piecewise-constant ground truth per tet, for error monitoring.
    pub truth_cells: Option<Vec<f64>>,
}

impl InversionProblem {
    pub fn new(forward: ForwardProblem, observations: TraceValues, truth_cells: Option<Vec<f64>>) -> Result<Self> {
        if observations.len() != forward.trace.n_faces() {
            return Err(Error::Data(format!(
                "observations cover {} Gamma faces, mesh has {}",
                observations.len(),
                forward.trace.n_faces()
            )));
        }
        if let Some(t) = &truth_cells {
            if t.len() != forward.space.mesh.n_tets() {
                return Err(Error::Dimension { expected: forward.space.mesh.n_tets(), found: t.len() });
            }
        }
        let tv = TvOperator::new(&forward.space);
        let mass = nodal_mass_matrix(&forward.space);
        let lumped_inv = (0..mass.nrows())
            .map(|i| {
                let s: f64 = mass.row(i).map(|(_, v)| v).sum();
                if s > 0.0 {
                    1.0 / s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { forward, observations, tv, mass, lumped_inv, truth_cells })
    }

    pub fn n_dofs(&self) -> usize {
        self.forward.n_sigma()
    }

    pub fn initial_state(&self) -> AdmmState {
        AdmmState::zeros(self.n_dofs(), self.tv.grad.n_cells())
    }

    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        self.mass.quad_form(v).max(0.0).sqrt()
    }

    pub fn sigma_error(&self, sigma: &[f64]) -> Option<f64> {
        self.truth_cells.as_ref().map(|t| sigma_l2_error(&self.forward.space, sigma, t))
    }

    /// Misfit, gradient and state at `sigma`.
    pub fn evaluate(&self, sigma: &[f64]) -> Result<Evaluation> {
        let state = self.forward.solve_state(sigma)?;
        let misfit = self.forward.misfit(&state, &self.observations)?;
        let f = self.forward.solve_adjoint(&state, &self.observations)?;
        let gradient = self.forward.gradient(&state.e, &f);
        Ok(Evaluation { misfit, gradient })
    }

    fn misfit_with_state(&self, sigma: &[f64]) -> Result<(f64, State)> {
        let state = self.forward.solve_state(sigma)?;
        Ok((self.forward.misfit(&state, &self.observations)?, state))
    }
}

/// Misfit and its gradient at one conductivity.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub misfit: f64,
    pub gradient: Vec<f64>,
}

/// `F(sigma) = G(sigma) - y^T sigma + beta/2 |grad(sigma - s)|^2`.
pub struct SigmaObjective<'a> {
    pub problem: &'a InversionProblem,
    pub s: &'a [f64],
    pub y: &'a [f64],
    pub beta: f64,
}

impl SigmaObjective<'_> {
    pub fn value(&self, sigma: &[f64], misfit: f64) -> f64 {
        let diff: Vec<f64> = sigma.iter().zip(self.s).map(|(a, b)| a - b).collect();
        misfit - dot(self.y, sigma) + 0.5 * self.beta * self.problem.tv.stiffness.quad_form(&diff)
    }

    pub fn gradient(&self, sigma: &[f64], misfit_gradient: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = sigma.iter().zip(self.s).map(|(a, b)| a - b).collect();
        let k = self.problem.tv.stiffness.mul_vec(&diff);
        misfit_gradient.iter().zip(self.y).zip(&k).map(|((g, y), kd)| g - y + self.beta * kd).collect()
    }
}

/// Result of the projected NLCG.
#[derive(Debug, Clone)]
pub struct SigmaStep {
    pub sigma: Vec<f64>,
    pub evaluation: Evaluation,
    /// Objective at the start and after every accepted step.
    pub objective: Vec<f64>,
    pub line_search_failures: usize,
}

fn active_set(sigma: &[f64], b: &BoxBounds) -> Vec<i8> {
    sigma
        .iter()
        .map(|&v| {
            if v <= b.lower {
                -1
            } else if v >= b.upper {
                1
            } else {
                0
            }
        })
        .collect()
}

/// Projected Polak-Ribiere+ NLCG with Armijo backtracking on the projected
/// path, preconditioned by the inverse lumped mass.
pub fn sigma_subproblem(
    problem: &InversionProblem,
    sigma: &[f64],
    at_sigma: &Evaluation,
    s: &[f64],
    y: &[f64],
    bounds: &BoxBounds,
    cfg: &OuterConfig,
) -> Result<SigmaStep> {
    let obj = SigmaObjective { problem, s, y, beta: cfg.beta };
    let mut sigma = sigma.to_vec();
    let mut eval = at_sigma.clone();
    let mut f = obj.value(&sigma, eval.misfit);
    let mut history = vec![f];
    let mut failures = 0;
    let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None; // (grad, preconditioned grad, direction)
    let mut restart = true;
    let mut max_change = cfg.initial_step;

    for _ in 0..cfg.nlcg_iterations {
        let g = obj.gradient(&sigma, &eval.gradient);
        let pg: Vec<f64> = g.iter().zip(&problem.lumped_inv).map(|(a, b)| a * b).collect();
        let mut dir: Vec<f64> = pg.iter().map(|v| -v).collect();
        if let (false, Some((g_old, pg_old, d_old))) = (restart, &prev) {
            let denom = dot(g_old, pg_old);
            let num: f64 = g.iter().zip(pg.iter().zip(pg_old)).map(|(gi, (a, b))| gi * (a - b)).sum();
            let pr = if denom > 0.0 { num / denom } else { 0.0 };
            if pr > 0.0 {
                for (d, od) in dir.iter_mut().zip(d_old) {
                    *d += pr * od;
                }
            }
        }
        // no motion through active bounds
        for (d, &v) in dir.iter_mut().zip(&sigma) {
            if (v <= bounds.lower && *d < 0.0) || (v >= bounds.upper && *d > 0.0) {
                *d = 0.0;
            }
        }
        if dot(&g, &dir) >= 0.0 {
            dir = pg.iter().map(|v| -v).collect();
            for (d, &v) in dir.iter_mut().zip(&sigma) {
                if (v <= bounds.lower && *d < 0.0) || (v >= bounds.upper && *d > 0.0) {
                    *d = 0.0;
                }
            }
        }
        let max_dir = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_dir == 0.0 || dot(&g, &dir) >= 0.0 {
            break;
        }

        let mut t = max_change / max_dir;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let trial: Vec<f64> =
                project_box(&sigma.iter().zip(&dir).map(|(a, d)| a + t * d).collect::<Vec<_>>(), bounds);
            let (g_trial, state) = problem.misfit_with_state(&trial)?;
            let f_trial = obj.value(&trial, g_trial);
            let step: Vec<f64> = trial.iter().zip(&sigma).map(|(a, b)| a - b).collect();
            if f_trial <= f + cfg.armijo_c1 * dot(&g, &step) {
                accepted = Some((trial, g_trial, state, f_trial));
                max_change = (2.0 * t * max_dir).min(cfg.initial_step);
                break;
            }
            t *= cfg.backtrack_factor;
        }
        let Some((trial, g_trial, state, f_trial)) = accepted else {
            warn!("line search failed after {} backtracks; keeping sigma", cfg.max_backtracks);
            failures += 1;
            break;
        };
        let adjoint = problem.forward.solve_adjoint(&state, &problem.observations)?;
        let new_eval = Evaluation { misfit: g_trial, gradient: problem.forward.gradient(&state.e, &adjoint) };
        restart = active_set(&trial, bounds) != active_set(&sigma, bounds);
        prev = Some((g, pg, dir));
        sigma = trial;
        eval = new_eval;
        f = f_trial;
        history.push(f);
    }
    Ok(SigmaStep { sigma, evaluation: eval, objective: history, line_search_failures: failures })
}

/// Runs outer iterations `state.k .. cfg.outer_iterations`, calling
/// `on_iteration` after each one.
pub fn run_modified_admm(
    problem: &InversionProblem,
    cfg: &OuterConfig,
    mut state: AdmmState,
    mut on_iteration: impl FnMut(&AdmmState) -> Result<()>,
) -> Result<AdmmState> {
    cfg.validate(problem.forward.params.sigma0)?;
    let n = problem.n_dofs();
    for (name, len) in [("sigma", state.sigma.len()), ("s", state.s.len()), ("y", state.y.len())] {
        if len != n {
            return Err(Error::Data(format!("state field `{name}` has {len} entries, expected {n}")));
        }
    }
    let started = Instant::now();
    let mut eval = problem.evaluate(&state.sigma)?;

    while state.k < cfg.outer_iterations {
        let k = state.k + 1;
        let bounds = cfg.truncation.bounds(k);
        let projected = project_box(&state.sigma, &bounds);
        if projected != state.sigma {
            eval = problem.evaluate(&projected)?;
        }
        let sigma_prev = projected;

        let step = sigma_subproblem(problem, &sigma_prev, &eval, &state.s, &state.y, &bounds, cfg)?;
        let sigma_next = step.sigma;
        eval = step.evaluation;
        let lag_grad_diff_l2 = problem.tv.gradient_distance(&state.s, &sigma_next);

        let warm = InnerState { s: project_box(&state.s, &bounds), d: state.d.clone(), u: state.u.clone() };
        let inner = problem.tv.s_subproblem(&sigma_next, &state.y, &warm, cfg.alpha, cfg.beta, &bounds, &cfg.inner);
        let s_next = inner.state.s;

        let y_next = match cfg.multiplier_mode {
            MultiplierMode::Gradient => eval.gradient.clone(),
            MultiplierMode::Classical => {
                let diff: Vec<f64> = s_next.iter().zip(&sigma_next).map(|(a, b)| a - b).collect();
                let kd = problem.tv.stiffness.mul_vec(&diff);
                state.y.iter().zip(&kd).map(|(y, v)| y + cfg.beta * v).collect()
            }
        };

        let step_l2 = problem.l2_norm(&sigma_next.iter().zip(&sigma_prev).map(|(a, b)| a - b).collect::<Vec<_>>());
        let diff: Vec<f64> = s_next.iter().zip(&sigma_next).map(|(a, b)| a - b).collect();
        let record = IterationRecord {
            k,
            lagrangian: augmented_lagrangian(eval.misfit, &sigma_next, &s_next, &y_next, cfg.alpha, cfg.beta, &problem.tv),
            misfit: eval.misfit,
            tv: problem.tv.tv_seminorm(&s_next),
            s_sigma_l2: problem.l2_norm(&diff),
            grad_diff_l2: problem.tv.gradient_distance(&s_next, &sigma_next),
            sigma_error: problem.sigma_error(&sigma_next),
            step_l2,
            lag_grad_diff_l2,
            multiplier_residual: y_next.iter().zip(&eval.gradient).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
            nlcg_objective: step.objective,
            line_search_failures: step.line_search_failures,
            inner_primal_residual: inner.primal_residual,
            lower_bound: bounds.lower,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        info!(
            "k={} L={:.6e} G={:.6e} TV={:.6e} |s-sigma|={:.3e} |grad(s-sigma)|={:.3e} err={}",
            record.k,
            record.lagrangian,
            record.misfit,
            record.tv,
            record.s_sigma_l2,
            record.grad_diff_l2,
            record.sigma_error.map_or("-".to_string(), |e| format!("{e:.6e}"))
        );

        state.sigma = sigma_next;
        state.s = s_next;
        state.y = y_next;
        state.d = inner.state.d;
        state.u = inner.state.u;
        state.k = k;
        state.history.push(record);
        on_iteration(&state)?;

        if cfg.early_stop_tol.is_some_and(|tol| step_l2 < tol) {
            break;
        }
    }
    Ok(state)
}

/// Header of the per-iteration CSV log.
pub const CSV_HEADER: &str = "k,L,G,TV,s_sigma_l2,grad_s_sigma_l2,sigma_err,wall_time_s";

/// One CSV line; the wall time is written as 0 unless `with_wall_time`.
pub fn csv_line(r: &IterationRecord, with_wall_time: bool) -> String {
    format!(
        "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{}",
        r.k,
        r.lagrangian,
        r.misfit,
        r.tv,
        r.s_sigma_l2,
        r.grad_diff_l2,
        r.sigma_error.map_or(String::new(), |e| format!("{e:.17e}")),
        if with_wall_time { format!("{:.3}", r.wall_time_s) } else { "0".to_string() }
    )
}
