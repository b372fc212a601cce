//! Forward eddy-current solves, boundary misfit and its gradient.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_dipole_load, assemble_state_matrix, curl_curl_element, edge_mass_element, weighted_edge_mass, FemSpace,
    PhysicalParams, SourceSpec, TraceOperator, TraceValues,
};
use crate::sparse::{dot, factorize, Factorization};
use crate::tv::TvOperator;

/// Residual above which a saddle solve is reported as a failure.
pub const MAX_RELATIVE_RESIDUAL: f64 = 1e-6;

/// Discrete forward problem for a fixed mesh, source and physical parameters.
#[derive(Debug, Clone)]
pub struct ForwardProblem {
    pub space: FemSpace,
    pub params: PhysicalParams,
    pub trace: TraceOperator,
    source_load: Vec<Complex64>,
}

/// Solution of the saddle system for one conductivity.
#[derive(Debug)]
pub struct State {
    pub e: Vec<Complex64>,
    pub phi: Vec<Complex64>,
    pub relative_residual: f64,
    factorization: Factorization,
}

impl ForwardProblem {
    pub fn new(space: FemSpace, params: PhysicalParams, source: &SourceSpec) -> Result<Self> {
        params.validate()?;
        let edge_load = assemble_dipole_load(&space, source, params.omega)?;
        let mut source_load = edge_load;
        source_load.resize(space.n_saddle(), Complex64::new(0.0, 0.0));
        let trace = TraceOperator::new(&space);
        Ok(Self { space, params, trace, source_load })
    }

    pub fn n_sigma(&self) -> usize {
        self.space.n_conductor_dofs()
    }

    fn solve_checked(&self, fac: &Factorization, rhs: &[Complex64]) -> Result<(Vec<Complex64>, f64)> {
        let x = fac.solve(rhs)?;
        let res = fac.relative_residual(&x, rhs);
        if !(res <= MAX_RELATIVE_RESIDUAL) {
            return Err(Error::Solver(format!("saddle solve residual {res:.3e} exceeds {MAX_RELATIVE_RESIDUAL:.0e}")));
        }
        Ok((x, res))
    }

    /// Assembles, factorizes and solves the state equation.
    pub fn solve_state(&self, sigma: &[f64]) -> Result<State> {
        let matrix = assemble_state_matrix(&self.space, sigma, &self.params)?;
        let factorization = factorize(&matrix)?;
        let (mut x, relative_residual) = self.solve_checked(&factorization, &self.source_load)?;
        let phi = x.split_off(self.space.n_edge_dofs);
        Ok(State { e: x, phi, relative_residual, factorization })
    }

    /// Tangential boundary trace of a state.
    pub fn observe(&self, state: &State) -> TraceValues {
        self.trace.evaluate(&state.e)
    }

    pub fn misfit(&self, state: &State, obs: &TraceValues) -> Result<f64> {
        self.trace.misfit(&state.e, obs)
    }

    /// Edge part of the adjoint solution. The saddle matrix is complex
    /// symmetric, so the state factorization is reused as is.
    pub fn solve_adjoint(&self, state: &State, obs: &TraceValues) -> Result<Vec<Complex64>> {
        Ok(self.solve_adjoint_with_residual(state, obs)?.0)
    }

    /// Adjoint edge field and the relative residual of the saddle solve.
    pub fn solve_adjoint_with_residual(&self, state: &State, obs: &TraceValues) -> Result<(Vec<Complex64>, f64)> {
        let mut rhs = self.trace.adjoint_load(&state.e, obs)?;
        rhs.resize(self.space.n_saddle(), Complex64::new(0.0, 0.0));
        let (mut f, res) = self.solve_checked(&state.factorization, &rhs)?;
        f.truncate(self.space.n_edge_dofs);
        Ok((f, res))
    }

    /// Derivative of the misfit with respect to the `V_h` coefficients,
    /// `g_p = omega Im sum_T int_T phi_p E . F`.
    pub fn gradient(&self, e: &[Complex64], f: &[Complex64]) -> Vec<f64> {
        let space = &self.space;
        let omega = self.params.omega;
        let contributions: Vec<[(Option<usize>, f64); 4]> = space
            .conductor_cells
            .par_iter()
            .map(|&t| {
                let geo = &space.geometry[t];
                let edges = &space.edges_local[t];
                let dofs = space.tet_edge_dofs(t);
                let mut prod = [[0.0; 6]; 6];
                for a in 0..6 {
                    for b in 0..6 {
                        if let (Some(i), Some(j)) = (dofs[a], dofs[b]) {
                            prod[a][b] = (e[i] * f[j]).im;
                        }
                    }
                }
                let tet = &space.mesh.tets[t];
                [0, 1, 2, 3].map(|r| {
                    let Some(p) = space.conductor_dof[tet[r]] else { return (None, 0.0) };
                    let mut unit = [0.0; 4];
                    unit[r] = 1.0;
                    let m = weighted_edge_mass(geo, edges, &unit);
                    let mut s = 0.0;
                    for a in 0..6 {
                        for b in 0..6 {
                            s += prod[a][b] * m[a][b];
                        }
                    }
                    (Some(p), omega * s)
                })
            })
            .collect();
        let mut g = vec![0.0; space.n_conductor_dofs()];
        for row in contributions {
            for (p, v) in row {
                if let Some(p) = p {
                    g[p] += v;
                }
            }
        }
        g
    }

    /// Misfit, its gradient and the state at `sigma`.
    pub fn misfit_and_gradient(&self, sigma: &[f64], obs: &TraceValues) -> Result<(f64, Vec<f64>, State)> {
        let state = self.solve_state(sigma)?;
        let g = self.misfit(&state, obs)?;
        let f = self.solve_adjoint(&state, obs)?;
        let grad = self.gradient(&state.e, &f);
        Ok((g, grad, state))
    }

    /// `|B^T v| / |v|` for an edge field `v`, using the constraint rows of
    /// the saddle matrix.
    pub fn divergence_residual(&self, state: &State, v: &[Complex64]) -> f64 {
        let ne = self.space.n_edge_dofs;
        let m = state.factorization.matrix();
        let mut num = 0.0;
        for j in ne..m.nrows() {
            let r: Complex64 = m.row(j).filter(|(i, _)| *i < ne).map(|(i, b)| b * v[i]).sum();
            num += r.norm_sqr();
        }
        let den: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    /// `|v|_{H(curl)}` over the whole mesh.
    pub fn hcurl_norm(&self, v: &[Complex64]) -> f64 {
        let space = &self.space;
        (0..space.mesh.n_tets())
            .into_par_iter()
            .map(|t| {
                let geo = &space.geometry[t];
                let edges = &space.edges_local[t];
                let k = curl_curl_element(geo, edges);
                let m = edge_mass_element(geo, edges);
                let dofs = space.tet_edge_dofs(t);
                let mut s = 0.0;
                for a in 0..6 {
                    for b in 0..6 {
                        if let (Some(i), Some(j)) = (dofs[a], dofs[b]) {
                            s += (v[i].conj() * v[j]).re * (k[a][b] + m[a][b]);
                        }
                    }
                }
                s
            })
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }

    /// Misfit only (one factorization, no adjoint).
    pub fn misfit_at(&self, sigma: &[f64], obs: &TraceValues) -> Result<f64> {
        let state = self.solve_state(sigma)?;
        self.misfit(&state, obs)
    }
}

/// `G + alpha TV(s) + y^T (s - sigma) + beta/2 |grad s - grad sigma|^2`,
/// with `y` a dual vector paired directly with nodal coefficients.
pub fn augmented_lagrangian(
    misfit: f64,
    sigma: &[f64],
    s: &[f64],
    y: &[f64],
    alpha: f64,
    beta: f64,
    tv: &TvOperator,
) -> f64 {
    let diff: Vec<f64> = s.iter().zip(sigma).map(|(a, b)| a - b).collect();
    let gd = tv.gradient_distance(s, sigma);
    misfit + alpha * tv.tv_seminorm(s) + dot(y, &diff) + 0.5 * beta * gd * gd
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, DomainSpec, Interval};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem() -> ForwardProblem {
        let spec = DomainSpec {
            x_range: Interval::new(0.0, 1.0),
            y_range: Interval::new(0.0, 1.0),
            z_range: Interval::new(0.0, 1.0),
            z_interface: 0.5,
            cells_per_axis: [3, 3, 4],
            refine_levels: 0,
        };
        let space = FemSpace::new(build_box_mesh(&spec).unwrap());
        let src = SourceSpec { positions: vec![[0.41, 0.37, 0.8], [0.6, 0.55, 0.9]], direction: [1.0, 0.0, 0.0] };
        ForwardProblem::new(space, PhysicalParams { omega: 3.0, ..Default::default() }, &src).unwrap()
    }

    fn random_sigma(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen::<f64>() * 2.0).collect()
    }

    #[test]
    fn state_solve_is_accurate() {
        let fp = problem();
        assert!(fp.n_sigma() > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sigma = random_sigma(fp.n_sigma(), &mut rng);
        let state = fp.solve_state(&sigma).unwrap();
        assert!(state.relative_residual < 1e-10, "{}", state.relative_residual);
        assert!(state.e.iter().any(|v| v.norm() > 0.0));
    }

    #[test]
    fn misfit_vanishes_on_own_data() {
        let fp = problem();
        let sigma = vec![0.5; fp.n_sigma()];
        let state = fp.solve_state(&sigma).unwrap();
        let obs = fp.observe(&state);
        assert!(fp.misfit(&state, &obs).unwrap() < 1e-25);
        let (_, grad, _) = fp.misfit_and_gradient(&sigma, &obs).unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let fp = problem();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = random_sigma(fp.n_sigma(), &mut rng);
        let obs = fp.observe(&fp.solve_state(&truth).unwrap());
        let sigma = vec![0.2; fp.n_sigma()];
        let (_, grad, _) = fp.misfit_and_gradient(&sigma, &obs).unwrap();
        for _ in 0..3 {
            let dir: Vec<f64> = (0..fp.n_sigma()).map(|_| rng.gen::<f64>() - 0.5).collect();
            let h = 1e-4;
            let shifted = |s: f64| -> Vec<f64> { sigma.iter().zip(&dir).map(|(a, d)| a + s * d).collect() };
            let fd = (fp.misfit_at(&shifted(h), &obs).unwrap() - fp.misfit_at(&shifted(-h), &obs).unwrap()) / (2.0 * h);
            let an: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-12), "fd {fd} vs adjoint {an}");
        }
    }

    #[test]
    fn state_is_discretely_divergence_free() {
        let fp = problem();
        let sigma = vec![0.0; fp.n_sigma()];
        let state = fp.solve_state(&sigma).unwrap();
        assert!(fp.divergence_residual(&state, &state.e) < 1e-8);
        let obs: TraceValues = fp.observe(&state).iter().map(|f| f.map(|p| p.map(|v| v * 0.5))).collect();
        let f = fp.solve_adjoint(&state, &obs).unwrap();
        assert!(fp.divergence_residual(&state, &f) < 1e-8);
        assert!(fp.hcurl_norm(&state.e) > 0.0);
    }

    #[test]
    fn zero_source_and_linearity() {
        let fp = problem();
        let sigma = vec![0.3; fp.n_sigma()];
        let zero = ForwardProblem::new(
            fp.space.clone(),
            fp.params,
            &SourceSpec { positions: vec![], direction: [1.0, 0.0, 0.0] },
        )
        .unwrap();
        let s0 = zero.solve_state(&sigma).unwrap();
        assert!(s0.e.iter().chain(&s0.phi).all(|v| v.norm() == 0.0));
        let src = SourceSpec { positions: vec![[0.41, 0.37, 0.8], [0.6, 0.55, 0.9]], direction: [1.0, 0.0, 0.0] };
        let scaled = ForwardProblem::new(
            fp.space.clone(),
            fp.params,
            &SourceSpec { direction: [-2.5, 0.0, 0.0], ..src },
        )
        .unwrap();
        let a = fp.solve_state(&sigma).unwrap();
        let b = scaled.solve_state(&sigma).unwrap();
        for (x, y) in a.e.iter().zip(&b.e) {
            assert!((x * -2.5 - y).norm() <= 1e-10 * (1.0 + y.norm()));
        }
    }

    #[test]
    fn adjoint_is_linear_in_mismatch() {
        let fp = problem();
        let sigma = vec![0.3; fp.n_sigma()];
        let state = fp.solve_state(&sigma).unwrap();
        let own = fp.observe(&state);
        assert!(fp.solve_adjoint(&state, &own).unwrap().iter().all(|v| v.norm() == 0.0));
        let shift = |c: f64| -> TraceValues { own.iter().map(|f| f.map(|p| p.map(|v| v * (1.0 + c)))).collect() };
        let f1 = fp.solve_adjoint(&state, &shift(0.1)).unwrap();
        let f3 = fp.solve_adjoint(&state, &shift(0.3)).unwrap();
        for (a, b) in f1.iter().zip(&f3) {
            assert!((a * 3.0 - b).norm() <= 1e-10 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn augmented_lagrangian_reduces_to_misfit_terms() {
        let fp = problem();
        let tv = TvOperator::new(&fp.space);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sigma = random_sigma(fp.n_sigma(), &mut rng);
        let s = random_sigma(fp.n_sigma(), &mut rng);
        let y = random_sigma(fp.n_sigma(), &mut rng);
        let g = 0.75;
        let same = augmented_lagrangian(g, &sigma, &sigma, &y, 0.1, 3.0, &tv);
        assert!((same - (g + 0.1 * tv.tv_seminorm(&sigma))).abs() < 1e-12);
        assert_eq!(augmented_lagrangian(g, &sigma, &s, &vec![0.0; s.len()], 0.0, 0.0, &tv), g);
    }

    #[test]
    fn dimension_and_range_errors() {
        let fp = problem();
        assert!(matches!(fp.solve_state(&[0.0]), Err(Error::Dimension { .. })));
        let sigma = vec![-1.5; fp.n_sigma()];
        assert!(matches!(fp.solve_state(&sigma), Err(Error::Conductivity { .. })));
    }
}
