//! Finite element spaces and discrete forms.
//!
//! * `R_h`: lowest-order Whitney edge elements, one DOF per edge, with edges on
//!   `GammaD` faces removed (zero tangential trace).
//! * `U_h`: P1 multipliers on `Omega0`, vanishing on the sides and on the
//!   interface (free on `Gamma`).
//! * `V_h`: P1 conductivities on `OmegaC`, vanishing on `dOmegaC`.
//!
//! All volume integrals are evaluated exactly from the moments of barycentric
//! coordinates, `int_T l^a = |T| 3! a! / (|a| + 3)!`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{barycentric, cross, dot, norm, sub, triangle_area, CellTag, FaceTag, Mesh, Point, LOCAL_EDGES};
use crate::sparse::CsrMatrix;

pub type CellVectors = Vec<[f64; 3]>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalParams {
    pub omega: f64,
    pub mu: f64,
    pub epsilon: f64,
    /// Background conductivity on `OmegaC`.
    pub sigma0: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self { omega: 1.0, mu: 1.0, epsilon: 1.0, sigma0: 1.0 }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("omega", self.omega), ("mu", self.mu), ("epsilon", self.epsilon), ("sigma0", self.sigma0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(k, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Point dipoles `curl(delta(x - x_ij) direction)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSpec {
    pub positions: Vec<Point>,
    pub direction: Point,
}

impl Default for SourceSpec {
    fn default() -> Self {
        Self::dipole_grid()
    }
}

impl SourceSpec {
    /// `x_ij = (-2 + 0.1 i, -2 + 0.1 j, 0.04)`, `i, j = 1..=36`, pointing along x.
    pub fn dipole_grid() -> Self {
        let mut positions = Vec::with_capacity(36 * 36);
        for i in 1..=36 {
            for j in 1..=36 {
                positions.push([-2.0 + 0.1 * i as f64, -2.0 + 0.1 * j as f64, 0.04]);
            }
        }
        Self { positions, direction: [1.0, 0.0, 0.0] }
    }
}

/// Affine data of one tetrahedron.
#[derive(Debug, Clone, Copy)]
pub struct TetGeometry {
    pub volume: f64,
    /// Gradients of the four barycentric coordinates.
    pub grads: [Point; 4],
}

impl TetGeometry {
    pub fn new(p: &[Point; 4]) -> Self {
        let (e1, e2, e3) = (sub(&p[1], &p[0]), sub(&p[2], &p[0]), sub(&p[3], &p[0]));
        let det = dot(&e1, &cross(&e2, &e3));
        let g1 = cross(&e2, &e3).map(|v| v / det);
        let g2 = cross(&e3, &e1).map(|v| v / det);
        let g3 = cross(&e1, &e2).map(|v| v / det);
        let g0 = [-(g1[0] + g2[0] + g3[0]), -(g1[1] + g2[1] + g3[1]), -(g1[2] + g2[2] + g3[2])];
        Self { volume: det.abs() / 6.0, grads: [g0, g1, g2, g3] }
    }
}

/// `int_T l_m l_n / |T|`.
fn moment2(m: usize, n: usize) -> f64 {
    if m == n {
        1.0 / 10.0
    } else {
        1.0 / 20.0
    }
}

/// `int_T l_m l_n l_r / |T|`.
fn moment3(m: usize, n: usize, r: usize) -> f64 {
    match (m == n, n == r, m == r) {
        (true, true, _) => 1.0 / 20.0,
        (false, false, false) => 1.0 / 120.0,
        _ => 1.0 / 60.0,
    }
}

/// Local endpoints `(p, q)` of each edge, ordered by global vertex id so that
/// `w = l_p grad l_q - l_q grad l_p` follows the global orientation.
pub fn oriented_edges(tet: &[usize; 4]) -> [(usize, usize); 6] {
    LOCAL_EDGES.map(|(a, b)| if tet[a] < tet[b] { (a, b) } else { (b, a) })
}

/// Constant curls `2 grad l_p x grad l_q`.
pub fn whitney_curls(geo: &TetGeometry, edges: &[(usize, usize); 6]) -> [Point; 6] {
    edges.map(|(p, q)| cross(&geo.grads[p], &geo.grads[q]).map(|v| 2.0 * v))
}

/// Whitney functions evaluated at barycentric coordinates `l`.
pub fn whitney_values(geo: &TetGeometry, edges: &[(usize, usize); 6], l: &[f64; 4]) -> [Point; 6] {
    edges.map(|(p, q)| {
        let (gp, gq) = (geo.grads[p], geo.grads[q]);
        [l[p] * gq[0] - l[q] * gp[0], l[p] * gq[1] - l[q] * gp[1], l[p] * gq[2] - l[q] * gp[2]]
    })
}

pub fn curl_curl_element(geo: &TetGeometry, edges: &[(usize, usize); 6]) -> [[f64; 6]; 6] {
    let curls = whitney_curls(geo, edges);
    let mut k = [[0.0; 6]; 6];
    for a in 0..6 {
        for b in 0..6 {
            k[a][b] = geo.volume * dot(&curls[a], &curls[b]);
        }
    }
    k
}

/// `int_T c w_a . w_b` for the P1 weight `c = sum_r weight[r] l_r`.
pub fn weighted_edge_mass(geo: &TetGeometry, edges: &[(usize, usize); 6], weight: &[f64; 4]) -> [[f64; 6]; 6] {
    let g = &geo.grads;
    let wm = |m: usize, n: usize| -> f64 { (0..4).map(|r| weight[r] * moment3(m, n, r)).sum() };
    let mut out = [[0.0; 6]; 6];
    for a in 0..6 {
        let (pa, qa) = edges[a];
        for b in a..6 {
            let (pb, qb) = edges[b];
            let v = wm(pa, pb) * dot(&g[qa], &g[qb]) - wm(pa, qb) * dot(&g[qa], &g[pb]) - wm(qa, pb) * dot(&g[pa], &g[qb])
                + wm(qa, qb) * dot(&g[pa], &g[pb]);
            out[a][b] = geo.volume * v;
            out[b][a] = out[a][b];
        }
    }
    out
}

/// `int_T w_a . w_b` (unit weight).
pub fn edge_mass_element(geo: &TetGeometry, edges: &[(usize, usize); 6]) -> [[f64; 6]; 6] {
    let g = &geo.grads;
    let mut out = [[0.0; 6]; 6];
    for a in 0..6 {
        let (pa, qa) = edges[a];
        for b in 0..6 {
            let (pb, qb) = edges[b];
            let v = moment2(pa, pb) * dot(&g[qa], &g[qb]) - moment2(pa, qb) * dot(&g[qa], &g[pb])
                - moment2(qa, pb) * dot(&g[pa], &g[qb])
                + moment2(qa, qb) * dot(&g[pa], &g[pb]);
            out[a][b] = geo.volume * v;
        }
    }
    out
}

/// P1 mass element `|T| (1 + delta_ij) / 20`.
pub fn p1_mass_element(volume: f64) -> [[f64; 4]; 4] {
    let mut m = [[volume / 20.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = volume / 10.0;
    }
    m
}

/// One `Gamma` face together with the tet that owns it.
#[derive(Debug, Clone)]
pub struct GammaFace {
    pub face: usize,
    pub tet: usize,
    pub area: f64,
    pub normal: Point,
    pub vertices: [Point; 3],
}

/// Three-point, degree-2 triangle rule: points `(2/3, 1/6, 1/6)` and
/// permutations, equal weights.
pub const TRI_RULE_ID: &str = "tri3-deg2";
pub const TRI_POINTS: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];
pub const TRI_WEIGHTS: [f64; 3] = [1.0 / 3.0; 3];

impl GammaFace {
    pub fn quadrature_points(&self) -> [Point; 3] {
        TRI_POINTS.map(|b| {
            let mut x = [0.0; 3];
            for (k, v) in self.vertices.iter().enumerate() {
                for d in 0..3 {
                    x[d] += b[k] * v[d];
                }
            }
            x
        })
    }
}

/// Removes the normal component: `n x v x n`.
pub fn tangential<T>(v: [T; 3], n: &Point) -> [T; 3]
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    let vn = v[0] * n[0] + v[1] * n[1] + v[2] * n[2];
    [v[0] - vn * n[0], v[1] - vn * n[1], v[2] - vn * n[2]]
}

/// Mesh plus the DOF maps of `R_h`, `U_h` and `V_h`.
#[derive(Debug, Clone)]
pub struct FemSpace {
    pub mesh: Mesh,
    pub geometry: Vec<TetGeometry>,
    /// Oriented local edges per tet.
    pub edges_local: Vec<[(usize, usize); 6]>,
    /// Global edge id -> `R_h` index.
    pub edge_dof: Vec<Option<usize>>,
    pub n_edge_dofs: usize,
    /// Vertex id -> `U_h` index.
    pub multiplier_dof: Vec<Option<usize>>,
    pub n_multiplier_dofs: usize,
    /// Vertex id -> `V_h` index.
    pub conductor_dof: Vec<Option<usize>>,
    /// `V_h` index -> vertex id.
    pub conductor_nodes: Vec<usize>,
    /// Tets tagged `OmegaC`.
    pub conductor_cells: Vec<usize>,
    /// Vertices of `OmegaC` tets (closure), sorted.
    pub conductor_vertices: Vec<usize>,
    pub gamma_faces: Vec<GammaFace>,
}

impl FemSpace {
    pub fn new(mesh: Mesh) -> Self {
        let nt = mesh.n_tets();
        let geometry: Vec<TetGeometry> = (0..nt).map(|t| TetGeometry::new(&mesh.tet_points(t))).collect();
        let edges_local: Vec<_> = mesh.tets.iter().map(oriented_edges).collect();

        // face -> owning tets
        let mut face_tets: Vec<([usize; 3], usize)> =
            mesh.tets.iter().enumerate().flat_map(|(t, tet)| crate::mesh::tet_faces(tet).map(|f| (f, t))).collect();
        face_tets.sort_unstable();

        let mut on_gamma_d_edge = vec![false; mesh.n_edges()];
        let edge_id = |a: usize, b: usize| mesh.edges.binary_search(&[a.min(b), a.max(b)]).unwrap();
        for f in mesh.boundary_faces.iter().filter(|f| f.tag == FaceTag::GammaD) {
            let [a, b, c] = f.vertices;
            for (u, v) in [(a, b), (b, c), (a, c)] {
                on_gamma_d_edge[edge_id(u, v)] = true;
            }
        }
        let mut n_edge_dofs = 0;
        let edge_dof: Vec<Option<usize>> = on_gamma_d_edge
            .iter()
            .map(|&c| {
                (!c).then(|| {
                    n_edge_dofs += 1;
                    n_edge_dofs - 1
                })
            })
            .collect();

        // Vertices touching a region, and vertices on that region's boundary
        // (excluding Gamma for Omega0).
        let nv = mesh.n_vertices();
        let mut in_region = [vec![false; nv], vec![false; nv]];
        let mut on_region_boundary = [vec![false; nv], vec![false; nv]];
        let region = |tag: CellTag| match tag {
            CellTag::Omega0 => 0,
            CellTag::OmegaC => 1,
        };
        for (t, tet) in mesh.tets.iter().enumerate() {
            for &v in tet {
                in_region[region(mesh.cell_tags[t])][v] = true;
            }
        }
        let gamma_keys: std::collections::HashSet<[usize; 3]> = mesh
            .boundary_faces
            .iter()
            .filter(|f| f.tag == FaceTag::Gamma)
            .map(|f| {
                let mut k = f.vertices;
                k.sort_unstable();
                k
            })
            .collect();
        let mut i = 0;
        while i < face_tets.len() {
            let mut j = i;
            while j < face_tets.len() && face_tets[j].0 == face_tets[i].0 {
                j += 1;
            }
            let face = face_tets[i].0;
            let owners: Vec<usize> = face_tets[i..j].iter().map(|&(_, t)| t).collect();
            match owners.as_slice() {
                [t] => {
                    let r = region(mesh.cell_tags[*t]);
                    let on_top = r == 0 && gamma_keys.contains(&face);
                    if !on_top {
                        for &v in &face {
                            on_region_boundary[r][v] = true;
                        }
                    }
                }
                [a, b] => {
                    if mesh.cell_tags[*a] != mesh.cell_tags[*b] {
                        for &v in &face {
                            on_region_boundary[0][v] = true;
                            on_region_boundary[1][v] = true;
                        }
                    }
                }
                _ => unreachable!("a face is shared by at most two tets"),
            }
            i = j;
        }

        let mut n_multiplier_dofs = 0;
        let multiplier_dof = (0..nv)
            .map(|v| {
                (in_region[0][v] && !on_region_boundary[0][v]).then(|| {
                    n_multiplier_dofs += 1;
                    n_multiplier_dofs - 1
                })
            })
            .collect();
        let mut conductor_nodes = Vec::new();
        let conductor_dof = (0..nv)
            .map(|v| {
                (in_region[1][v] && !on_region_boundary[1][v]).then(|| {
                    conductor_nodes.push(v);
                    conductor_nodes.len() - 1
                })
            })
            .collect();
        let conductor_vertices = (0..nv).filter(|&v| in_region[1][v]).collect();
        let conductor_cells = (0..nt).filter(|&t| mesh.cell_tags[t] == CellTag::OmegaC).collect();

        let gamma_faces = mesh
            .boundary_faces
            .iter()
            .enumerate()
            .filter(|(_, f)| f.tag == FaceTag::Gamma)
            .map(|(fi, f)| {
                let mut key = f.vertices;
                key.sort_unstable();
                let k = face_tets.partition_point(|(g, _)| *g < key);
                let tet = face_tets[k].1;
                let vertices = f.vertices.map(|v| mesh.vertices[v]);
                let n = cross(&sub(&vertices[1], &vertices[0]), &sub(&vertices[2], &vertices[0]));
                let len = norm(&n);
                let mut normal = n.map(|c| c / len);
                // outward: away from the opposite vertex
                let opposite = mesh.tets[tet].iter().find(|v| !f.vertices.contains(v)).unwrap();
                if dot(&normal, &sub(&mesh.vertices[*opposite], &vertices[0])) > 0.0 {
                    normal = normal.map(|c| -c);
                }
                GammaFace {
                    face: fi,
                    tet,
                    area: triangle_area(&vertices[0], &vertices[1], &vertices[2]),
                    normal,
                    vertices,
                }
            })
            .collect();

        Self {
            mesh,
            geometry,
            edges_local,
            edge_dof,
            n_edge_dofs,
            multiplier_dof,
            n_multiplier_dofs,
            conductor_dof,
            conductor_nodes,
            conductor_cells,
            conductor_vertices,
            gamma_faces,
        }
    }

    pub fn n_conductor_dofs(&self) -> usize {
        self.conductor_nodes.len()
    }

    /// Size of the saddle-point system.
    pub fn n_saddle(&self) -> usize {
        self.n_edge_dofs + self.n_multiplier_dofs
    }

    /// `R_h` indices of the six local edges of tet `t`.
    pub fn tet_edge_dofs(&self, t: usize) -> [Option<usize>; 6] {
        self.mesh.tet_edges[t].map(|e| self.edge_dof[e])
    }

    /// Nodal values of a `V_h` field at the four vertices of `t` (zero on `dOmegaC`).
    pub fn conductor_values(&self, t: usize, field: &[f64]) -> [f64; 4] {
        self.mesh.tets[t].map(|v| self.conductor_dof[v].map_or(0.0, |i| field[i]))
    }

    /// Volume of `OmegaC`.
    pub fn conductor_volume(&self) -> f64 {
        self.conductor_cells.iter().map(|&t| self.geometry[t].volume).sum()
    }

    /// Evaluates an edge field inside tet `t` at physical point `x`.
    pub fn eval_edge_field(&self, t: usize, e: &[Complex64], x: &Point) -> [Complex64; 3] {
        let l = barycentric(&self.mesh.tet_points(t), x);
        let w = whitney_values(&self.geometry[t], &self.edges_local[t], &l);
        let mut v = [Complex64::new(0.0, 0.0); 3];
        for (a, dof) in self.tet_edge_dofs(t).iter().enumerate() {
            if let Some(i) = dof {
                for d in 0..3 {
                    v[d] += e[*i] * w[a][d];
                }
            }
        }
        v
    }
}


/// Checks `sigma + sigma0 > 0` at every conductor node.
pub fn check_conductivity(space: &FemSpace, sigma: &[f64], sigma0: f64) -> Result<()> {
    if sigma.len() != space.n_conductor_dofs() {
        return Err(Error::Dimension { expected: space.n_conductor_dofs(), found: sigma.len() });
    }
    for (i, &s) in sigma.iter().enumerate() {
        let value = s + sigma0;
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::Conductivity { node: space.conductor_nodes[i], value });
        }
    }
    Ok(())
}

/// Saddle-point matrix `[[A, B], [B^T, 0]]` over `R_h + U_h` with
/// `A = mu^-1 curl-curl - i omega (sigma + sigma0) mass` (mass on `OmegaC`
/// only) and `B_kj = epsilon int_Omega0 w_k . grad phi_j`.
pub fn assemble_state_matrix(space: &FemSpace, sigma: &[f64], params: &PhysicalParams) -> Result<CsrMatrix<Complex64>> {
    check_conductivity(space, sigma, params.sigma0)?;
    let ne = space.n_edge_dofs;
    let n = space.n_saddle();
    let inv_mu = 1.0 / params.mu;

    let blocks: Vec<Vec<(usize, usize, Complex64)>> = (0..space.mesh.n_tets())
        .into_par_iter()
        .map(|t| {
            let geo = &space.geometry[t];
            let edges = &space.edges_local[t];
            let dofs = space.tet_edge_dofs(t);
            let k = curl_curl_element(geo, edges);
            let mut out = Vec::with_capacity(36 + 48);
            let mass = match space.mesh.cell_tags[t] {
                CellTag::OmegaC => {
                    let c = space.conductor_values(t, sigma).map(|s| s + params.sigma0);
                    Some(weighted_edge_mass(geo, edges, &c))
                }
                CellTag::Omega0 => None,
            };
            for a in 0..6 {
                let Some(i) = dofs[a] else { continue };
                for b in 0..6 {
                    let Some(j) = dofs[b] else { continue };
                    let mut v = Complex64::new(inv_mu * k[a][b], 0.0);
                    if let Some(m) = &mass {
                        v -= Complex64::new(0.0, params.omega * m[a][b]);
                    }
                    out.push((i, j, v));
                }
            }
            if space.mesh.cell_tags[t] == CellTag::Omega0 {
                let tet = &space.mesh.tets[t];
                for a in 0..6 {
                    let Some(i) = dofs[a] else { continue };
                    let (p, q) = edges[a];
                    let mean_w = sub(&geo.grads[q], &geo.grads[p]).map(|c| c * geo.volume / 4.0);
                    for (r, &v) in tet.iter().enumerate() {
                        let Some(j) = space.multiplier_dof[v] else { continue };
                        let val = Complex64::new(params.epsilon * dot(&mean_w, &geo.grads[r]), 0.0);
                        out.push((i, ne + j, val));
                        out.push((ne + j, i, val));
                    }
                }
            }
            out
        })
        .collect();
    let triplets: Vec<_> = blocks.into_iter().flatten().collect();
    Ok(CsrMatrix::from_triplets(n, n, &triplets))
}

/// `i omega sum_ij direction . curl w_k (x_ij)` over `R_h`; Whitney curls are
/// constant per tet so the point evaluation is exact.
pub fn assemble_dipole_load(space: &FemSpace, src: &SourceSpec, omega: f64) -> Result<Vec<Complex64>> {
    let mut load = vec![Complex64::new(0.0, 0.0); space.n_edge_dofs];
    for p in &src.positions {
        let t = space
            .mesh
            .locate_point(p)
            .ok_or_else(|| Error::Domain(format!("dipole at {p:?} lies outside the mesh")))?;
        if space.mesh.cell_tags[t] != CellTag::Omega0 {
            return Err(Error::Domain(format!("dipole at {p:?} is not inside Omega0")));
        }
        let curls = whitney_curls(&space.geometry[t], &space.edges_local[t]);
        for (a, dof) in space.tet_edge_dofs(t).iter().enumerate() {
            if let Some(i) = dof {
                load[*i] += Complex64::new(0.0, omega * dot(&src.direction, &curls[a]));
            }
        }
    }
    Ok(load)
}

/// Tangential trace of every `R_h` basis function at the quadrature points
/// of the `Gamma` faces.
#[derive(Debug, Clone)]
pub struct TraceOperator {
    faces: Vec<FaceTrace>,
    n_edge_dofs: usize,
}

#[derive(Debug, Clone)]
struct FaceTrace {
    /// `area * weight` per point.
    weights: [f64; 3],
    dofs: [Option<usize>; 6],
    /// Tangential basis values `[point][local edge]`.
    basis: [[Point; 6]; 3],
}

/// Tangential values at quadrature points, `[face][point][component]`.
pub type TraceValues = Vec<[[Complex64; 3]; 3]>;

impl TraceOperator {
    pub fn new(space: &FemSpace) -> Self {
        let faces = space
            .gamma_faces
            .iter()
            .map(|gf| {
                let t = gf.tet;
                let pts = gf.quadrature_points();
                let tet_pts = space.mesh.tet_points(t);
                let basis = pts.map(|x| {
                    let l = barycentric(&tet_pts, &x);
                    whitney_values(&space.geometry[t], &space.edges_local[t], &l).map(|w| tangential(w, &gf.normal))
                });
                FaceTrace { weights: TRI_WEIGHTS.map(|w| w * gf.area), dofs: space.tet_edge_dofs(t), basis }
            })
            .collect();
        Self { faces, n_edge_dofs: space.n_edge_dofs }
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn evaluate(&self, e: &[Complex64]) -> TraceValues {
        self.faces
            .iter()
            .map(|f| {
                let mut out = [[Complex64::new(0.0, 0.0); 3]; 3];
                for (q, row) in out.iter_mut().enumerate() {
                    for (a, dof) in f.dofs.iter().enumerate() {
                        if let Some(i) = dof {
                            for d in 0..3 {
                                row[d] += e[*i] * f.basis[q][a][d];
                            }
                        }
                    }
                }
                out
            })
            .collect()
    }

    fn check(&self, obs: &TraceValues) -> Result<()> {
        if obs.len() != self.faces.len() {
            return Err(Error::Data(format!(
                "trace covers {} Gamma faces, mesh has {}",
                obs.len(),
                self.faces.len()
            )));
        }
        Ok(())
    }

    /// `1/2 int_Gamma |E_t - E_obs,t|^2`.
    pub fn misfit(&self, e: &[Complex64], obs: &TraceValues) -> Result<f64> {
        self.check(obs)?;
        let vals = self.evaluate(e);
        let mut g = 0.0;
        for ((f, v), o) in self.faces.iter().zip(&vals).zip(obs) {
            for q in 0..3 {
                let d2: f64 = (0..3).map(|d| (v[q][d] - o[q][d]).norm_sqr()).sum();
                g += f.weights[q] * d2;
            }
        }
        Ok(0.5 * g)
    }

    /// `int_Gamma conj(E_obs - E)_t . w_k` over `R_h`.
    ///
    /// Only the mismatch is conjugated (the Whitney test functions are real).
    /// With this convention and the complex symmetry of the saddle matrix,
    /// `omega Im(E . F)` is the exact derivative of the misfit.
    pub fn adjoint_load(&self, e: &[Complex64], obs: &TraceValues) -> Result<Vec<Complex64>> {
        self.check(obs)?;
        let vals = self.evaluate(e);
        let mut load = vec![Complex64::new(0.0, 0.0); self.n_edge_dofs];
        for ((f, v), o) in self.faces.iter().zip(&vals).zip(obs) {
            for q in 0..3 {
                let mismatch = [0, 1, 2].map(|d| (o[q][d] - v[q][d]).conj());
                for (a, dof) in f.dofs.iter().enumerate() {
                    if let Some(i) = dof {
                        let b = &f.basis[q][a];
                        load[*i] += (mismatch[0] * b[0] + mismatch[1] * b[1] + mismatch[2] * b[2]) * f.weights[q];
                    }
                }
            }
        }
        Ok(load)
    }

    /// `int_Gamma |v|^2` for trace values `v`.
    pub fn l2_norm_sq(&self, v: &TraceValues) -> f64 {
        self.faces
            .iter()
            .zip(v)
            .map(|(f, vals)| (0..3).map(|q| f.weights[q] * (0..3).map(|d| vals[q][d].norm_sqr()).sum::<f64>()).sum::<f64>())
            .sum()
    }
}

/// P1 mass matrix on `V_h` (boundary rows and columns removed).
pub fn nodal_mass_matrix(space: &FemSpace) -> CsrMatrix<f64> {
    conductor_matrix(space, |t| p1_mass_element(space.geometry[t].volume), true)
}

/// P1 mass matrix over all vertices of `OmegaC` (indexed by vertex id).
pub fn full_nodal_mass_matrix(space: &FemSpace) -> CsrMatrix<f64> {
    conductor_matrix(space, |t| p1_mass_element(space.geometry[t].volume), false)
}

/// P1 stiffness `int grad phi_i . grad phi_j` on `V_h`.
pub fn stiffness_matrix(space: &FemSpace) -> CsrMatrix<f64> {
    conductor_matrix(
        space,
        |t| {
            let g = &space.geometry[t];
            let mut k = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    k[i][j] = g.volume * dot(&g.grads[i], &g.grads[j]);
                }
            }
            k
        },
        true,
    )
}

fn conductor_matrix(space: &FemSpace, element: impl Fn(usize) -> [[f64; 4]; 4], constrained: bool) -> CsrMatrix<f64> {
    let n = if constrained { space.n_conductor_dofs() } else { space.mesh.n_vertices() };
    let index = |v: usize| if constrained { space.conductor_dof[v] } else { Some(v) };
    let mut trip = Vec::new();
    for &t in &space.conductor_cells {
        let m = element(t);
        let tet = &space.mesh.tets[t];
        for a in 0..4 {
            let Some(i) = index(tet[a]) else { continue };
            for b in 0..4 {
                let Some(j) = index(tet[b]) else { continue };
                trip.push((i, j, m[a][b]));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &trip)
}

/// `V_h -> (D_h)^3`: piecewise-constant gradients on the `OmegaC` cells.
#[derive(Debug, Clone)]
pub struct CellGradient {
    pub cells: Vec<usize>,
    pub volumes: Vec<f64>,
    rows: Vec<[(Option<usize>, Point); 4]>,
    n_dofs: usize,
}

impl CellGradient {
    pub fn new(space: &FemSpace) -> Self {
        let cells = space.conductor_cells.clone();
        let volumes = cells.iter().map(|&t| space.geometry[t].volume).collect();
        let rows = cells
            .iter()
            .map(|&t| {
                let tet = &space.mesh.tets[t];
                [0, 1, 2, 3].map(|r| (space.conductor_dof[tet[r]], space.geometry[t].grads[r]))
            })
            .collect();
        Self { cells, volumes, rows, n_dofs: space.n_conductor_dofs() }
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn apply(&self, v: &[f64]) -> CellVectors {
        self.rows
            .iter()
            .map(|row| {
                let mut g = [0.0; 3];
                for (dof, grad) in row {
                    if let Some(i) = dof {
                        for d in 0..3 {
                            g[d] += v[*i] * grad[d];
                        }
                    }
                }
                g
            })
            .collect()
    }

    /// `G^T W c` with `W` the cell volumes.
    pub fn apply_transpose_weighted(&self, c: &[[f64; 3]]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs];
        for ((row, vol), cv) in self.rows.iter().zip(&self.volumes).zip(c) {
            for (dof, grad) in row {
                if let Some(i) = dof {
                    out[*i] += vol * dot(grad, cv);
                }
            }
        }
        out
    }

    /// `sum_T |T| <a_T, b_T>`.
    pub fn inner(&self, a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        self.volumes.iter().zip(a.iter().zip(b)).map(|(v, (x, y))| v * dot(x, y)).sum()
    }

    pub fn l2_norm(&self, a: &[[f64; 3]]) -> f64 {
        self.inner(a, a).sqrt()
    }
}
