//! Tetrahedral meshes of the layered box geometry.
//!
//! The box is split by the plane `z = z_interface` into the insulating layer
//! `Omega0` (above) and the conductor `OmegaC` (below). The top face `z = z_max`
//! is the measurement surface `Gamma`; the other five faces carry the
//! tangential Dirichlet condition (`GammaD`).
//!
//! Hexahedral grid cells are cut into six tetrahedra along the main diagonal
//! (Kuhn/Freudenthal). Uniform refinement uses Bey's red rule, which maps Kuhn
//! simplices onto Kuhn simplices, so every refinement level has the same
//! shape-regularity constant.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

const FORMAT_HEADER: &str = "eddytv-mesh v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    /// Normalizes reversed endpoints.
    pub fn ordered(a: f64, b: f64) -> Self {
        Self { min: a.min(b), max: a.max(b) }
    }

    pub fn len(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.min - tol && x <= self.max + tol
    }
}

/// Axis-aligned closed box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub x: Interval,
    pub y: Interval,
    pub z: Interval,
}

impl Aabb {
    pub fn new(x: Interval, y: Interval, z: Interval) -> Self {
        Self { x, y, z }
    }

    pub fn contains(&self, p: &Point) -> bool {
        const TOL: f64 = 1e-12;
        self.x.contains(p[0], TOL) && self.y.contains(p[1], TOL) && self.z.contains(p[2], TOL)
    }

    pub fn volume(&self) -> f64 {
        self.x.len() * self.y.len() * self.z.len()
    }

    pub fn is_inside(&self, other: &Aabb) -> bool {
        let within = |a: &Interval, b: &Interval| a.min >= b.min - 1e-12 && a.max <= b.max + 1e-12;
        within(&self.x, &other.x) && within(&self.y, &other.y) && within(&self.z, &other.z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSpec {
    pub x_range: Interval,
    pub y_range: Interval,
    pub z_range: Interval,
    /// Plane separating `Omega0` (above) from `OmegaC` (below).
    pub z_interface: f64,
    pub cells_per_axis: [usize; 3],
    pub refine_levels: usize,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self::layered_box()
    }
}

impl DomainSpec {
    /// `[-2,2] x [-2,2] x [-2,0.2]` with the conductor below `z = 0`.
    ///
    /// Grid spacing is 0.4 horizontally and 0.2 vertically so that the
    /// interface and the insulating layer are resolved by whole cells.
    pub fn layered_box() -> Self {
        Self {
            x_range: Interval::new(-2.0, 2.0),
            y_range: Interval::new(-2.0, 2.0),
            z_range: Interval::new(-2.0, 0.2),
            z_interface: 0.0,
            cells_per_axis: [10, 10, 11],
            refine_levels: 0,
        }
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::new(self.x_range, self.y_range, self.z_range)
    }

    /// Index of the grid plane that coincides with `z_interface`.
    fn interface_layer(&self) -> Result<usize> {
        let nz = self.cells_per_axis[2] as f64;
        let t = (self.z_interface - self.z_range.min) / self.z_range.len() * nz;
        let k = t.round();
        if (t - k).abs() > 1e-9 {
            return Err(Error::config(
                "z_interface",
                format!(
                    "z = {} does not coincide with a grid plane of the {} z-cells",
                    self.z_interface, self.cells_per_axis[2]
                ),
            ));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, iv) in [("x_range", self.x_range), ("y_range", self.y_range), ("z_range", self.z_range)] {
            if !(iv.min.is_finite() && iv.max.is_finite() && iv.max > iv.min) {
                return Err(Error::config(name, format!("empty or invalid interval [{}, {}]", iv.min, iv.max)));
            }
        }
        if self.cells_per_axis.iter().any(|&n| n == 0) {
            return Err(Error::config("cells_per_axis", "every axis needs at least one cell"));
        }
        if !(self.z_interface > self.z_range.min && self.z_interface < self.z_range.max) {
            return Err(Error::config(
                "z_interface",
                format!("{} must lie strictly inside z_range [{}, {}]", self.z_interface, self.z_range.min, self.z_range.max),
            ));
        }
        self.interface_layer()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellTag {
    Omega0,
    OmegaC,
}

impl CellTag {
    fn as_str(self) -> &'static str {
        match self {
            CellTag::Omega0 => "Omega0",
            CellTag::OmegaC => "OmegaC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaceTag {
    Gamma,
    GammaD,
}

impl FaceTag {
    fn as_str(self) -> &'static str {
        match self {
            FaceTag::Gamma => "Gamma",
            FaceTag::GammaD => "GammaD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryFace {
    pub vertices: [usize; 3],
    pub tag: FaceTag,
}

/// Local vertex pairs of the six tetrahedron edges.
pub const LOCAL_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub tets: Vec<[usize; 4]>,
    /// Sorted, deduplicated edges `(lo, hi)` with `lo < hi`; the index is the
    /// global edge id and the orientation runs from `lo` to `hi`.
    pub edges: Vec<[usize; 2]>,
    /// Global edge id of each local edge, in `LOCAL_EDGES` order.
    pub tet_edges: Vec<[usize; 6]>,
    pub boundary_faces: Vec<BoundaryFace>,
    pub cell_tags: Vec<CellTag>,
    /// 0 means "no inclusion"; positive values label inclusion regions.
    pub subregion_tags: Vec<u32>,
    /// Parent tet of each tet, present on meshes produced by refinement.
    pub parent: Option<Vec<usize>>,
    /// Maximum cell diameter.
    pub h: f64,
}

impl Mesh {
    fn assemble(
        vertices: Vec<Point>,
        tets: Vec<[usize; 4]>,
        boundary_faces: Vec<BoundaryFace>,
        cell_tags: Vec<CellTag>,
        subregion_tags: Vec<u32>,
        parent: Option<Vec<usize>>,
    ) -> Self {
        let (edges, tet_edges) = build_edges(&tets);
        let h = tets.iter().map(|t| tet_diameter(&vertices, t)).fold(0.0, f64::max);
        Self { vertices, tets, edges, tet_edges, boundary_faces, cell_tags, subregion_tags, parent, h }
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    /// All distinct triangular faces, sorted.
    pub fn faces(&self) -> Vec<[usize; 3]> {
        let mut faces: Vec<[usize; 3]> = self.tets.iter().flat_map(|t| tet_faces(t)).collect();
        faces.sort_unstable();
        faces.dedup();
        faces
    }

    pub fn n_faces(&self) -> usize {
        self.faces().len()
    }

    /// `V - E + F - T`; equals 1 for any triangulation of a ball.
    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices() as i64 - self.n_edges() as i64 + self.n_faces() as i64 - self.n_tets() as i64
    }

    pub fn tet_points(&self, t: usize) -> [Point; 4] {
        let v = &self.tets[t];
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]], self.vertices[v[3]]]
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        signed_volume(&self.tet_points(t)).abs()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let p = self.tet_points(t);
        let mut c = [0.0; 3];
        for q in &p {
            for k in 0..3 {
                c[k] += 0.25 * q[k];
            }
        }
        c
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.n_tets()).map(|t| self.tet_volume(t)).sum()
    }

    pub fn region_volume(&self, tag: CellTag) -> f64 {
        (0..self.n_tets()).filter(|&t| self.cell_tags[t] == tag).map(|t| self.tet_volume(t)).sum()
    }

    /// Smallest `3 * inradius / circumradius`-free quality measure: the ratio of
    /// inradius to longest edge, scaled so that a regular tet scores 1.
    pub fn min_quality(&self) -> f64 {
        (0..self.n_tets())
            .map(|t| {
                let p = self.tet_points(t);
                let vol = signed_volume(&p).abs();
                let area: f64 = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]
                    .iter()
                    .map(|f| triangle_area(&p[f[0]], &p[f[1]], &p[f[2]]))
                    .sum();
                let inradius = 3.0 * vol / area;
                // regular tet: inradius / edge = 1 / sqrt(24)
                inradius / tet_diameter(&self.vertices, &self.tets[t]) * 24f64.sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Labels every tet whose centroid lies in one of the (closed) boxes.
    /// Later boxes take precedence over earlier ones.
    pub fn tag_subregions(&mut self, boxes: &[(u32, Aabb)]) {
        for t in 0..self.n_tets() {
            let c = self.centroid(t);
            self.subregion_tags[t] = 0;
            for (label, b) in boxes {
                if b.contains(&c) {
                    self.subregion_tags[t] = *label;
                }
            }
        }
    }

    /// First tet (lowest id) whose closed hull contains `p` within a
    /// barycentric tolerance of 1e-12.
    pub fn locate_point(&self, p: &Point) -> Option<usize> {
        const TOL: f64 = 1e-12;
        (0..self.n_tets()).find(|&t| {
            let q = self.tet_points(t);
            for k in 0..3 {
                let lo = q.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
                let hi = q.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max);
                if p[k] < lo - 1e-9 || p[k] > hi + 1e-9 {
                    return false;
                }
            }
            barycentric(&q, p).iter().all(|&l| l >= -TOL)
        })
    }

    /// Serializes to the versioned text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{FORMAT_HEADER}").unwrap();
        writeln!(s, "vertices {}", self.vertices.len()).unwrap();
        for v in &self.vertices {
            writeln!(s, "{} {} {}", v[0], v[1], v[2]).unwrap();
        }
        writeln!(s, "tets {}", self.tets.len()).unwrap();
        for (t, v) in self.tets.iter().enumerate() {
            writeln!(
                s,
                "{} {} {} {} {} {}",
                v[0],
                v[1],
                v[2],
                v[3],
                self.cell_tags[t].as_str(),
                self.subregion_tags[t]
            )
            .unwrap();
        }
        writeln!(s, "boundary_faces {}", self.boundary_faces.len()).unwrap();
        for f in &self.boundary_faces {
            writeln!(s, "{} {} {} {}", f.vertices[0], f.vertices[1], f.vertices[2], f.tag.as_str()).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines.next().ok_or_else(|| Error::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") })
        };

        let (n, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(Error::Parse { line: n, msg: format!("expected header `{FORMAT_HEADER}`, found `{header}`") });
        }

        let count = |line: usize, text: &str, key: &str| -> Result<usize> {
            let mut it = text.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(k), Some(v), None) if k == key => {
                    v.parse().map_err(|_| Error::Parse { line, msg: format!("bad {key} count `{v}`") })
                }
                _ => Err(Error::Parse { line, msg: format!("expected `{key} <count>`, found `{text}`") }),
            }
        };
        fn fields<const N: usize>(line: usize, text: &str) -> Result<[&str; N]> {
            let parts: Vec<&str> = text.split_whitespace().collect();
            parts
                .try_into()
                .map_err(|p: Vec<&str>| Error::Parse { line, msg: format!("expected {N} fields, found {}", p.len()) })
        }
        fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Parse { line, msg: format!("invalid number `{s}`") })
        }

        let (n, l) = next("vertices block")?;
        let nv = count(n, l, "vertices")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (n, l) = next("vertex")?;
            let [x, y, z] = fields::<3>(n, l)?;
            vertices.push([num(n, x)?, num(n, y)?, num(n, z)?]);
        }

        let (n, l) = next("tets block")?;
        let nt = count(n, l, "tets")?;
        let mut tets = Vec::with_capacity(nt);
        let mut cell_tags = Vec::with_capacity(nt);
        let mut subregion_tags = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (n, l) = next("tet")?;
            let [a, b, c, d, tag, sub] = fields::<6>(n, l)?;
            let t: [usize; 4] = [num(n, a)?, num(n, b)?, num(n, c)?, num(n, d)?];
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::Parse { line: n, msg: "vertex index out of range".into() });
            }
            tets.push(t);
            cell_tags.push(match tag {
                "Omega0" => CellTag::Omega0,
                "OmegaC" => CellTag::OmegaC,
                other => return Err(Error::UnsupportedTag { line: n, tag: other.to_string() }),
            });
            subregion_tags.push(num(n, sub)?);
        }

        let (n, l) = next("boundary_faces block")?;
        let nf = count(n, l, "boundary_faces")?;
        let mut boundary_faces = Vec::with_capacity(nf);
        for _ in 0..nf {
            let (n, l) = next("boundary face")?;
            let [a, b, c, tag] = fields::<4>(n, l)?;
            let vertices: [usize; 3] = [num(n, a)?, num(n, b)?, num(n, c)?];
            if vertices.iter().any(|&v| v >= nv) {
                return Err(Error::Parse { line: n, msg: "vertex index out of range".into() });
            }
            let tag = match tag {
                "Gamma" => FaceTag::Gamma,
                "GammaD" => FaceTag::GammaD,
                other => return Err(Error::UnsupportedTag { line: n, tag: other.to_string() }),
            };
            boundary_faces.push(BoundaryFace { vertices, tag });
        }
        if let Some((n, l)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(Error::Parse { line: n, msg: format!("trailing content `{l}`") });
        }

        Ok(Self::assemble(vertices, tets, boundary_faces, cell_tags, subregion_tags, None))
    }

    /// SHA-256 of the serialized mesh, hex encoded.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn write_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, mesh.to_text())?;
    Ok(())
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    Mesh::from_text(&std::fs::read_to_string(path)?)
}

/// Builds the Kuhn-split grid and applies `spec.refine_levels` uniform refinements.
pub fn build_box_mesh(spec: &DomainSpec) -> Result<Mesh> {
    spec.validate()?;
    let kz = spec.interface_layer()?;
    let mut mesh = grid_mesh(&spec.bounds(), spec.cells_per_axis, kz, Some(spec.z_interface));
    for _ in 0..spec.refine_levels {
        mesh = uniform_refine(&mesh);
    }
    Ok(mesh)
}

/// Kuhn-split grid of a box with every cell tagged `OmegaC`.
pub fn kuhn_grid(bounds: &Aabb, cells_per_axis: [usize; 3]) -> Mesh {
    grid_mesh(bounds, cells_per_axis, cells_per_axis[2], None)
}

/// Cells in z-layers `>= kz_interface` are tagged `Omega0`.
fn grid_mesh(bounds: &Aabb, cells: [usize; 3], kz_interface: usize, z_interface: Option<f64>) -> Mesh {
    let [nx, ny, nz] = cells;
    let coord = |iv: &Interval, n: usize, i: usize| {
        if i == n {
            iv.max
        } else {
            iv.min + iv.len() * (i as f64) / (n as f64)
        }
    };
    let vid = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        let z = match z_interface {
            Some(z) if k == kz_interface => z,
            _ => coord(&bounds.z, nz, k),
        };
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([coord(&bounds.x, nx, i), coord(&bounds.y, ny, j), z]);
            }
        }
    }

    // The six monotone lattice paths from corner (0,0,0) to (1,1,1).
    const PATHS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    let mut cell_tags = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        let tag = if k >= kz_interface { CellTag::Omega0 } else { CellTag::OmegaC };
        for j in 0..ny {
            for i in 0..nx {
                for path in PATHS {
                    let mut c = [i, j, k];
                    let mut t = [vid(c[0], c[1], c[2]); 4];
                    for (step, &axis) in path.iter().enumerate() {
                        c[axis] += 1;
                        t[step + 1] = vid(c[0], c[1], c[2]);
                    }
                    tets.push(t);
                    cell_tags.push(tag);
                }
            }
        }
    }

    let boundary_faces = tag_boundary(&vertices, &tets, bounds.z.max);
    let n = tets.len();
    Mesh::assemble(vertices, tets, boundary_faces, cell_tags, vec![0; n], None)
}

/// Faces that belong to exactly one tet, tagged `Gamma` when all three
/// vertices lie on `z = z_top`.
fn tag_boundary(vertices: &[Point], tets: &[[usize; 4]], z_top: f64) -> Vec<BoundaryFace> {
    let mut count: HashMap<[usize; 3], (usize, [usize; 3])> = HashMap::new();
    for t in tets {
        for (sorted, oriented) in tet_faces(t).into_iter().zip(tet_faces_unsorted(t)) {
            count.entry(sorted).or_insert((0, oriented)).0 += 1;
        }
    }
    let mut faces: Vec<([usize; 3], [usize; 3])> =
        count.into_iter().filter(|(_, (c, _))| *c == 1).map(|(k, (_, f))| (k, f)).collect();
    faces.sort_unstable();
    faces
        .into_iter()
        .map(|(_, f)| {
            let on_top = f.iter().all(|&v| (vertices[v][2] - z_top).abs() <= 1e-12);
            BoundaryFace { vertices: f, tag: if on_top { FaceTag::Gamma } else { FaceTag::GammaD } }
        })
        .collect()
}

/// Red refinement: each tet is split into eight children by Bey's rule.
/// Child `8p + c` descends from tet `p`; boundary faces split into four.
pub fn uniform_refine(mesh: &Mesh) -> Mesh {
    let nv = mesh.n_vertices();
    let mut vertices = mesh.vertices.clone();
    vertices.extend(mesh.edges.iter().map(|&[a, b]| {
        let (p, q) = (mesh.vertices[a], mesh.vertices[b]);
        [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])]
    }));
    let mid = |a: usize, b: usize| -> usize {
        let key = [a.min(b), a.max(b)];
        nv + mesh.edges.binary_search(&key).expect("edge of a mesh face")
    };

    let mut tets = Vec::with_capacity(8 * mesh.n_tets());
    let mut cell_tags = Vec::with_capacity(8 * mesh.n_tets());
    let mut subregion_tags = Vec::with_capacity(8 * mesh.n_tets());
    let mut parent = Vec::with_capacity(8 * mesh.n_tets());
    for (p, t) in mesh.tets.iter().enumerate() {
        let [x0, x1, x2, x3] = *t;
        let (x01, x02, x03) = (mid(x0, x1), mid(x0, x2), mid(x0, x3));
        let (x12, x13, x23) = (mid(x1, x2), mid(x1, x3), mid(x2, x3));
        let children = [
            [x0, x01, x02, x03],
            [x01, x1, x12, x13],
            [x02, x12, x2, x23],
            [x03, x13, x23, x3],
            [x01, x02, x03, x13],
            [x01, x02, x12, x13],
            [x02, x03, x13, x23],
            [x02, x12, x13, x23],
        ];
        for c in children {
            tets.push(c);
            cell_tags.push(mesh.cell_tags[p]);
            subregion_tags.push(mesh.subregion_tags[p]);
            parent.push(p);
        }
    }

    let mut boundary_faces = Vec::with_capacity(4 * mesh.boundary_faces.len());
    for f in &mesh.boundary_faces {
        let [a, b, c] = f.vertices;
        let (ab, ac, bc) = (mid(a, b), mid(a, c), mid(b, c));
        for vertices in [[a, ab, ac], [ab, b, bc], [ac, bc, c], [ab, bc, ac]] {
            boundary_faces.push(BoundaryFace { vertices, tag: f.tag });
        }
    }

    Mesh::assemble(vertices, tets, boundary_faces, cell_tags, subregion_tags, Some(parent))
}

fn build_edges(tets: &[[usize; 4]]) -> (Vec<[usize; 2]>, Vec<[usize; 6]>) {
    let mut edges: Vec<[usize; 2]> = tets
        .iter()
        .flat_map(|t| LOCAL_EDGES.iter().map(move |&(a, b)| [t[a].min(t[b]), t[a].max(t[b])]))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    let tet_edges = tets
        .iter()
        .map(|t| {
            let mut ids = [0; 6];
            for (e, &(a, b)) in LOCAL_EDGES.iter().enumerate() {
                let key = [t[a].min(t[b]), t[a].max(t[b])];
                ids[e] = edges.binary_search(&key).unwrap();
            }
            ids
        })
        .collect();
    (edges, tet_edges)
}

fn tet_faces_unsorted(t: &[usize; 4]) -> [[usize; 3]; 4] {
    [[t[1], t[2], t[3]], [t[0], t[2], t[3]], [t[0], t[1], t[3]], [t[0], t[1], t[2]]]
}

pub(crate) fn tet_faces(t: &[usize; 4]) -> [[usize; 3]; 4] {
    tet_faces_unsorted(t).map(|mut f| {
        f.sort_unstable();
        f
    })
}

fn tet_diameter(vertices: &[Point], t: &[usize; 4]) -> f64 {
    LOCAL_EDGES
        .iter()
        .map(|&(a, b)| dist(&vertices[t[a]], &vertices[t[b]]))
        .fold(0.0, f64::max)
}

pub(crate) fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &Point, b: &Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

fn dist(a: &Point, b: &Point) -> f64 {
    norm(&sub(a, b))
}

pub(crate) fn signed_volume(p: &[Point; 4]) -> f64 {
    dot(&sub(&p[1], &p[0]), &cross(&sub(&p[2], &p[0]), &sub(&p[3], &p[0]))) / 6.0
}

pub(crate) fn triangle_area(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * norm(&cross(&sub(b, a), &sub(c, a)))
}

/// Barycentric coordinates of `x` with respect to the tet `p`.
pub fn barycentric(p: &[Point; 4], x: &Point) -> [f64; 4] {
    let vol = signed_volume(p);
    let mut l = [0.0; 4];
    for i in 0..4 {
        let mut q = *p;
        q[i] = *x;
        l[i] = signed_volume(&q) / vol;
    }
    l
}
