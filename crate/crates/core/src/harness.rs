//! Synthetic data, noise, experiment presets and error metrics.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eddy::ForwardProblem;
use crate::error::{Error, Result};
use crate::fem::{tangential, FemSpace, PhysicalParams, SourceSpec, TraceValues, TRI_RULE_ID};
use crate::inversion::OuterConfig;
use crate::mesh::{uniform_refine, Aabb, CellTag, DomainSpec, Interval, Mesh};

pub const TRACE_HEADER: &str = "eddytv-trace v1";

/// Tangential boundary values at the `Gamma` quadrature points of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    /// Content hash of the mesh whose `Gamma` faces index `values`.
    pub mesh_hash: String,
    pub rule: String,
    pub noise: f64,
    pub seed: u64,
    pub values: TraceValues,
}

impl BoundaryTrace {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(TRACE_HEADER);
        out.push('\n');
        out.push_str(&format!("mesh_hash {}\n", self.mesh_hash));
        out.push_str(&format!("rule {}\n", self.rule));
        out.push_str(&format!("noise {:e}\n", self.noise));
        out.push_str(&format!("seed {}\n", self.seed));
        out.push_str(&format!("faces {}\n", self.values.len()));
        for face in &self.values {
            let parts: Vec<String> =
                face.iter().flatten().flat_map(|c| [format!("{:e}", c.re), format!("{:e}", c.im)]).collect();
            out.push_str(&parts.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut last = 0;
        let mut next = |what: &str| -> Result<(usize, &str)> {
            let r = lines.next().ok_or_else(|| Error::Parse { line: last + 1, msg: format!("expected {what}") });
            if let Ok((n, _)) = r {
                last = n;
            }
            r
        };
        let (n, header) = next("header")?;
        if header != TRACE_HEADER {
            return Err(Error::Parse { line: n, msg: format!("expected `{TRACE_HEADER}`") });
        }
        fn field<'a>(n: usize, line: &'a str, key: &str) -> Result<&'a str> {
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.trim()),
                _ => Err(Error::Parse { line: n, msg: format!("expected `{key} <value>`") }),
            }
        }
        fn num<T: std::str::FromStr>(n: usize, s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Parse { line: n, msg: format!("invalid number `{s}`") })
        }
        let (n, l) = next("mesh_hash")?;
        let mesh_hash = field(n, l, "mesh_hash")?.to_string();
        let (n, l) = next("rule")?;
        let rule = field(n, l, "rule")?.to_string();
        if rule != TRI_RULE_ID {
            return Err(Error::UnsupportedTag { line: n, tag: rule });
        }
        let (n, l) = next("noise")?;
        let noise = num(n, field(n, l, "noise")?)?;
        let (n, l) = next("seed")?;
        let seed = num(n, field(n, l, "seed")?)?;
        let (n, l) = next("faces")?;
        let nf: usize = num(n, field(n, l, "faces")?)?;
        let mut values = Vec::with_capacity(nf);
        for _ in 0..nf {
            let (n, l) = next("face values")?;
            let nums: Vec<f64> = l.split_whitespace().map(|s| num(n, s)).collect::<Result<_>>()?;
            if nums.len() != 18 {
                return Err(Error::Parse { line: n, msg: format!("expected 18 numbers, found {}", nums.len()) });
            }
            let mut face = [[Complex64::new(0.0, 0.0); 3]; 3];
            for q in 0..3 {
                for d in 0..3 {
                    let k = 2 * (3 * q + d);
                    face[q][d] = Complex64::new(nums[k], nums[k + 1]);
                }
            }
            values.push(face);
        }
        Ok(Self { mesh_hash, rule, noise, seed, values })
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Checks that the trace belongs to `mesh`.
    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        let hash = mesh.content_hash();
        if self.mesh_hash != hash {
            return Err(Error::Data(format!("trace was recorded for mesh {}, not {}", self.mesh_hash, hash)));
        }
        Ok(())
    }
}

/// Axis-aligned inclusion with a constant conductivity perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    pub bounds: Aabb,
    pub value: f64,
}

impl Inclusion {
    pub fn new(x: (f64, f64), y: (f64, f64), z: (f64, f64), value: f64) -> Self {
        let iv = |(a, b): (f64, f64)| Interval::ordered(a, b);
        Self { bounds: Aabb::new(iv(x), iv(y), iv(z)), value }
    }
}

/// Piecewise-constant conductivity perturbation: the first inclusion that
/// contains a point wins, zero elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truth {
    pub inclusions: Vec<Inclusion>,
}

impl Truth {
    pub fn value_at(&self, p: &[f64; 3]) -> f64 {
        self.inclusions.iter().find(|inc| inc.bounds.contains(p)).map_or(0.0, |inc| inc.value)
    }

    /// Per-tet values by centroid membership (zero on `Omega0`).
    pub fn cell_values(&self, mesh: &Mesh) -> Vec<f64> {
        (0..mesh.n_tets())
            .map(|t| match mesh.cell_tags[t] {
                CellTag::OmegaC => self.value_at(&mesh.centroid(t)),
                CellTag::Omega0 => 0.0,
            })
            .collect()
    }

    /// Nodal interpolant on `V_h` (closed boxes).
    pub fn nodal_values(&self, space: &FemSpace) -> Vec<f64> {
        space.conductor_nodes.iter().map(|&v| self.value_at(&space.mesh.vertices[v])).collect()
    }

    /// Indicator per tet: the centroid lies in some inclusion.
    pub fn inside_cells(&self, mesh: &Mesh) -> Vec<bool> {
        (0..mesh.n_tets())
            .map(|t| mesh.cell_tags[t] == CellTag::OmegaC && self.inclusions.iter().any(|i| i.bounds.contains(&mesh.centroid(t))))
            .collect()
    }
}

/// One of the reference experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPreset {
    pub name: String,
    pub domain: DomainSpec,
    pub params: PhysicalParams,
    pub truth: Truth,
    pub outer: OuterConfig,
    pub noise: f64,
    pub seed: u64,
    pub source: SourceSpec,
}

impl ExperimentPreset {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.params.validate()?;
        let b = self.domain.bounds();
        let conductor = Aabb::new(b.x, b.y, Interval::new(b.z.min, self.domain.z_interface));
        for (i, inc) in self.truth.inclusions.iter().enumerate() {
            if !inc.bounds.is_inside(&conductor) {
                return Err(Error::config(format!("inclusions[{i}]"), "inclusion must lie inside the conductor"));
            }
        }
        if !(self.noise >= 0.0) {
            return Err(Error::config("noise", "must be non-negative"));
        }
        Ok(())
    }
}

/// Presets 1 to 3 on the layered box `[-2,2]^2 x [-2,0.2]`.
pub fn preset_example(n: u32) -> Result<ExperimentPreset> {
    let truth = match n {
        1 => vec![Inclusion::new((-0.3, 0.3), (-0.3, 0.3), (-1.0, -0.4), 5.0)],
        // the first x-interval is printed reversed as [-0.1, -0.4]
        2 => vec![
            Inclusion::new((-0.1, -0.4), (-1.0, -0.4), (-0.7, -0.3), 10.0),
            Inclusion::new((0.4, 1.0), (0.4, 1.0), (-0.7, -0.3), 6.0),
        ],
        // the first leg's z-range is printed as [-1.0, 0.4]; the second leg's [-1.0, -0.4] is used
        3 => vec![
            Inclusion::new((-1.5, -1.0), (-1.5, 1.5), (-1.0, -0.4), 10.0),
            Inclusion::new((-1.0, 1.5), (-1.5, -1.0), (-1.0, -0.4), 10.0),
        ],
        _ => return Err(Error::config("preset", format!("unknown preset {n}; expected 1, 2 or 3"))),
    };
    Ok(ExperimentPreset {
        name: format!("example{n}"),
        domain: DomainSpec::layered_box(),
        params: PhysicalParams::default(),
        truth: Truth { inclusions: truth },
        outer: OuterConfig::default(),
        noise: 0.005,
        seed: 1,
        source: SourceSpec::dipole_grid(),
    })
}

/// Solves the state equation with the exact conductivity on `coarse`
/// refined `refine_extra` times and samples its tangential trace at the
/// quadrature points of the coarse `Gamma` faces.
pub fn generate_synthetic_data(
    truth: &Truth,
    params: &PhysicalParams,
    source: &SourceSpec,
    coarse: &FemSpace,
    refine_extra: usize,
) -> Result<BoundaryTrace> {
    let mut fine_mesh = coarse.mesh.clone();
    for _ in 0..refine_extra {
        fine_mesh = uniform_refine(&fine_mesh);
    }
    let fine = ForwardProblem::new(FemSpace::new(fine_mesh), *params, source)?;
    let sigma = truth.nodal_values(&fine.space);
    let state = fine.solve_state(&sigma)?;
    let values = if refine_extra == 0 {
        fine.observe(&state)
    } else {
        coarse
            .gamma_faces
            .iter()
            .map(|gf| {
                let pts = gf.quadrature_points();
                let mut out = [[Complex64::new(0.0, 0.0); 3]; 3];
                for (q, x) in pts.iter().enumerate() {
                    let t = fine
                        .space
                        .mesh
                        .locate_point(x)
                        .ok_or_else(|| Error::Domain(format!("quadrature point {x:?} not found in refined mesh")))?;
                    out[q] = tangential(fine.space.eval_edge_field(t, &state.e, x), &gf.normal);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?
    };
    Ok(BoundaryTrace { mesh_hash: coarse.mesh.content_hash(), rule: TRI_RULE_ID.to_string(), noise: 0.0, seed: 0, values })
}

/// Multiplies each quadrature-point value by `1 + nu xi`, `xi ~ U[-1, 1]`
/// independently per point.
pub fn add_noise(trace: &BoundaryTrace, nu: f64, seed: u64) -> Result<BoundaryTrace> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::config("noise", format!("must be non-negative, got {nu}")));
    }
    let mut out = trace.clone();
    if nu == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for face in out.values.iter_mut() {
        for point in face.iter_mut() {
            let xi: f64 = rng.gen_range(-1.0..=1.0);
            for c in point.iter_mut() {
                *c *= 1.0 + nu * xi;
            }
        }
    }
    out.noise = nu;
    out.seed = seed;
    Ok(out)
}

/// `|sigma_h - sigma_truth|_{L2(OmegaC)}` with per-tet constant truth, exact
/// per cell: `int (sum a_i l_i)^2 = |T|/20 (sum a_i^2 + (sum a_i)^2)`.
pub fn sigma_l2_error(space: &FemSpace, sigma: &[f64], cell_truth: &[f64]) -> f64 {
    space
        .conductor_cells
        .iter()
        .map(|&t| {
            let c = cell_truth[t];
            let a = space.conductor_values(t, sigma).map(|v| v - c);
            let sum: f64 = a.iter().sum();
            let sq: f64 = a.iter().map(|v| v * v).sum();
            space.geometry[t].volume / 20.0 * (sq + sum * sum)
        })
        .sum::<f64>()
        .sqrt()
}

/// Volume-weighted means of a `V_h` field over inclusion and background cells.
pub fn inside_outside_means(space: &FemSpace, sigma: &[f64], inside: &[bool]) -> (f64, f64) {
    let (mut si, mut vi, mut so, mut vo) = (0.0, 0.0, 0.0, 0.0);
    for &t in &space.conductor_cells {
        let vol = space.geometry[t].volume;
        let mean = space.conductor_values(t, sigma).iter().sum::<f64>() / 4.0;
        if inside[t] {
            si += vol * mean;
            vi += vol;
        } else {
            so += vol * mean;
            vo += vol;
        }
    }
    (if vi > 0.0 { si / vi } else { 0.0 }, if vo > 0.0 { so / vo } else { 0.0 })
}
