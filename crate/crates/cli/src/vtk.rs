//! Legacy ASCII VTK export of nodal conductivity fields.

use std::fmt::Write as _;
use std::path::Path;

use eddytv::fem::{CellGradient, FemSpace};
use eddytv::mesh::CellTag;

use crate::error::{CliError, Result};

/// VTK cell type id of a linear tetrahedron.
pub const VTK_TETRA: u8 = 10;

/// `V_h` coefficient vectors to export as point data.
#[derive(Debug, Clone, Copy)]
pub struct NodalFields<'a> {
    pub sigma: &'a [f64],
    pub s: &'a [f64],
    pub y: &'a [f64],
}

/// Point data `sigma`, `s`, `y` (zero off `V_h`); cell data `grad_sigma`
/// (|grad sigma|, zero on `Omega0`), `region` (0 = `Omega0`, 1 = `OmegaC`)
/// and `subregion`.
pub fn vtk_string(space: &FemSpace, fields: NodalFields<'_>, title: &str) -> String {
    let mesh = &space.mesh;
    let nv = mesh.n_vertices();
    let nt = mesh.n_tets();
    let mut out = String::with_capacity(64 * (nv + nt));
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str(title.lines().next().unwrap_or(""));
    out.push_str("\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {nv} double");
    for p in &mesh.vertices {
        let _ = writeln!(out, "{:e} {:e} {:e}", p[0], p[1], p[2]);
    }
    let _ = writeln!(out, "CELLS {nt} {}", 5 * nt);
    for t in &mesh.tets {
        let _ = writeln!(out, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(out, "CELL_TYPES {nt}");
    for _ in 0..nt {
        let _ = writeln!(out, "{VTK_TETRA}");
    }

    let _ = writeln!(out, "POINT_DATA {nv}");
    for (name, values) in [("sigma", fields.sigma), ("s", fields.s), ("y", fields.y)] {
        scalar_header(&mut out, name);
        for dof in &space.conductor_dof {
            let v = dof.map_or(0.0, |i| values[i]);
            let _ = writeln!(out, "{v:e}");
        }
    }

    let grad = CellGradient::new(space);
    let mut grad_norm = vec![0.0; nt];
    for (&t, g) in grad.cells.iter().zip(grad.apply(fields.sigma)) {
        grad_norm[t] = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    }
    let _ = writeln!(out, "CELL_DATA {nt}");
    scalar_header(&mut out, "grad_sigma");
    for v in grad_norm {
        let _ = writeln!(out, "{v:e}");
    }
    out.push_str("SCALARS region int 1\nLOOKUP_TABLE default\n");
    for tag in &mesh.cell_tags {
        out.push_str(if *tag == CellTag::OmegaC { "1\n" } else { "0\n" });
    }
    out.push_str("SCALARS subregion int 1\nLOOKUP_TABLE default\n");
    for tag in &mesh.subregion_tags {
        let _ = writeln!(out, "{tag}");
    }
    out
}

fn scalar_header(out: &mut String, name: &str) {
    let _ = write!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default\n");
}

pub fn export_vtk(space: &FemSpace, fields: NodalFields<'_>, title: &str, path: &Path) -> Result<()> {
    let n = space.n_conductor_dofs();
    for (name, v) in [("sigma", fields.sigma), ("s", fields.s), ("y", fields.y)] {
        if v.len() != n {
            let msg = format!("field `{name}` has {} values, expected {n}", v.len());
            return Err(eddytv::Error::Data(msg).into());
        }
    }
    std::fs::write(path, vtk_string(space, fields, title)).map_err(|e| CliError::io(path, e))
}
