//! The `mesh`, `synth`, `invert` and `report` pipeline stages.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use eddytv::eddy::ForwardProblem;
use eddytv::fem::FemSpace;
use eddytv::harness::{add_noise, generate_synthetic_data, inside_outside_means, BoundaryTrace};
use eddytv::inversion::{csv_line, run_modified_admm, AdmmState, InversionProblem, CSV_HEADER};
use eddytv::mesh::{build_box_mesh, write_mesh, Mesh};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Resolved;
use crate::error::{CliError, Result};
use crate::vtk::{export_vtk, NodalFields};

pub const LOG_FILE: &str = "log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const STATE_FILE: &str = "state.json";
pub const FAILED_STATE_FILE: &str = "failed_state.json";
pub const SIGMA_VTK: &str = "sigma.vtk";
pub const TRUTH_VTK: &str = "truth.vtk";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to repeat a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub preset: String,
    pub seed: u64,
    pub noise: f64,
    pub mesh_hash: String,
    /// Input path -> SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
    /// Output file name -> SHA-256 of its content.
    pub outputs: BTreeMap<String, String>,
    pub config: Resolved,
}

impl Manifest {
    fn new(command: &str, cfg: &Resolved, mesh: &Mesh) -> Self {
        Self {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            preset: cfg.experiment.name.clone(),
            seed: cfg.experiment.seed,
            noise: cfg.experiment.noise,
            mesh_hash: mesh.content_hash(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            config: cfg.clone(),
        }
    }

    fn record(map: &mut BTreeMap<String, String>, key: String, path: &Path) -> Result<()> {
        map.insert(key, file_sha256(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// `<path>.manifest.json` next to a single output file.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn build_space(cfg: &Resolved) -> Result<FemSpace> {
    let mut mesh = build_box_mesh(&cfg.experiment.domain)?;
    let labels: Vec<(u32, _)> =
        cfg.experiment.truth.inclusions.iter().enumerate().map(|(i, inc)| (i as u32 + 1, inc.bounds)).collect();
    mesh.tag_subregions(&labels);
    Ok(FemSpace::new(mesh))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshSummary {
    pub vertices: usize,
    pub edges: usize,
    pub tets: usize,
    pub h: f64,
    pub hash: String,
}

impl std::fmt::Display for MeshSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "vertices {} edges {} tets {} h {:.4} hash {}", self.vertices, self.edges, self.tets, self.h, self.hash)
    }
}

/// Builds the mesh, writes it to `out` and a manifest beside it.
pub fn cmd_mesh(cfg: &Resolved, out: &Path) -> Result<MeshSummary> {
    let space = build_space(cfg)?;
    let mesh = &space.mesh;
    write_mesh(mesh, out)?;
    let mut manifest = Manifest::new("mesh", cfg, mesh);
    Manifest::record(&mut manifest.outputs, file_name(out), out)?;
    manifest.write(&manifest_path(out))?;
    Ok(MeshSummary {
        vertices: mesh.n_vertices(),
        edges: mesh.n_edges(),
        tets: mesh.n_tets(),
        h: mesh.h,
        hash: mesh.content_hash(),
    })
}

/// Generates the (noisy) boundary trace of the configured truth.
pub fn cmd_synth(cfg: &Resolved, out: &Path) -> Result<BoundaryTrace> {
    let p = &cfg.experiment;
    let space = build_space(cfg)?;
    log::info!("synthesizing on {} edges refined {} time(s)", space.mesh.n_edges(), cfg.refine_extra);
    let clean = generate_synthetic_data(&p.truth, &p.params, &p.source, &space, cfg.refine_extra)?;
    let trace = add_noise(&clean, p.noise, p.seed)?;
    trace.write(out)?;
    let mut manifest = Manifest::new("synth", cfg, &space.mesh);
    Manifest::record(&mut manifest.outputs, file_name(out), out)?;
    manifest.write(&manifest_path(out))?;
    Ok(trace)
}

/// Runs the outer loop on `trace`, writing the CSV log, checkpoints, the
/// final state and `sigma.vtk` into `out_dir`.
pub fn cmd_invert(cfg: &Resolved, trace_path: &Path, out_dir: &Path, resume: Option<&Path>) -> Result<AdmmState> {
    let p = &cfg.experiment;
    let space = build_space(cfg)?;
    let trace = BoundaryTrace::read(trace_path)?;
    trace.check_mesh(&space.mesh)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;

    let truth = p.truth.cell_values(&space.mesh);
    let forward = ForwardProblem::new(space.clone(), p.params, &p.source)?;
    let problem = InversionProblem::new(forward, trace.values, Some(truth))?;
    let start = match resume {
        Some(path) => read_state(path)?,
        None => problem.initial_state(),
    };

    let log_path = out_dir.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?);
    let io_err = |e| CliError::io(&log_path, e);
    writeln!(log, "{CSV_HEADER}").map_err(io_err)?;
    for r in &start.history {
        writeln!(log, "{}", csv_line(r, cfg.wall_time)).map_err(io_err)?;
    }
    log.flush().map_err(io_err)?;

    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let mut callback_err = None;
    let mut last = start.clone();
    let result = run_modified_admm(&problem, &p.outer, start, |state| {
        last.clone_from(state);
        on_iteration(&mut log, &log_path, state, cfg, &checkpoint).map_err(|e| {
            let msg = e.to_string();
            callback_err = Some(e);
            eddytv::Error::Data(msg)
        })
    });
    let state = match result {
        Ok(s) => s,
        Err(e) => {
            let snapshot = out_dir.join(FAILED_STATE_FILE);
            if let Err(w) = write_state(&last, &snapshot) {
                log::error!("could not write {}: {w}", snapshot.display());
            } else {
                log::error!("state after iteration {} saved to {}", last.k, snapshot.display());
            }
            return Err(callback_err.unwrap_or(e.into()));
        }
    };
    drop(log);

    let state_path = out_dir.join(STATE_FILE);
    write_state(&state, &state_path)?;
    let vtk_path = out_dir.join(SIGMA_VTK);
    let fields = NodalFields { sigma: &state.sigma, s: &state.s, y: &state.y };
    export_vtk(&space, fields, &format!("{} reconstruction after {} iterations", p.name, state.k), &vtk_path)?;

    let mut manifest = Manifest::new("invert", cfg, &space.mesh);
    Manifest::record(&mut manifest.inputs, trace_path.display().to_string(), trace_path)?;
    if let Some(r) = resume {
        Manifest::record(&mut manifest.inputs, r.display().to_string(), r)?;
    }
    for path in [&log_path, &state_path, &vtk_path] {
        Manifest::record(&mut manifest.outputs, file_name(path), path)?;
    }
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(state)
}

fn on_iteration(
    log: &mut BufWriter<File>,
    log_path: &Path,
    state: &AdmmState,
    cfg: &Resolved,
    checkpoint: &Path,
) -> Result<()> {
    let r = state.history.last().expect("history grows every iteration");
    log::info!("k {} L {:.6e} G {:.6e} err {:?}", r.k, r.lagrangian, r.misfit, r.sigma_error);
    let io_err = |e| CliError::io(log_path, e);
    writeln!(log, "{}", csv_line(r, cfg.wall_time)).map_err(io_err)?;
    log.flush().map_err(io_err)?;
    if state.k % cfg.checkpoint_every == 0 {
        write_state(state, checkpoint)?;
    }
    Ok(())
}

pub fn write_state(state: &AdmmState, path: &Path) -> Result<()> {
    let text = serde_json::to_string(state)?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_state(path: &Path) -> Result<AdmmState> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Summary of a finished inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub iterations: usize,
    pub initial_error: Option<f64>,
    pub final_error: Option<f64>,
    pub first_lagrangian: Option<f64>,
    pub last_lagrangian: Option<f64>,
    pub last_misfit: Option<f64>,
    pub inside_mean: f64,
    pub outside_mean: f64,
    pub max_sigma: f64,
}

impl std::fmt::Display for Report {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"));
        writeln!(f, "iterations      {}", self.iterations)?;
        writeln!(f, "sigma error     {} -> {}", opt(self.initial_error), opt(self.final_error))?;
        writeln!(f, "lagrangian      {} -> {}", opt(self.first_lagrangian), opt(self.last_lagrangian))?;
        writeln!(f, "misfit          {}", opt(self.last_misfit))?;
        writeln!(f, "mean inside     {:.6e}", self.inside_mean)?;
        writeln!(f, "mean outside    {:.6e}", self.outside_mean)?;
        write!(f, "max sigma       {:.6e}", self.max_sigma)
    }
}

/// Summarizes `run_dir/state.json` and writes the truth field as `truth.vtk`.
pub fn cmd_report(cfg: &Resolved, run_dir: &Path) -> Result<Report> {
    let p = &cfg.experiment;
    let space = build_space(cfg)?;
    let state = read_state(&run_dir.join(STATE_FILE))?;
    if state.sigma.len() != space.n_conductor_dofs() {
        return Err(eddytv::Error::Data(format!(
            "state has {} conductivity values, the configured mesh has {}",
            state.sigma.len(),
            space.n_conductor_dofs()
        ))
        .into());
    }
    let cell_truth = p.truth.cell_values(&space.mesh);
    let initial_error = Some(eddytv::harness::sigma_l2_error(&space, &vec![0.0; state.sigma.len()], &cell_truth));
    let inside = p.truth.inside_cells(&space.mesh);
    let (inside_mean, outside_mean) = inside_outside_means(&space, &state.sigma, &inside);

    let nodal = p.truth.nodal_values(&space);
    let zeros = vec![0.0; nodal.len()];
    let fields = NodalFields { sigma: &nodal, s: &nodal, y: &zeros };
    export_vtk(&space, fields, &format!("{} truth", p.name), &run_dir.join(TRUTH_VTK))?;

    Ok(Report {
        iterations: state.k,
        initial_error,
        final_error: Some(eddytv::harness::sigma_l2_error(&space, &state.sigma, &cell_truth)),
        first_lagrangian: state.history.first().map(|r| r.lagrangian),
        last_lagrangian: state.history.last().map(|r| r.lagrangian),
        last_misfit: state.history.last().map(|r| r.misfit),
        inside_mean,
        outside_mean,
        max_sigma: state.sigma.iter().copied().fold(0.0, f64::max),
    })
}
