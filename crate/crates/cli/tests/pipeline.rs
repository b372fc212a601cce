use std::path::Path;
use std::process::Command;

use eddytv::fem::FemSpace;
use eddytv::harness::BoundaryTrace;
use eddytv::mesh::build_box_mesh;
use eddytv_cli::commands::*;
use eddytv_cli::config::{Overrides, Resolved, RunConfig};
use eddytv_cli::vtk::{export_vtk, vtk_string, NodalFields, VTK_TETRA};

const SMALL: &str = r#"
version = 1
preset = 1
[domain]
cells_per_axis = [5, 5, 11]
[inversion]
outer_iterations = 4
beta = 0.5
[output]
checkpoint_every = 2
"#;

fn small(ov: Overrides) -> Resolved {
    RunConfig::parse(SMALL).unwrap().resolve(&ov).unwrap()
}

fn tiny_space() -> FemSpace {
    let cfg = RunConfig::parse(
        "[domain]\nx_range = { min = 0.0, max = 1.0 }\ny_range = { min = 0.0, max = 1.0 }\nz_range = { min = 0.0, max = 1.5 }\nz_interface = 1.0\ncells_per_axis = [2, 2, 3]\n[truth]\ninclusions = []\n",
    )
    .unwrap()
    .resolve(&Overrides::default())
    .unwrap();
    FemSpace::new(build_box_mesh(&cfg.experiment.domain).unwrap())
}

#[test]
fn vtk_counts_and_cell_types() {
    let space = tiny_space();
    let n = space.n_conductor_dofs();
    let v = vec![0.5; n];
    let text = vtk_string(&space, NodalFields { sigma: &v, s: &v, y: &v }, "t");
    let mesh = &space.mesh;
    assert!(text.contains(&format!("POINTS {} double", mesh.n_vertices())));
    assert!(text.contains(&format!("CELLS {} {}", mesh.n_tets(), 5 * mesh.n_tets())));
    let types = text.split("CELL_TYPES").nth(1).unwrap();
    let ids: Vec<&str> = types.lines().skip(1).take(mesh.n_tets()).collect();
    assert!(ids.iter().all(|l| l.trim() == VTK_TETRA.to_string()));
}

#[test]
fn vtk_constant_field_round_trips_through_reader() {
    use vtkio::model::{Attribute, DataSet, IOBuffer, Vtk};
    let space = tiny_space();
    let n = space.n_conductor_dofs();
    assert!(n > 0);
    let c = 2.75;
    let sigma = vec![c; n];
    let zeros = vec![0.0; n];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.vtk");
    export_vtk(&space, NodalFields { sigma: &sigma, s: &zeros, y: &zeros }, "constant", &path).unwrap();

    let vtk = Vtk::import(&path).unwrap();
    let DataSet::UnstructuredGrid { pieces, .. } = vtk.data else { panic!("not an unstructured grid") };
    let piece = pieces[0].load_piece_data(None).unwrap();
    assert_eq!(piece.num_points(), space.mesh.n_vertices());
    assert_eq!(piece.cells.types.len(), space.mesh.n_tets());
    assert!(piece.cells.types.iter().all(|t| *t as u8 == VTK_TETRA));
    let sigma_attr = piece
        .data
        .point
        .iter()
        .find_map(|a| match a {
            Attribute::DataArray(d) if d.name == "sigma" => Some(d.data.clone()),
            _ => None,
        })
        .expect("sigma point data");
    let IOBuffer::F64(values) = sigma_attr else { panic!("sigma is not f64") };
    for (v, dof) in values.iter().zip(&space.conductor_dof) {
        let expect = if dof.is_some() { c } else { 0.0 };
        assert_eq!(*v, expect);
    }
    let grad = piece
        .data
        .cell
        .iter()
        .find_map(|a| match a {
            Attribute::DataArray(d) if d.name == "grad_sigma" => Some(d.data.clone()),
            _ => None,
        })
        .expect("grad_sigma cell data");
    assert_eq!(grad.len(), space.mesh.n_tets());
}

#[test]
fn mesh_edges_grow_about_eightfold_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let mut edges = Vec::new();
    for r in 0..3 {
        let cfg = small(Overrides { refine: Some(r), ..Default::default() });
        edges.push(cmd_mesh(&cfg, &dir.path().join(format!("m{r}.txt"))).unwrap().edges);
    }
    let ratio = edges[2] as f64 / edges[1] as f64;
    assert!((6.5..=8.0).contains(&ratio), "edges {edges:?}");
    assert!(edges[1] > 6 * edges[0]);
}

#[test]
fn mesh_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    let cfg = small(Overrides::default());
    let sa = cmd_mesh(&cfg, &a).unwrap();
    let sb = cmd_mesh(&cfg, &b).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(file_sha256(&a).unwrap(), file_sha256(&b).unwrap());
    let m = Manifest::read(&manifest_path(&a)).unwrap();
    assert_eq!(m.mesh_hash, sa.hash);
}

fn synth(dir: &Path, name: &str, noise: f64, seed: u64) -> BoundaryTrace {
    let cfg = small(Overrides { noise: Some(noise), seed: Some(seed), ..Default::default() });
    cmd_synth(&cfg, &dir.join(name)).unwrap()
}

#[test]
fn synth_noise_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let clean_a = synth(dir.path(), "a.txt", 0.0, 1);
    let clean_b = synth(dir.path(), "b.txt", 0.0, 2);
    let noisy = synth(dir.path(), "n.txt", 0.005, 1);
    assert_eq!(clean_a.values, clean_b.values);
    assert_ne!(clean_a.values, noisy.values);
    assert_eq!(file_sha256(&dir.path().join("a.txt")).unwrap(), file_sha256(&dir.path().join("b.txt")).unwrap());

    let m = Manifest::read(&manifest_path(&dir.path().join("n.txt"))).unwrap();
    assert_eq!(m.preset, "example1");
    assert_eq!(m.seed, 1);
    assert_eq!(m.noise, 0.005);
    assert_eq!(m.mesh_hash, noisy.mesh_hash);
    assert_eq!(m.config.experiment.params.sigma0, 1.0);
    assert_eq!(m.outputs["n.txt"], file_sha256(&dir.path().join("n.txt")).unwrap());
}

#[test]
fn invert_resume_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "trace.txt", 0.005, 3);
    let cfg = small(Overrides::default());

    let full = cmd_invert(&cfg, &d.join("trace.txt"), &d.join("full"), None).unwrap();
    assert_eq!(full.k, 4);
    let log = std::fs::read_to_string(d.join("full").join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(d.join("full").join(SIGMA_VTK).exists());

    // the checkpoint of iteration 2 was overwritten by iteration 4; rebuild one
    let mut half = cfg.clone();
    half.experiment.outer.outer_iterations = 2;
    let first = cmd_invert(&half, &d.join("trace.txt"), &d.join("half"), None).unwrap();
    assert_eq!(first.k, 2);
    let resumed =
        cmd_invert(&cfg, &d.join("trace.txt"), &d.join("resumed"), Some(&d.join("half").join(CHECKPOINT_FILE))).unwrap();
    assert_eq!(resumed.sigma, full.sigma);
    let log_resumed = std::fs::read_to_string(d.join("resumed").join(LOG_FILE)).unwrap();
    assert_eq!(log_resumed, log);

    let m = Manifest::read(&d.join("full").join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.noise, 0.005);
    assert_eq!(m.outputs[LOG_FILE], file_sha256(&d.join("full").join(LOG_FILE)).unwrap());

    let report = cmd_report(&cfg, &d.join("full")).unwrap();
    assert_eq!(report.iterations, 4);
    assert!((report.initial_error.unwrap() - 5.4f64.sqrt()).abs() < 1.0);
    assert!(d.join("full").join(TRUTH_VTK).exists());
}

#[test]
fn invert_rejects_trace_of_other_mesh() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "trace.txt", 0.0, 1);
    let cfg = small(Overrides { refine: Some(1), ..Default::default() });
    let err = cmd_invert(&cfg, &dir.path().join("trace.txt"), &dir.path().join("run"), None).unwrap_err();
    assert!(err.to_string().contains("mesh"), "{err}");
}

fn run_bin(args: &[&str], cwd: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_eddytv"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("ok.toml"), SMALL).unwrap();
    std::fs::write(d.join("unknown.toml"), "[inversion]\nbetta = 1.0\n").unwrap();
    std::fs::write(d.join("bad.toml"), "[domain]\nz_interface = 9.0\n").unwrap();
    // a dipole inside the conductor cannot be represented
    std::fs::write(
        d.join("source.toml"),
        format!("{SMALL}[source]\npositions = [[0.0, 0.0, -1.0]]\ndirection = [1.0, 0.0, 0.0]\n"),
    )
    .unwrap();

    assert_eq!(run_bin(&["mesh", "-c", "ok.toml", "-o", "m.txt"], d), 0);
    assert_eq!(run_bin(&["mesh", "-c", "unknown.toml"], d), 2);
    assert_eq!(run_bin(&["mesh", "-c", "bad.toml"], d), 2);
    assert_eq!(run_bin(&["mesh", "--preset", "7"], d), 2);
    assert_eq!(run_bin(&["synth", "-c", "source.toml", "-o", "t.txt"], d), 3);
    assert_eq!(run_bin(&["invert", "-c", "ok.toml", "-t", "missing.txt"], d), 1);
}
