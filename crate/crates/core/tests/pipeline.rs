use eddytv::eddy::ForwardProblem;
use eddytv::fem::FemSpace;
use eddytv::harness::{add_noise, generate_synthetic_data, preset_example, ExperimentPreset, Truth};
use eddytv::inversion::{csv_line, run_modified_admm, InversionProblem, OuterConfig, CSV_HEADER};
use eddytv::mesh::{build_box_mesh, read_mesh, write_mesh};

fn coarse_example1() -> (ExperimentPreset, FemSpace) {
    let mut p = preset_example(1).unwrap();
    p.domain.cells_per_axis = [5, 5, 11];
    let space = FemSpace::new(build_box_mesh(&p.domain).unwrap());
    (p, space)
}

#[test]
fn mesh_file_round_trip_keeps_hash() {
    let (p, _) = coarse_example1();
    let mesh = build_box_mesh(&p.domain).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.txt");
    write_mesh(&mesh, &path).unwrap();
    let back = read_mesh(&path).unwrap();
    assert_eq!(back, mesh);
    assert_eq!(back.content_hash(), mesh.content_hash());
}

#[test]
fn inclusion_value_changes_the_data() {
    let (p, space) = coarse_example1();
    let five = generate_synthetic_data(&p.truth, &p.params, &p.source, &space, 1).unwrap();
    let mut six = p.truth.clone();
    six.inclusions[0].value = 6.0;
    let six = generate_synthetic_data(&six, &p.params, &p.source, &space, 1).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in five.values.iter().zip(&six.values) {
        for q in 0..3 {
            for d in 0..3 {
                num += (a[q][d] - b[q][d]).norm_sqr();
                den += a[q][d].norm_sqr();
            }
        }
    }
    assert!((num / den).sqrt() > 1e-6, "relative change {}", (num / den).sqrt());
}

#[test]
fn background_data_misfit_is_discretization_gap() {
    let (p, space) = coarse_example1();
    let none = Truth { inclusions: vec![] };
    let fine = generate_synthetic_data(&none, &p.params, &p.source, &space, 1).unwrap();
    let same = generate_synthetic_data(&none, &p.params, &p.source, &space, 0).unwrap();
    let fp = ForwardProblem::new(space, p.params, &p.source).unwrap();
    let zero = vec![0.0; fp.n_sigma()];
    let gap = fp.misfit_at(&zero, &fine.values).unwrap();
    assert!(gap > 0.0);
    assert!(fp.misfit_at(&zero, &same.values).unwrap() <= 1e-16);
}

#[test]
fn short_run_keeps_iterates_admissible() {
    let (p, space) = coarse_example1();
    let clean = generate_synthetic_data(&p.truth, &p.params, &p.source, &space, 1).unwrap();
    let data = add_noise(&clean, p.noise, p.seed).unwrap();
    let truth = p.truth.cell_values(&space.mesh);
    let fp = ForwardProblem::new(space, p.params, &p.source).unwrap();
    let problem = InversionProblem::new(fp, data.values, Some(truth)).unwrap();
    let cfg = OuterConfig { outer_iterations: 4, ..OuterConfig::default() };
    let mut seen = Vec::new();
    let state = run_modified_admm(&problem, &cfg, problem.initial_state(), |s| {
        let b = cfg.truncation.bounds(s.k);
        assert!(s.sigma.iter().chain(&s.s).all(|v| b.contains(*v)), "iterate outside bounds at k = {}", s.k);
        seen.push(s.k);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
    assert!(state.history.iter().all(|r| r.multiplier_residual == 0.0));
    assert!(state.history.iter().all(|r| r.sigma_error.is_some()));
    let line = csv_line(&state.history[0], false);
    assert_eq!(line.split(',').count(), CSV_HEADER.split(',').count());
    assert!(line.ends_with(",0"));
}

#[test]
fn run_resumes_from_intermediate_state() {
    let (p, space) = coarse_example1();
    let data = generate_synthetic_data(&p.truth, &p.params, &p.source, &space, 1).unwrap();
    let fp = ForwardProblem::new(space, p.params, &p.source).unwrap();
    let problem = InversionProblem::new(fp, data.values, None).unwrap();
    let cfg = OuterConfig { outer_iterations: 3, ..OuterConfig::default() };
    let full = run_modified_admm(&problem, &cfg, problem.initial_state(), |_| Ok(())).unwrap();
    let one = run_modified_admm(&problem, &OuterConfig { outer_iterations: 1, ..cfg.clone() }, problem.initial_state(), |_| Ok(()))
        .unwrap();
    let rest = run_modified_admm(&problem, &cfg, one, |_| Ok(())).unwrap();
    assert_eq!(rest.sigma, full.sigma);
    assert_eq!(rest.lagrangian_history(), full.lagrangian_history());
}
