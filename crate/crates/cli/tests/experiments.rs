use lowmach_cli::config::ExperimentConfig;
use lowmach_cli::experiments::{compute_sweep, reference_trajectory, run_member};
use lowmach_core::diagnostics::compare_to_reference;
use lowmach_core::init::make_well_prepared;
use lowmach_core::spectral::SpectralGrid;

#[test]
fn reference_error_is_grid_converged() {
    let cfg = ExperimentConfig::with_required(1.0, 0.5);
    let model = cfg.model_at(0.1).unwrap();
    let dt = 0.25 * 2.0 * std::f64::consts::PI / 64.0;
    let mut sup = Vec::new();
    for n in [32, 64] {
        let grid = SpectralGrid::periodic(2, n).unwrap();
        let m = run_member(&cfg, &grid, &model, 42, dt).unwrap();
        assert!(m.completed());
        let u0 = make_well_prepared(&cfg.init, &grid, &model).unwrap().state.u;
        let r = reference_trajectory(&cfg, &u0, dt, &model).unwrap();
        sup.push(compare_to_reference(&m.velocity, &r).unwrap().sup_l2);
    }
    assert!((sup[0] / sup[1] - 1.0).abs() < 0.1, "{sup:?}");
}

#[test]
fn sweep_records_cover_every_member() {
    let mut cfg = ExperimentConfig::with_required(1.0, 0.2);
    cfg.grid.n = 32;
    let res = compute_sweep(&cfg, Some(2)).unwrap();
    assert!(res.report.complete && res.report.uniform_dt);
    for d in &cfg.sweep.deltas {
        assert!(res.records.iter().any(|r| r.delta == *d && r.ref_error_l2.is_some()));
    }
    assert!(res.records.iter().all(|r| r.is_valid()));
}
