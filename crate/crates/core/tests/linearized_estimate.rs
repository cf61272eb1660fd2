use lowmach_core::linearized::{check_estimate, seeded_problem, solve_linearized, CoefficientFamily};
use lowmach_core::model::{Model, PhysParams};
use lowmach_core::spectral::SpectralGrid;

#[test]
fn constant_coefficient_estimate_is_delta_uniform() {
    let grid = SpectralGrid::periodic(2, 16).unwrap();
    let base = Model::ideal(PhysParams::default()).unwrap();
    let mut c0 = Vec::new();
    for delta in [0.2, 0.1, 0.05] {
        let m = base.with_delta(delta).unwrap();
        let family = CoefficientFamily::Constant { value: 1.0 };
        let problem = seeded_problem(&grid, family, delta, 7, 1.0, 1.0, 1.0).unwrap();
        let traj = solve_linearized(&problem, &grid, &m, 0.01).unwrap();
        let report = check_estimate(&traj, &problem, &m).unwrap();
        assert!(report.lhs.iter().zip(&report.rhs).all(|(l, r)| l.is_finite() && r.is_finite()));
        c0.push(report.c0_estimate);
    }
    let max = c0.iter().cloned().fold(f64::MIN, f64::max);
    let min = c0.iter().cloned().fold(f64::MAX, f64::min);
    assert!(min >= 1.0 - 1e-12 && max / min < 2.0, "{c0:?}");
}
