use lowmach_core::compressible::PerturbationState;
use lowmach_core::diagnostics::{energy_functional, scaled_bundle, DEFAULT_BETA, DEFAULT_ORDER};
use lowmach_core::init::{make_well_prepared, InitSpec};
use lowmach_core::model::{Model, PhysParams};
use lowmach_core::spectral::{random_smooth, SpectralGrid, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn energy_sandwiches_the_bundle_on_random_states() {
    let grid = SpectralGrid::periodic(2, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..1000u64 {
        let delta = [0.2, 0.1, 0.05, 0.025][(i % 4) as usize];
        let m = Model::ideal(PhysParams::default()).unwrap().with_delta(delta).unwrap();
        let amp: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.001..0.1));
        let seed = 4 * i;
        let u = VectorField::from_scalars(vec![
            random_smooth(&grid, seed, 5, amp[0]),
            random_smooth(&grid, seed + 1, 5, amp[0]),
        ])
        .unwrap();
        let s = PerturbationState {
            phi: random_smooth(&grid, seed + 2, 5, amp[1] * delta),
            u,
            zeta: random_smooth(&grid, seed + 3, 5, amp[2] * delta),
            g_script: random_smooth(&grid, seed + 4, 5, amp[3] * delta.sqrt()),
            time: 0.0,
        };
        let b = scaled_bundle(&s, delta, DEFAULT_ORDER);
        let e = energy_functional(&s, DEFAULT_BETA, DEFAULT_ORDER, &m).unwrap();
        assert!(e >= 0.5 * b && e <= 2.0 * b, "state {i}: E {e} bundle {b}");
    }
}

#[test]
fn bundle_is_invariant_under_delta_halving() {
    let grid = SpectralGrid::periodic(2, 32).unwrap();
    let base = Model::ideal(PhysParams::default()).unwrap();
    let bundle_at = |delta: f64| {
        let m = base.with_delta(delta).unwrap();
        let w = make_well_prepared(&InitSpec::new(1.0, 8), &grid, &m).unwrap();
        scaled_bundle(&PerturbationState::from_primitive(&w.state, &m.params), delta, 3)
    };
    let b0 = bundle_at(0.1);
    for delta in [0.05, 0.025] {
        let b = bundle_at(delta);
        assert!(((b - b0) / b0).abs() < 1e-12, "{b} vs {b0}");
    }
}
