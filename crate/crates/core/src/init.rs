//! Reproducible well-prepared initial data.
//!
//! Every perturbation field is an independent Gaussian random field with
//! energy envelope `exp(−(|k|−k_peak)²)`, drawn over a grid-independent
//! integer mode list so that the same seed yields the same continuum field on
//! every resolution that resolves it.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::compressible::CompressibleState;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::spectral::{ScalarField, SpectralGrid, VectorField};

/// Which smallness bundle the budget controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// `‖ρ₀u₀‖ + δ⁻¹‖(ρ₀−ρ̄, θ₀−θ̄)‖ + δ^{−1/2}‖n₀−n̄‖ ≤ M₀`.
    LocalThm,
    /// Same with the velocity `u₀` in place of the momentum.
    #[default]
    GlobalThm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    /// Bundle budget `M₀` (or `δ₀`).
    pub budget: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_peak")]
    pub spectrum_peak: f64,
    #[serde(default)]
    pub mode: InitMode,
    /// Sobolev order of the budget norms.
    #[serde(default = "default_order")]
    pub norm_order: u32,
    /// Set `n₀ − n̄ = 4σ̃θ̄³(θ₀ − θ̄)/σ_a` instead of an independent field.
    #[serde(default)]
    pub slaved_radiation: bool,
}

fn default_peak() -> f64 {
    2.0
}
fn default_order() -> u32 {
    3
}

/// Fraction of the budget given to each of the four blocks.
pub const BLOCK_SHARE: f64 = 0.25;
/// Safety factor below the budget.
pub const FILL: f64 = 0.9;

impl InitSpec {
    pub fn new(budget: f64, seed: u64) -> Self {
        InitSpec {
            budget,
            seed,
            spectrum_peak: default_peak(),
            mode: InitMode::GlobalThm,
            norm_order: default_order(),
            slaved_radiation: false,
        }
    }

    pub fn validate(&self, grid: &SpectralGrid) -> Result<()> {
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::domain("budget must be >= 0"));
        }
        let band = ((grid.n() - 1) / 3) as f64;
        if !(self.spectrum_peak > 0.0 && self.spectrum_peak <= band) {
            return Err(Error::domain(format!(
                "spectrum_peak {} outside the dealiased band (0, {band}]",
                self.spectrum_peak
            )));
        }
        if self.norm_order > 5 {
            return Err(Error::domain("norm_order above 5 is not supported"));
        }
        Ok(())
    }
}

/// Norms of the generated data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitReport {
    pub velocity_norm: f64,
    pub momentum_norm: f64,
    pub density_norm: f64,
    pub temperature_norm: f64,
    pub radiation_norm: f64,
    /// Bundle with the momentum first entry.
    pub bundle_local: f64,
    /// Bundle with the velocity first entry.
    pub bundle_global: f64,
    /// Bundle selected by the mode.
    pub bundle: f64,
    /// Factor applied to density/temperature amplitudes to keep positivity.
    pub clamp_factor: f64,
    pub div_u_max: f64,
}

#[derive(Clone, Debug)]
pub struct WellPrepared {
    pub state: CompressibleState,
    pub report: InitReport,
}

/// Highest integer wavenumber drawn, independent of resolution where it can
/// be.
fn mode_band(spec: &InitSpec, grid: &SpectralGrid) -> i64 {
    let kg = (spec.spectrum_peak + 4.0).ceil() as i64;
    kg.min(((grid.n() - 1) / 3) as i64)
}

/// Gaussian random field with zero mean and the spectral envelope of `spec`,
/// unnormalised. `stream` selects an independent substream of the seed.
pub fn random_field(spec: &InitSpec, grid: &SpectralGrid, stream: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let n = grid.n() as i64;
    let d = grid.dim();
    let kg = mode_band(spec, grid);
    let scale = 2.0 * std::f64::consts::PI / grid.extent();
    let mut h = vec![Complex64::new(0.0, 0.0); grid.npts()];
    let index = |m: &[i64; 3]| -> usize {
        let mut p = 0usize;
        for &mi in m.iter().take(d) {
            p = p * n as usize + mi.rem_euclid(n) as usize;
        }
        p
    };
    let side = 2 * kg + 1;
    let total = side.pow(d as u32);
    for c in 0..total {
        let mut rem = c;
        let mut m = [0i64; 3];
        for mi in m.iter_mut().take(d).rev() {
            *mi = rem % side - kg;
            rem /= side;
        }
        // draw for the lexicographically positive member of each ±m pair
        let first_nonzero = m.iter().take(d).find(|v| **v != 0);
        match first_nonzero {
            Some(v) if *v > 0 => {}
            _ => continue,
        }
        let kmag = m.iter().take(d).map(|v| (*v as f64 * scale).powi(2)).sum::<f64>().sqrt();
        let amp = (-(kmag - spec.spectrum_peak).powi(2) / 2.0).exp();
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        let z = Complex64::new(re, im) * amp;
        let neg = [-m[0], -m[1], -m[2]];
        h[index(&m)] = z;
        h[index(&neg)] = z.conj();
    }
    ScalarField::from_hat(grid, &h)
}

fn rescale_to(f: &ScalarField, target: f64, order: u32) -> ScalarField {
    let norm = f.sobolev_norm(order as i32).unwrap_or(0.0);
    if target == 0.0 || norm == 0.0 {
        ScalarField::zeros(f.grid())
    } else {
        f.scale(target / norm)
    }
}

fn vector_norm(v: &VectorField, order: u32) -> f64 {
    v.sobolev_norm(order as i32).unwrap_or(0.0)
}

/// Builds well-prepared data `(ρ₀, u₀, θ₀, n₀)` whose bundle lies in
/// `[0.5, 1]·M₀` with `div u₀ = 0`, `ρ₀ ≥ ρ̄/2` and `θ₀ ≥ θ̄/2`.
pub fn make_well_prepared(spec: &InitSpec, grid: &SpectralGrid, model: &Model) -> Result<WellPrepared> {
    spec.validate(grid)?;
    let p = &model.params;
    let delta = p.delta;
    let k = spec.norm_order;
    let share = BLOCK_SHARE * FILL * spec.budget;

    let base_u = VectorField::from_scalars(
        (0..grid.dim())
            .map(|a| random_field(spec, grid, 10 + a as u64))
            .collect(),
    )?
    .leray_project();
    let base_phi = random_field(spec, grid, 1);
    let base_zeta = random_field(spec, grid, 2);
    let base_g = random_field(spec, grid, 3);

    let mut phi = rescale_to(&base_phi, share * delta, k);
    let mut zeta = rescale_to(&base_zeta, share * delta, k);

    // positivity clamp on density and temperature amplitudes
    let mut clamp = 1.0f64;
    let rmin = phi.min();
    if rmin < -0.5 * p.rho_bar {
        clamp = clamp.min(0.5 * p.rho_bar / -rmin);
    }
    let tmin = zeta.min();
    if tmin < -0.5 * p.theta_bar {
        clamp = clamp.min(0.5 * p.theta_bar / -tmin);
    }
    if clamp < 1.0 {
        // keep a margin so the bounds hold strictly
        clamp *= 0.99;
        phi = phi.scale(clamp);
        zeta = zeta.scale(clamp);
    }
    let rho = phi.shift(p.rho_bar);
    let theta = zeta.shift(p.theta_bar);

    let g = if spec.slaved_radiation {
        zeta.scale(p.emission_slope() / p.sigma_a)
    } else {
        rescale_to(&base_g, share * delta.sqrt(), k)
    };

    let u = {
        let raw_norm = match spec.mode {
            InitMode::GlobalThm => vector_norm(&base_u, k),
            InitMode::LocalThm => vector_norm(&base_u.mul_scalar(&rho), k),
        };
        if share == 0.0 || raw_norm == 0.0 {
            VectorField::zeros(grid)
        } else {
            base_u.scale(share / raw_norm)
        }
    };

    let velocity_norm = vector_norm(&u, k);
    let momentum_norm = vector_norm(&u.mul_scalar(&rho), k);
    let density_norm = phi.sobolev_norm(k as i32)?;
    let temperature_norm = zeta.sobolev_norm(k as i32)?;
    let radiation_norm = g.sobolev_norm(k as i32)?;
    let thermal = (density_norm.powi(2) + temperature_norm.powi(2)).sqrt() / delta;
    let rad = radiation_norm / delta.sqrt();
    let bundle_local = momentum_norm + thermal + rad;
    let bundle_global = velocity_norm + thermal + rad;
    let bundle = match spec.mode {
        InitMode::LocalThm => bundle_local,
        InitMode::GlobalThm => bundle_global,
    };
    if spec.budget > 0.0 && (bundle < 0.5 * spec.budget || bundle > spec.budget) {
        return Err(Error::Construction(format!(
            "budget {} unreachable at spectrum peak {}: bundle {bundle:.4} after clamp factor {clamp:.4}",
            spec.budget, spec.spectrum_peak
        )));
    }
    let state = CompressibleState {
        rho,
        u: u.clone(),
        theta,
        n: g.shift(p.n_bar),
        time: 0.0,
    };
    state.check_positive()?;
    Ok(WellPrepared {
        report: InitReport {
            velocity_norm,
            momentum_norm,
            density_norm,
            temperature_norm,
            radiation_norm,
            bundle_local,
            bundle_global,
            bundle,
            clamp_factor: clamp,
            div_u_max: u.divergence().max_abs(),
        },
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PhysParams;

    fn model(delta: f64) -> Model {
        Model::ideal(PhysParams::default().with_delta(delta).unwrap()).unwrap()
    }

    #[test]
    fn zero_budget_is_equilibrium() {
        let g = SpectralGrid::periodic(2, 32).unwrap();
        let m = model(0.1);
        let w = make_well_prepared(&InitSpec::new(0.0, 3), &g, &m).unwrap();
        assert_eq!(w.state, CompressibleState::equilibrium(&g, &m.params));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let g = SpectralGrid::periodic(2, 32).unwrap();
        let m = model(0.1);
        let spec = InitSpec::new(1.0, 42);
        let a = make_well_prepared(&spec, &g, &m).unwrap();
        let b = make_well_prepared(&spec, &g, &m).unwrap();
        assert_eq!(a.state, b.state);
        let c = make_well_prepared(&InitSpec::new(1.0, 43), &g, &m).unwrap();
        assert_ne!(a.state, c.state);
    }

    #[test]
    fn bundle_in_range_and_solenoidal() {
        let g = SpectralGrid::periodic(2, 64).unwrap();
        for delta in [0.2, 0.1] {
            for mode in [InitMode::GlobalThm, InitMode::LocalThm] {
                let mut spec = InitSpec::new(1.5, 7);
                spec.mode = mode;
                let w = make_well_prepared(&spec, &g, &model(delta)).unwrap();
                assert!(w.report.bundle >= 0.75 && w.report.bundle <= 1.5, "{:?}", w.report);
                assert!(w.report.div_u_max < 1e-12);
                assert!(w.state.rho.min() >= 0.5 && w.state.theta.min() >= 0.5);
            }
        }
    }

    #[test]
    fn density_scales_exactly_with_delta() {
        let g = SpectralGrid::periodic(2, 32).unwrap();
        let spec = InitSpec::new(1.0, 5);
        let ratios: Vec<f64> = [0.2, 0.1, 0.05, 0.025]
            .iter()
            .map(|&d| {
                let w = make_well_prepared(&spec, &g, &model(d)).unwrap();
                w.state.rho.shift(-1.0).sobolev_norm(3).unwrap() / d
            })
            .collect();
        for r in &ratios {
            assert!((r - ratios[0]).abs() < 1e-12 * ratios[0]);
        }
    }

    #[test]
    fn field_is_resolution_independent() {
        let spec = InitSpec::new(1.0, 9);
        let g1 = SpectralGrid::periodic(2, 32).unwrap();
        let g2 = SpectralGrid::periodic(2, 64).unwrap();
        let a = random_field(&spec, &g1, 1);
        let b = random_field(&spec, &g2, 1);
        // compare on the shared points
        for i in 0..32 {
            for j in 0..32 {
                let va = a.values()[i * 32 + j];
                let vb = b.values()[(2 * i) * 64 + 2 * j];
                assert!((va - vb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn excessive_budget_is_rejected() {
        let g = SpectralGrid::periodic(2, 32).unwrap();
        let err = make_well_prepared(&InitSpec::new(1e5, 1), &g, &model(1.0)).unwrap_err();
        assert!(matches!(err, Error::Construction(_)));
    }

    #[test]
    fn peak_outside_band_is_rejected() {
        let g = SpectralGrid::periodic(2, 16).unwrap();
        let mut spec = InitSpec::new(1.0, 1);
        spec.spectrum_peak = 9.0;
        assert!(make_well_prepared(&spec, &g, &model(0.1)).is_err());
    }
}
