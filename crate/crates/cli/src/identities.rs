//! Algebraic identity suite on seeded random data.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use lowmach_core::compressible::{rhs_momentum, rhs_perturbation, rhs_primitive, CompressibleState, MomentumState, PerturbationState};
use lowmach_core::model::{
    eos_sample_lattice, planck_decomposition_with, thermo_relation_residual, thermo_relation_scale, thermo_tolerance,
    Eos, Model, COMPATIBILITY_TOL,
};
use lowmach_core::spectral::{random_smooth, SpectralGrid, VectorField};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const PLANCK_TOL: f64 = 1e-13;
pub const RHS_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl IdentityCheck {
    fn new(name: &str, residual: f64, tolerance: f64) -> Self {
        IdentityCheck {
            name: name.to_string(),
            residual,
            tolerance,
            passed: residual.is_finite() && residual <= tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
    pub passed: bool,
}

impl IdentityReport {
    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&IdentityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Largest relative residuals of `σ̃(θ̄+ζ)⁴ − σ_a(n̄+𝒢) = L + h₅ζ` and of the
/// quartic expansion of `h₅ζ` over random points.
pub fn pointwise_residuals(model: &Model, points: usize, seed: u64) -> Result<(f64, f64), CliError> {
    let p = &model.params;
    let c = model.h5_coefficients();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut planck, mut quartic) = (0.0f64, 0.0f64);
    for _ in 0..points {
        let zeta = p.theta_bar * rng.random_range(-0.5..2.0);
        let g = p.n_bar * rng.random_range(-0.5..2.0);
        let s = planck_decomposition_with(zeta, g, p, c)?;
        let theta = p.theta_bar + zeta;
        let direct = p.sigma_tilde * theta.powi(4) - p.sigma_a * (p.n_bar + g);
        let scale = p.sigma_tilde * theta.powi(4) + p.sigma_a * (p.n_bar + g).abs();
        planck = planck.max((s.total() - direct).abs() / scale);
        let tb = p.theta_bar;
        let expansion = p.sigma_tilde * (theta.powi(4) - tb.powi(4) - 4.0 * tb.powi(3) * zeta);
        let qscale = p.sigma_tilde * (tb + zeta.abs()).powi(4);
        quartic = quartic.max((s.remainder - expansion).abs() / qscale);
    }
    Ok((planck, quartic))
}

/// Largest relative max-norm discrepancies between the primitive right-hand
/// side and the velocity-form and momentum-form assemblies.
pub fn rhs_residuals(grid: &SpectralGrid, model: &Model, fields: usize, amplitude: f64, seed: u64) -> Result<(f64, f64), CliError> {
    let p = &model.params;
    let (mut vel, mut mom) = (0.0f64, 0.0f64);
    for k in 0..fields {
        let s = random_state(grid, model, amplitude, seed.wrapping_add(k as u64))?;
        let prim = rhs_primitive(&s, model)?;
        let pert = rhs_perturbation(&PerturbationState::from_primitive(&s, p), model)?;
        vel = vel.max(prim.relative_discrepancy(&pert));
        let m = rhs_momentum(&MomentumState::from_primitive(&s, p), model)?;
        mom = mom.max(prim.primitive_to_momentum(&s, p.rho_bar).relative_discrepancy(&m));
    }
    Ok((vel, mom))
}

fn thermo(eos: &dyn Eos) -> Result<f64, CliError> {
    let mut worst = 0.0f64;
    for (rho, theta) in eos_sample_lattice() {
        let r = thermo_relation_residual(eos, rho, theta)?;
        worst = worst.max(r.abs() / thermo_relation_scale(eos, rho, theta));
    }
    Ok(worst)
}

fn random_state(grid: &SpectralGrid, model: &Model, amp: f64, seed: u64) -> Result<CompressibleState, CliError> {
    let p = &model.params;
    let f = |s: u64, a: f64| random_smooth(grid, seed.wrapping_mul(16).wrapping_add(s), 4, a);
    let u = VectorField::from_scalars((0..grid.dim()).map(|a| f(a as u64, amp)).collect())?;
    Ok(CompressibleState {
        rho: f(8, amp * p.rho_bar).shift(p.rho_bar),
        u,
        theta: f(9, amp * p.theta_bar).shift(p.theta_bar),
        n: f(10, amp * p.n_bar).shift(p.n_bar),
        time: 0.0,
    })
}

/// Runs every identity; never fails on a residual, only on setup errors.
pub fn verify_identities(cfg: &ExperimentConfig) -> Result<IdentityReport, CliError> {
    let params = cfg.params.build()?;
    let eos: Arc<dyn Eos> = cfg.eos.build()?;
    let model = Model::new_unchecked(params, eos.clone())?.with_h5_coefficients(cfg.verify.h5_coefficients);
    let p = &model.params;
    let v = &cfg.verify;
    let mut checks = Vec::new();

    let compat = (p.sigma_a * p.n_bar - p.sigma_tilde * p.theta_bar.powi(4)).abs() / (p.sigma_tilde * p.theta_bar.powi(4));
    checks.push(IdentityCheck::new("compatibility", compat, COMPATIBILITY_TOL));

    let (planck, quartic) = pointwise_residuals(&model, v.points, v.seed)?;
    checks.push(IdentityCheck::new("planck_decomposition", planck, PLANCK_TOL));
    checks.push(IdentityCheck::new("h5_quartic", quartic, PLANCK_TOL));
    checks.push(IdentityCheck::new("thermo_relation", thermo(eos.as_ref())?, thermo_tolerance(eos.as_ref())));

    let grid = cfg.grid.build()?;
    let (vel, mom) = rhs_residuals(&grid, &model, v.fields, v.amplitude, v.seed)?;
    checks.push(IdentityCheck::new("velocity_form_equivalence", vel, RHS_TOL));
    checks.push(IdentityCheck::new("momentum_form_equivalence", mom, RHS_TOL));

    let passed = checks.iter().all(|c| c.passed);
    Ok(IdentityReport { checks, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EosConfig;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::with_required(0.5, 0.1);
        c.verify.fields = 3;
        c.verify.points = 500;
        c
    }

    #[test]
    fn default_suite_passes() {
        let r = verify_identities(&small()).unwrap();
        assert!(r.passed, "{:?}", r.failures());
        assert_eq!(r.checks.len(), 6);
    }

    #[test]
    fn corrupted_h5_is_named() {
        let mut c = small();
        c.verify.h5_coefficients = [6.0, 4.0, 1.01];
        let r = verify_identities(&c).unwrap();
        assert!(!r.passed);
        assert!(r.failures().contains(&"planck_decomposition"));
        assert!(r.failures().contains(&"h5_quartic"));
        assert!(r.get("thermo_relation").unwrap().passed);
    }

    #[test]
    fn inconsistent_eos_fails_thermo_relation() {
        let mut c = small();
        c.eos = EosConfig::Inconsistent { r_gas: 1.0, c_v: 1.0 };
        let r = verify_identities(&c).unwrap();
        assert!(r.failures().contains(&"thermo_relation"));
        assert!(r.get("planck_decomposition").unwrap().passed);
    }
}
