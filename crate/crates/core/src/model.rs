//! Closed-form algebra of the scaled diffusion-approximation system.
//!
//! Everything here is a pure point evaluator: parameters, equations of
//! state, the Planck emission/absorption source and the nonlinear remainder
//! terms of the two perturbation formulations (density perturbation with
//! velocity, and relative density with momentum). Field-level application is
//! a map over grid points done by the callers.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
/// `m[i][j] = ∂_j v_i`.
pub type Mat3 = [[f64; 3]; 3];

/// Relative tolerance of the compatibility condition `σ_a n̄ = σ̃ θ̄⁴`.
pub const COMPATIBILITY_TOL: f64 = 1e-12;

/// Physical and scaling constants of the scaled Cauchy problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysParams {
    pub mu: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub nu: f64,
    pub sigma_a: f64,
    pub sigma_tilde: f64,
    pub delta: f64,
    pub rho_bar: f64,
    pub theta_bar: f64,
    pub n_bar: f64,
}

impl Default for PhysParams {
    /// `σ_a = 4σ̃` at `ρ̄ = θ̄ = 1` makes every energy weight of the
    /// perturbation system equal to the matching norm-bundle weight.
    fn default() -> Self {
        PhysParams::balanced(0.1, 0.0, 0.1, 0.1, 4.0, 1.0, 0.1, 1.0, 1.0)
            .expect("default parameters are admissible")
    }
}

impl PhysParams {
    /// Builds a parameter set whose background radiation `n̄` is fixed by the
    /// compatibility condition.
    #[allow(clippy::too_many_arguments)]
    pub fn balanced(
        mu: f64,
        lambda: f64,
        kappa: f64,
        nu: f64,
        sigma_a: f64,
        sigma_tilde: f64,
        delta: f64,
        rho_bar: f64,
        theta_bar: f64,
    ) -> Result<Self> {
        let n_bar = equilibrium_radiation(theta_bar, sigma_a, sigma_tilde)?;
        let p = PhysParams {
            mu,
            lambda,
            kappa,
            nu,
            sigma_a,
            sigma_tilde,
            delta,
            rho_bar,
            theta_bar,
            n_bar,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        let p = PhysParams {
            delta,
            ..self.clone()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mu,
            self.lambda,
            self.kappa,
            self.nu,
            self.sigma_a,
            self.sigma_tilde,
            self.delta,
            self.rho_bar,
            self.theta_bar,
            self.n_bar,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("parameters must be finite"));
        }
        if self.mu <= 0.0 || 3.0 * self.lambda + 2.0 * self.mu < 0.0 {
            return Err(Error::domain("viscosities need mu > 0 and 3 lambda + 2 mu >= 0"));
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("nu", self.nu),
            ("sigma_a", self.sigma_a),
            ("sigma_tilde", self.sigma_tilde),
            ("rho_bar", self.rho_bar),
            ("theta_bar", self.theta_bar),
            ("n_bar", self.n_bar),
        ] {
            if v <= 0.0 {
                return Err(Error::domain(format!("{name} must be positive (got {v})")));
            }
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::domain(format!(
                "delta must lie in (0, 1] (got {})",
                self.delta
            )));
        }
        let emission = self.sigma_tilde * self.theta_bar.powi(4);
        let absorption = self.sigma_a * self.n_bar;
        if (absorption - emission).abs() > COMPATIBILITY_TOL * emission.abs().max(absorption.abs()) {
            return Err(Error::domain(format!(
                "background violates sigma_a n_bar = sigma_tilde theta_bar^4 ({absorption} vs {emission})"
            )));
        }
        Ok(())
    }

    /// `4σ̃θ̄³`, the linear emission coefficient.
    pub fn emission_slope(&self) -> f64 {
        4.0 * self.sigma_tilde * self.theta_bar.powi(3)
    }

    pub fn mu_bar(&self) -> f64 {
        self.mu / self.rho_bar
    }

    pub fn lambda_bar(&self) -> f64 {
        self.lambda / self.rho_bar
    }

    /// Linear matter/radiation disequilibrium `4σ̃θ̄³ζ − σ_a𝒢`.
    pub fn exchange(&self, zeta: f64, g_script: f64) -> f64 {
        self.emission_slope() * zeta - self.sigma_a * g_script
    }
}

/// `n̄ = σ̃θ̄⁴/σ_a`.
pub fn equilibrium_radiation(theta_bar: f64, sigma_a: f64, sigma_tilde: f64) -> Result<f64> {
    if !(theta_bar > 0.0 && sigma_a > 0.0 && sigma_tilde > 0.0) {
        return Err(Error::domain(
            "equilibrium radiation needs positive theta_bar, sigma_a, sigma_tilde",
        ));
    }
    Ok(sigma_tilde * theta_bar.powi(4) / sigma_a)
}

/// Planck emission minus absorption, `σ̃θ⁴ − σ_a n`.
pub fn radiation_source(theta: f64, n: f64, params: &PhysParams) -> Result<f64> {
    if theta <= 0.0 {
        return Err(Error::domain(format!("temperature must be positive (got {theta})")));
    }
    Ok(params.sigma_tilde * theta.powi(4) - params.sigma_a * n)
}

// ---------------------------------------------------------------------------
// Equations of state

/// Pressure and internal energy as functions of `(ρ, θ)`.
///
/// Partial derivatives default to central differences with step
/// `1e-6·max(1, |x|)` in the differentiated argument.
pub trait Eos: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn pressure(&self, rho: f64, theta: f64) -> f64;
    fn energy(&self, rho: f64, theta: f64) -> f64;

    fn has_analytic_partials(&self) -> bool {
        false
    }

    fn p_rho(&self, rho: f64, theta: f64) -> f64 {
        let h = fd_step(rho);
        (self.pressure(rho + h, theta) - self.pressure(rho - h, theta)) / (2.0 * h)
    }
    fn p_theta(&self, rho: f64, theta: f64) -> f64 {
        let h = fd_step(theta);
        (self.pressure(rho, theta + h) - self.pressure(rho, theta - h)) / (2.0 * h)
    }
    fn e_rho(&self, rho: f64, theta: f64) -> f64 {
        let h = fd_step(rho);
        (self.energy(rho + h, theta) - self.energy(rho - h, theta)) / (2.0 * h)
    }
    fn e_theta(&self, rho: f64, theta: f64) -> f64 {
        let h = fd_step(theta);
        (self.energy(rho, theta + h) - self.energy(rho, theta - h)) / (2.0 * h)
    }
}

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Ideal polytropic gas `P = Rρθ`, `e = c_vθ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdealGas {
    pub r_gas: f64,
    pub c_v: f64,
}

impl Default for IdealGas {
    fn default() -> Self {
        IdealGas { r_gas: 1.0, c_v: 1.0 }
    }
}

impl Eos for IdealGas {
    fn name(&self) -> &str {
        "ideal-polytropic"
    }
    fn pressure(&self, rho: f64, theta: f64) -> f64 {
        self.r_gas * rho * theta
    }
    fn energy(&self, _rho: f64, theta: f64) -> f64 {
        self.c_v * theta
    }
    fn has_analytic_partials(&self) -> bool {
        true
    }
    fn p_rho(&self, _rho: f64, theta: f64) -> f64 {
        self.r_gas * theta
    }
    fn p_theta(&self, rho: f64, _theta: f64) -> f64 {
        self.r_gas * rho
    }
    fn e_rho(&self, _rho: f64, _theta: f64) -> f64 {
        0.0
    }
    fn e_theta(&self, _rho: f64, _theta: f64) -> f64 {
        self.c_v
    }
}

/// `−ρ²e_ρ − (θP_θ − P)`; vanishes for thermodynamically consistent gases.
pub fn thermo_relation_residual(eos: &dyn Eos, rho: f64, theta: f64) -> Result<f64> {
    check_point(rho, theta)?;
    Ok(-rho * rho * eos.e_rho(rho, theta)
        - (theta * eos.p_theta(rho, theta) - eos.pressure(rho, theta)))
}

/// Magnitude used to make [`thermo_relation_residual`] relative.
pub fn thermo_relation_scale(eos: &dyn Eos, rho: f64, theta: f64) -> f64 {
    (rho * rho * eos.e_rho(rho, theta)).abs()
        + (theta * eos.p_theta(rho, theta)).abs()
        + eos.pressure(rho, theta).abs()
}

/// Tolerance for the consistency residual relative to
/// [`thermo_relation_scale`].
pub fn thermo_tolerance(eos: &dyn Eos) -> f64 {
    if eos.has_analytic_partials() {
        1e-10
    } else {
        // central differences carry ~1e-10 rounding on their own
        1e-7
    }
}

/// Sample lattice used for the admissibility and consistency checks.
pub fn eos_sample_lattice() -> Vec<(f64, f64)> {
    let n = 16;
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let rho = 10f64.powf(-1.0 + 2.0 * i as f64 / (n - 1) as f64);
            let theta = 10f64.powf(-1.0 + 2.0 * j as f64 / (n - 1) as f64);
            pts.push((rho, theta));
        }
    }
    pts
}

/// Verifies `P_ρ > 0`, `e_θ > 0` and the thermodynamic relation on
/// [`eos_sample_lattice`].
pub fn check_eos(eos: &dyn Eos) -> Result<()> {
    let tol = thermo_tolerance(eos);
    for (rho, theta) in eos_sample_lattice() {
        let p_rho = eos.p_rho(rho, theta);
        let e_theta = eos.e_theta(rho, theta);
        if !(p_rho > 0.0 && e_theta > 0.0) {
            return Err(Error::Construction(format!(
                "{}: inadmissible at rho={rho}, theta={theta} (P_rho={p_rho}, e_theta={e_theta})",
                eos.name()
            )));
        }
        let r = thermo_relation_residual(eos, rho, theta)?;
        let scale = thermo_relation_scale(eos, rho, theta).max(f64::MIN_POSITIVE);
        if r.abs() > tol * scale {
            return Err(Error::Construction(format!(
                "{}: thermodynamic relation violated at rho={rho}, theta={theta} (residual {r:e})",
                eos.name()
            )));
        }
    }
    Ok(())
}

fn check_point(rho: f64, theta: f64) -> Result<()> {
    if !(rho > 0.0) || !(theta > 0.0) {
        return Err(Error::domain(format!(
            "density and temperature must be positive (rho={rho}, theta={theta})"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Perturbation variables and the radiation source decomposition

/// Point values of the perturbation unknowns around `(ρ̄, 0, θ̄, n̄)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PerturbationVars {
    /// `ρ − ρ̄`
    pub phi: f64,
    pub velocity: Vec3,
    /// `θ − θ̄`
    pub zeta: f64,
    /// `n − n̄`
    pub g_script: f64,
}

impl PerturbationVars {
    /// From the momentum form `(ñ, m, ζ, 𝒢)` with `ñ = (ρ−ρ̄)/ρ̄`, `m = ρu/ρ̄`.
    pub fn from_momentum(n_tilde: f64, m: Vec3, zeta: f64, g_script: f64, rho_bar: f64) -> Self {
        let w = 1.0 / (1.0 + n_tilde);
        PerturbationVars {
            phi: rho_bar * n_tilde,
            velocity: [m[0] * w, m[1] * w, m[2] * w],
            zeta,
            g_script,
        }
    }

    pub fn n_tilde(&self, rho_bar: f64) -> f64 {
        self.phi / rho_bar
    }

    pub fn momentum(&self, rho_bar: f64) -> Vec3 {
        let s = (rho_bar + self.phi) / rho_bar;
        [self.velocity[0] * s, self.velocity[1] * s, self.velocity[2] * s]
    }

    pub fn rho(&self, rho_bar: f64) -> f64 {
        rho_bar + self.phi
    }

    pub fn theta(&self, theta_bar: f64) -> f64 {
        theta_bar + self.zeta
    }
}

/// Split of `σ̃(θ̄+ζ)⁴ − σ_a(n̄+𝒢)` into its linear part and the
/// polynomial remainder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanckSplit {
    pub linear: f64,
    pub remainder: f64,
}

impl PlanckSplit {
    pub fn total(&self) -> f64 {
        self.linear + self.remainder
    }
}

/// Coefficients of `h₅(ζ) = c₀σ̃θ̄²ζ + c₁σ̃θ̄ζ² + c₂σ̃ζ³`.
pub const H5_COEFFICIENTS: [f64; 3] = [6.0, 4.0, 1.0];

pub fn h5(zeta: f64, params: &PhysParams) -> f64 {
    h5_with(zeta, params, H5_COEFFICIENTS)
}

pub fn h5_with(zeta: f64, params: &PhysParams, c: [f64; 3]) -> f64 {
    let s = params.sigma_tilde;
    let tb = params.theta_bar;
    c[0] * s * tb * tb * zeta + c[1] * s * tb * zeta * zeta + c[2] * s * zeta * zeta * zeta
}

pub fn planck_decomposition(zeta: f64, g_script: f64, params: &PhysParams) -> Result<PlanckSplit> {
    planck_decomposition_with(zeta, g_script, params, H5_COEFFICIENTS)
}

pub fn planck_decomposition_with(
    zeta: f64,
    g_script: f64,
    params: &PhysParams,
    h5_coefficients: [f64; 3],
) -> Result<PlanckSplit> {
    if params.theta_bar + zeta <= 0.0 {
        return Err(Error::domain("theta_bar + zeta must be positive"));
    }
    Ok(PlanckSplit {
        linear: params.exchange(zeta, g_script),
        remainder: h5_with(zeta, params, h5_coefficients) * zeta,
    })
}

// ---------------------------------------------------------------------------
// Background coefficients and the h-terms

/// EOS data frozen at the background `(ρ̄, θ̄)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackgroundCoeffs {
    pub p_rho: f64,
    pub p_theta: f64,
    pub e_theta: f64,
}

/// Parameters and EOS bundled with their background coefficients.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: PhysParams,
    pub eos: Arc<dyn Eos>,
    pub bg: BackgroundCoeffs,
    h5_coefficients: [f64; 3],
}

/// `h₁ … h₁₀` at one point, stored zero-based (`h[0]` is `h₁`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HTerms(pub [f64; 10]);

impl HTerms {
    pub fn get(&self, i: usize) -> f64 {
        self.0[i - 1]
    }
}

impl Model {
    /// Validates the parameters, checks the EOS on the sample lattice and
    /// freezes the background coefficients.
    pub fn new(params: PhysParams, eos: Arc<dyn Eos>) -> Result<Self> {
        check_eos(eos.as_ref())?;
        Self::new_unchecked(params, eos)
    }

    /// Like [`Model::new`] but skips the EOS consistency check, so that
    /// deliberately broken gases can be fed to the identity suite.
    pub fn new_unchecked(params: PhysParams, eos: Arc<dyn Eos>) -> Result<Self> {
        params.validate()?;
        let (rb, tb) = (params.rho_bar, params.theta_bar);
        let bg = BackgroundCoeffs {
            p_rho: eos.p_rho(rb, tb),
            p_theta: eos.p_theta(rb, tb),
            e_theta: eos.e_theta(rb, tb),
        };
        if !(bg.p_rho > 0.0 && bg.e_theta > 0.0) {
            return Err(Error::Construction(
                "EOS inadmissible at the background state".into(),
            ));
        }
        Ok(Model {
            params,
            eos,
            bg,
            h5_coefficients: H5_COEFFICIENTS,
        })
    }

    pub fn ideal(params: PhysParams) -> Result<Self> {
        Self::new(params, Arc::new(IdealGas::default()))
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        let mut m = self.clone();
        m.params = self.params.with_delta(delta)?;
        Ok(m)
    }

    /// Fault-injection hook: replaces the coefficients of `h₅`.
    pub fn with_h5_coefficients(mut self, c: [f64; 3]) -> Self {
        self.h5_coefficients = c;
        self
    }

    pub fn h5_coefficients(&self) -> [f64; 3] {
        self.h5_coefficients
    }

    pub fn h5(&self, zeta: f64) -> f64 {
        h5_with(zeta, &self.params, self.h5_coefficients)
    }

    /// `θ̄P_θ(ρ̄,θ̄)/(ρ̄e_θ(ρ̄,θ̄))`, the linear coupling of `div u` into `ζ`.
    pub fn temp_coupling(&self) -> f64 {
        self.params.theta_bar * self.bg.p_theta / (self.params.rho_bar * self.bg.e_theta)
    }

    /// `1/(ρ̄e_θ(ρ̄,θ̄))`.
    pub fn inv_heat_capacity(&self) -> f64 {
        1.0 / (self.params.rho_bar * self.bg.e_theta)
    }

    pub fn h_terms(&self, vars: &PerturbationVars) -> Result<HTerms> {
        let rho = vars.rho(self.params.rho_bar);
        let theta = vars.theta(self.params.theta_bar);
        self.h_terms_at(rho, theta, vars.zeta)
    }

    fn h_terms_at(&self, rho: f64, theta: f64, zeta: f64) -> Result<HTerms> {
        check_point(rho, theta)?;
        let p = &self.params;
        let eos = self.eos.as_ref();
        let (rb, tb) = (p.rho_bar, p.theta_bar);
        let p_rho = eos.p_rho(rho, theta);
        let p_theta = eos.p_theta(rho, theta);
        let e_theta = eos.e_theta(rho, theta);
        let bg = &self.bg;
        let inv_cap = 1.0 / (rb * bg.e_theta) - 1.0 / (rho * e_theta);
        let coupling = tb * bg.p_theta / (rb * bg.e_theta) - theta * p_theta / (rho * e_theta);
        Ok(HTerms([
            bg.p_rho - p_rho,
            bg.p_theta - p_theta,
            inv_cap,
            coupling,
            self.h5(zeta),
            bg.p_rho / rb - p_rho / rho,
            bg.p_theta / rb - p_theta / rho,
            1.0 / rb - 1.0 / rho,
            inv_cap,
            coupling,
        ]))
    }

    /// Nonlinear remainders of the density/velocity perturbation system.
    pub fn g_terms(&self, jet: &VelocityJet) -> Result<GTerms> {
        let p = &self.params;
        let rho = p.rho_bar + jet.phi;
        let theta = p.theta_bar + jet.zeta;
        let h = self.h_terms_at(rho, theta, jet.zeta)?;
        let e_theta = self.eos.e_theta(rho, theta);
        let d2 = p.delta * p.delta;
        let u = &jet.u;
        let du = &jet.grad_u;
        let div_u = du[0][0] + du[1][1] + du[2][2];

        let g1 = -jet.phi * div_u - dot(u, &jet.grad_phi);

        let mut g2 = [0.0; 3];
        for i in 0..3 {
            let adv: f64 = (0..3).map(|j| u[j] * du[i][j]).sum();
            let visc = p.mu * jet.lap_u[i] + (p.mu + p.lambda) * jet.grad_div_u[i];
            g2[i] = -adv + h.get(6) / d2 * jet.grad_phi[i] + h.get(7) / d2 * jet.grad_zeta[i]
                - h.get(8) * visc;
        }

        let heating = viscous_heating(du, p.mu, p.lambda);
        let exch = p.exchange(jet.zeta, jet.g_script);
        let g3 = -dot(u, &jet.grad_zeta) - p.kappa * h.get(9) * jet.lap_zeta
            + d2 * heating / (rho * e_theta)
            + h.get(10) * div_u
            + h.get(9) * exch
            - h.get(5) * jet.zeta / (rho * e_theta);

        let g4 = h.get(5) * jet.zeta;
        Ok(GTerms { g1, g2, g3, g4 })
    }

    /// Full tendencies `(φ_t, u_t, ζ_t, 𝒢_t)`: frozen linear part plus
    /// [`Model::g_terms`].
    pub fn velocity_form_tendency(&self, jet: &VelocityJet) -> Result<VelocityTendency> {
        let g = self.g_terms(jet)?;
        let lin = self.velocity_form_linear(jet);
        Ok(VelocityTendency {
            phi: lin.phi + g.g1,
            u: [lin.u[0] + g.g2[0], lin.u[1] + g.g2[1], lin.u[2] + g.g2[2]],
            zeta: lin.zeta + g.g3,
            g_script: lin.g_script + g.g4 / self.params.delta,
        })
    }

    /// Frozen-coefficient linear part of the velocity form.
    pub fn velocity_form_linear(&self, jet: &VelocityJet) -> VelocityTendency {
        let p = &self.params;
        let bg = &self.bg;
        let rb = p.rho_bar;
        let d2 = p.delta * p.delta;
        let du = &jet.grad_u;
        let div_u = du[0][0] + du[1][1] + du[2][2];
        let mut u = [0.0; 3];
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = p.mu / rb * jet.lap_u[i] + (p.mu + p.lambda) / rb * jet.grad_div_u[i]
                - bg.p_rho / (rb * d2) * jet.grad_phi[i]
                - bg.p_theta / (rb * d2) * jet.grad_zeta[i];
        }
        let exch = p.exchange(jet.zeta, jet.g_script);
        VelocityTendency {
            phi: -rb * div_u,
            u,
            zeta: -self.temp_coupling() * div_u + p.kappa * self.inv_heat_capacity() * jet.lap_zeta
                - exch * self.inv_heat_capacity(),
            g_script: (p.nu * jet.lap_g + exch) / p.delta,
        }
    }

    /// Nonlinear remainders `G₁, G₂, G₃` of the momentum form.
    pub fn big_g_terms(&self, jet: &MomentumJet) -> Result<BigGTerms> {
        let p = &self.params;
        let rb = p.rho_bar;
        let one_n = 1.0 + jet.n_tilde;
        if one_n <= 0.0 {
            return Err(Error::domain(format!(
                "1 + n_tilde must be positive (got {one_n})"
            )));
        }
        let rho = rb * one_n;
        let theta = p.theta_bar + jet.zeta;
        let h = self.h_terms_at(rho, theta, jet.zeta)?;
        let e_theta = self.eos.e_theta(rho, theta);
        let d2 = p.delta * p.delta;
        let mu_bar = p.mu_bar();
        let lm_bar = p.lambda_bar() + mu_bar;

        let w = 1.0 / one_n;
        let gn = &jet.grad_n;
        let mut gw = [0.0; 3];
        for j in 0..3 {
            gw[j] = -gn[j] * w * w;
        }
        let mut hw = [[0.0; 3]; 3];
        for j in 0..3 {
            for k in 0..3 {
                hw[j][k] = 2.0 * w * w * w * gn[j] * gn[k] - w * w * jet.hess_n[j][k];
            }
        }
        let lap_w = hw[0][0] + hw[1][1] + hw[2][2];
        let m = &jet.m;
        let dm = &jet.grad_m;
        let div_m = dm[0][0] + dm[1][1] + dm[2][2];
        let m_dot_gw = dot(m, &gw);

        let mut g1 = [0.0; 3];
        for i in 0..3 {
            let conv: f64 = (0..3)
                .map(|j| dm[i][j] * m[j] * w + m[i] * dm[j][j] * w + m[i] * m[j] * gw[j])
                .sum();
            let shear: f64 = (0..3).map(|j| dm[i][j] * gw[j]).sum::<f64>() + m[i] * lap_w;
            let bulk: f64 = (0..3).map(|j| dm[j][i] * gw[j] + m[j] * hw[i][j]).sum();
            g1[i] = -conv + mu_bar * shear + lm_bar * bulk + h.get(1) / d2 * gn[i]
                + h.get(2) / (rb * d2) * jet.grad_zeta[i];
        }

        // velocity u = m w and its gradient
        let u = [m[0] * w, m[1] * w, m[2] * w];
        let mut du = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                du[i][j] = dm[i][j] * w + m[i] * gw[j];
            }
        }
        let div_u = du[0][0] + du[1][1] + du[2][2];
        let heating = viscous_heating(&du, p.mu, p.lambda);
        let exch = p.exchange(jet.zeta, jet.g_script);
        let g2 = -dot(&u, &jet.grad_zeta) - p.kappa * h.get(3) * jet.lap_zeta
            + h.get(3) * exch
            + d2 * heating / (rho * e_theta)
            + h.get(4) * div_u
            - h.get(5) * jet.zeta / (rho * e_theta)
            + self.temp_coupling() * (jet.n_tilde * w * div_m - m_dot_gw);

        let g3 = h.get(5) * jet.zeta;
        Ok(BigGTerms { g1, g2, g3 })
    }

    /// Full tendencies `(ñ_t, m_t, ζ_t, 𝒢_t)` of the momentum form.
    pub fn momentum_form_tendency(&self, jet: &MomentumJet) -> Result<MomentumTendency> {
        let big = self.big_g_terms(jet)?;
        let p = &self.params;
        let bg = &self.bg;
        let rb = p.rho_bar;
        let d2 = p.delta * p.delta;
        let mu_bar = p.mu_bar();
        let lm_bar = p.lambda_bar() + mu_bar;
        let w = 1.0 / (1.0 + jet.n_tilde);
        let gn = &jet.grad_n;
        let gw = [-gn[0] * w * w, -gn[1] * w * w, -gn[2] * w * w];
        let dm = &jet.grad_m;
        let div_m = dm[0][0] + dm[1][1] + dm[2][2];

        let mut m_t = [0.0; 3];
        for i in 0..3 {
            // μ̄ div(w∇m) and (λ̄+μ̄)∇(w div m), expanded
            let shear = w * jet.lap_m[i] + (0..3).map(|j| gw[j] * dm[i][j]).sum::<f64>();
            let bulk = w * jet.grad_div_m[i] + div_m * gw[i];
            m_t[i] = mu_bar * shear + lm_bar * bulk - bg.p_rho / d2 * gn[i]
                - bg.p_theta / (rb * d2) * jet.grad_zeta[i]
                + big.g1[i];
        }
        let exch = p.exchange(jet.zeta, jet.g_script);
        let inv_cap = self.inv_heat_capacity();
        Ok(MomentumTendency {
            n_tilde: -div_m,
            m: m_t,
            zeta: -self.temp_coupling() * div_m + p.kappa * inv_cap * jet.lap_zeta - exch * inv_cap
                + big.g2,
            g_script: (p.nu * jet.lap_g + exch + big.g3) / p.delta,
        })
    }
}

/// `2μD(v):D(v) + λ(div v)²`.
pub fn viscous_heating(dv: &Mat3, mu: f64, lambda: f64) -> f64 {
    let mut dd = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let d = 0.5 * (dv[i][j] + dv[j][i]);
            dd += d * d;
        }
    }
    let div = dv[0][0] + dv[1][1] + dv[2][2];
    2.0 * mu * dd + lambda * div * div
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

// ---------------------------------------------------------------------------
// Point jets and tendencies

/// Point values and derivatives needed by the velocity-form remainders.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VelocityJet {
    pub phi: f64,
    pub grad_phi: Vec3,
    pub u: Vec3,
    pub grad_u: Mat3,
    pub lap_u: Vec3,
    pub grad_div_u: Vec3,
    pub zeta: f64,
    pub grad_zeta: Vec3,
    pub lap_zeta: f64,
    pub g_script: f64,
    pub lap_g: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GTerms {
    pub g1: f64,
    pub g2: Vec3,
    pub g3: f64,
    pub g4: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VelocityTendency {
    pub phi: f64,
    pub u: Vec3,
    pub zeta: f64,
    pub g_script: f64,
}

/// Point values and derivatives needed by the momentum-form remainders.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MomentumJet {
    pub n_tilde: f64,
    pub grad_n: Vec3,
    pub hess_n: Mat3,
    pub m: Vec3,
    pub grad_m: Mat3,
    pub lap_m: Vec3,
    pub grad_div_m: Vec3,
    pub zeta: f64,
    pub grad_zeta: Vec3,
    pub lap_zeta: f64,
    pub g_script: f64,
    pub lap_g: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BigGTerms {
    pub g1: Vec3,
    pub g2: f64,
    pub g3: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MomentumTendency {
    pub n_tilde: f64,
    pub m: Vec3,
    pub zeta: f64,
    pub g_script: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_params() -> PhysParams {
        PhysParams::balanced(0.1, 0.0, 0.1, 0.1, 1.0, 1.0, 0.1, 1.0, 1.0).unwrap()
    }

    #[derive(Debug)]
    struct BrokenGas;

    impl Eos for BrokenGas {
        fn name(&self) -> &str {
            "broken"
        }
        fn pressure(&self, rho: f64, theta: f64) -> f64 {
            rho * theta
        }
        fn energy(&self, rho: f64, theta: f64) -> f64 {
            theta + 1.0 / rho
        }
    }

    /// Van der Waals-like gas: `P = ρθ/(1−bρ) − aρ²`, `e = c_vθ − aρ`.
    #[derive(Debug)]
    struct VanDerWaals;

    impl Eos for VanDerWaals {
        fn name(&self) -> &str {
            "vdw"
        }
        fn pressure(&self, rho: f64, theta: f64) -> f64 {
            rho * theta / (1.0 - 0.01 * rho) - 0.001 * rho * rho
        }
        fn energy(&self, rho: f64, theta: f64) -> f64 {
            1.5 * theta - 0.001 * rho
        }
    }

    #[test]
    fn equilibrium_radiation_examples() {
        assert_eq!(equilibrium_radiation(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(equilibrium_radiation(2.0, 2.0, 1.0).unwrap(), 8.0);
        assert!(equilibrium_radiation(0.0, 1.0, 1.0).is_err());
        assert!(equilibrium_radiation(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn radiation_source_examples() {
        let p = unit_params();
        assert_eq!(radiation_source(p.theta_bar, p.n_bar, &p).unwrap(), 0.0);
        assert_eq!(radiation_source(1.0, 2.0, &p).unwrap(), -1.0);
        assert_eq!(radiation_source(2.0, 0.0, &p).unwrap(), 16.0);
        assert!(radiation_source(0.0, 1.0, &p).is_err());
    }

    #[test]
    fn planck_decomposition_examples() {
        let p = unit_params();
        let s = planck_decomposition(0.0, 0.0, &p).unwrap();
        assert_eq!((s.linear, s.remainder), (0.0, 0.0));
        let s = planck_decomposition(1.0, 0.0, &p).unwrap();
        assert_eq!(s.linear, 4.0);
        assert_eq!(s.remainder, 11.0);
        assert_eq!(s.total(), 15.0);
    }

    #[test]
    fn h_term_examples() {
        let p = unit_params();
        let m = Model::ideal(p.clone()).unwrap();
        let h = m.h_terms(&PerturbationVars::default()).unwrap();
        assert!(h.0.iter().all(|v| *v == 0.0));
        assert_eq!(h5(1.0, &p), 11.0);
        let vars = PerturbationVars {
            phi: 1.0,
            ..Default::default()
        };
        assert_eq!(m.h_terms(&vars).unwrap().get(8), 0.5);
        let bad = PerturbationVars {
            phi: -1.0,
            ..Default::default()
        };
        assert!(m.h_terms(&bad).is_err());
    }

    #[test]
    fn g_term_examples() {
        let m = Model::ideal(unit_params()).unwrap();
        let g = m.g_terms(&VelocityJet::default()).unwrap();
        assert_eq!(g, GTerms::default());
        let jet = VelocityJet {
            zeta: 1.0,
            ..Default::default()
        };
        assert_eq!(m.g_terms(&jet).unwrap().g4, 11.0);
        let jet = VelocityJet {
            phi: 0.3,
            u: [0.2, -0.7, 0.0],
            ..Default::default()
        };
        assert_eq!(m.g_terms(&jet).unwrap().g1, 0.0);
    }

    #[test]
    fn big_g_term_examples() {
        let m = Model::ideal(unit_params()).unwrap();
        assert_eq!(m.big_g_terms(&MomentumJet::default()).unwrap(), BigGTerms::default());
        let jet = MomentumJet {
            zeta: 1.0,
            ..Default::default()
        };
        assert_eq!(m.big_g_terms(&jet).unwrap().g3, 11.0);
        let jet = MomentumJet {
            n_tilde: -1.0,
            ..Default::default()
        };
        assert!(matches!(m.big_g_terms(&jet), Err(Error::Domain(_))));
    }

    #[test]
    fn thermo_relation_examples() {
        let ideal = IdealGas::default();
        assert_eq!(thermo_relation_residual(&ideal, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(thermo_relation_residual(&ideal, 2.0, 3.0).unwrap(), 0.0);
        let r = thermo_relation_residual(&BrokenGas, 1.0, 1.0).unwrap();
        assert_relative_eq!(r, 1.0, max_relative = 1e-8);
        assert!(thermo_relation_residual(&ideal, -1.0, 1.0).is_err());
    }

    #[test]
    fn eos_construction_check() {
        assert!(check_eos(&IdealGas::default()).is_ok());
        assert!(check_eos(&VanDerWaals).is_ok());
        let err = Model::new(unit_params(), Arc::new(BrokenGas)).unwrap_err();
        assert!(matches!(err, Error::Construction(_)));
        assert!(Model::new_unchecked(unit_params(), Arc::new(BrokenGas)).is_ok());
    }

    #[test]
    fn eos_admissible_on_lattice() {
        for eos in [&IdealGas::default() as &dyn Eos, &VanDerWaals] {
            for (rho, theta) in eos_sample_lattice() {
                assert!(eos.p_rho(rho, theta) > 0.0);
                assert!(eos.e_theta(rho, theta) > 0.0);
            }
        }
    }

    #[test]
    fn ideal_gas_thermo_relation_vanishes_on_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let eos = IdealGas { r_gas: 0.7, c_v: 2.5 };
        for _ in 0..10_000 {
            let rho = rng.random_range(1e-3..50.0);
            let theta = rng.random_range(1e-3..50.0);
            assert_eq!(thermo_relation_residual(&eos, rho, theta).unwrap(), 0.0);
        }
    }

    #[test]
    fn params_validation() {
        let mut p = PhysParams::default();
        assert!(p.validate().is_ok());
        p.n_bar *= 1.0 + 1e-9;
        assert!(p.validate().is_err());
        assert!(PhysParams::default().with_delta(1.5).is_err());
        assert!(PhysParams::default().with_delta(0.0).is_err());
        let mut p = PhysParams::default();
        p.lambda = -0.1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn background_state_zeroes_every_term() {
        let m = Model::new(
            PhysParams::balanced(0.3, 0.1, 0.2, 0.5, 1.5, 0.7, 0.05, 1.3, 0.8).unwrap(),
            Arc::new(VanDerWaals),
        )
        .unwrap();
        assert!(m.h_terms(&PerturbationVars::default()).unwrap().0.iter().all(|v| *v == 0.0));
        assert_eq!(m.g_terms(&VelocityJet::default()).unwrap(), GTerms::default());
        assert_eq!(m.big_g_terms(&MomentumJet::default()).unwrap(), BigGTerms::default());
        let t = m.velocity_form_tendency(&VelocityJet::default()).unwrap();
        assert_eq!(t, VelocityTendency::default());
    }

    proptest! {
        #[test]
        fn planck_split_reproduces_quartic(
            zeta in -0.5f64..2.0,
            g in -0.5f64..2.0,
            theta_bar in 0.3f64..3.0,
            sigma_a in 0.1f64..5.0,
            sigma_tilde in 0.1f64..5.0,
        ) {
            let p = PhysParams::balanced(0.1, 0.0, 0.1, 0.1, sigma_a, sigma_tilde, 0.1, 1.0, theta_bar).unwrap();
            let zeta = zeta * theta_bar;
            let g = g * p.n_bar;
            let s = planck_decomposition(zeta, g, &p).unwrap();
            let direct = sigma_tilde * (zeta + theta_bar).powi(4) - sigma_a * (g + p.n_bar);
            let scale = sigma_tilde * (zeta + theta_bar).powi(4) + sigma_a * (g + p.n_bar).abs();
            prop_assert!((s.total() - direct).abs() <= 1e-13 * scale);
        }

        #[test]
        fn h5_quartic_identity(zeta in -0.9f64..3.0, theta_bar in 0.3f64..3.0, st in 0.1f64..5.0) {
            let p = PhysParams::balanced(0.1, 0.0, 0.1, 0.1, 1.0, st, 0.1, 1.0, theta_bar).unwrap();
            let zeta = zeta * theta_bar;
            let lhs = h5(zeta, &p) * zeta;
            let quartic = st * (zeta + theta_bar).powi(4) - st * theta_bar.powi(4);
            let rhs = quartic - 4.0 * st * theta_bar.powi(3) * zeta;
            let scale = st * (zeta + theta_bar).powi(4) + st * theta_bar.powi(4) + (4.0 * st * theta_bar.powi(3) * zeta).abs();
            prop_assert!((lhs - rhs).abs() <= 1e-13 * scale);
        }

        #[test]
        fn momentum_and_velocity_forms_share_the_exchange_antisymmetry(
            zeta in -0.3f64..0.3, g in -0.3f64..0.3,
        ) {
            // with u = 0 and no gradients, ρ̄e_θ ζ_t + δ𝒢_t reduces to the
            // nonlinear remainders only
            let m = Model::ideal(PhysParams::default()).unwrap();
            let jet = VelocityJet { zeta, g_script: g, ..Default::default() };
            let lin = m.velocity_form_linear(&jet);
            let sum = lin.zeta / m.inv_heat_capacity() + m.params.delta * lin.g_script;
            prop_assert!(sum.abs() < 1e-14);
        }
    }
}
