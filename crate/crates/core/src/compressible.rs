//! IMEX integration of the scaled compressible radiation hydrodynamics
//! system on a periodic grid.
//!
//! The stiff linear part (acoustics frozen at the background, all diffusion
//! and the linear matter/radiation exchange) is solved exactly per Fourier
//! mode as a 4×4 complex system in `(φ̂, k̂·û, ζ̂, 𝒢̂)` plus a transverse
//! scalar. Everything else is explicit and dealiased.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mat_vec, solve_dense};
use crate::model::{Mat3, Model, MomentumJet, Vec3, VelocityJet, PhysParams};
use crate::spectral::{Hat, ScalarField, SpectralGrid, VectorField};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Primitive unknowns `(ρ, u, θ, n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressibleState {
    pub rho: ScalarField,
    pub u: VectorField,
    pub theta: ScalarField,
    pub n: ScalarField,
    pub time: f64,
}

/// Perturbation unknowns `(φ, u, ζ, 𝒢) = (ρ−ρ̄, u, θ−θ̄, n−n̄)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationState {
    pub phi: ScalarField,
    pub u: VectorField,
    pub zeta: ScalarField,
    pub g_script: ScalarField,
    pub time: f64,
}

/// Momentum-form unknowns `(ñ, m, ζ, 𝒢)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    pub n_tilde: ScalarField,
    pub m: VectorField,
    pub zeta: ScalarField,
    pub g_script: ScalarField,
}

impl CompressibleState {
    pub fn equilibrium(grid: &SpectralGrid, params: &PhysParams) -> Self {
        CompressibleState {
            rho: ScalarField::constant(grid, params.rho_bar),
            u: VectorField::zeros(grid),
            theta: ScalarField::constant(grid, params.theta_bar),
            n: ScalarField::constant(grid, params.n_bar),
            time: 0.0,
        }
    }

    pub fn grid(&self) -> &SpectralGrid {
        self.rho.grid()
    }

    pub fn check_positive(&self) -> Result<()> {
        let finite = self.rho.is_finite()
            && self.u.is_finite()
            && self.theta.is_finite()
            && self.n.is_finite();
        if !finite {
            return Err(Error::StateInvalid {
                time: self.time,
                reason: "non-finite values".into(),
            });
        }
        let rmin = self.rho.min();
        let tmin = self.theta.min();
        if !(rmin > 0.0) || !(tmin > 0.0) {
            return Err(Error::StateInvalid {
                time: self.time,
                reason: format!("positivity lost (min rho {rmin:e}, min theta {tmin:e})"),
            });
        }
        Ok(())
    }
}

impl PerturbationState {
    pub fn zero(grid: &SpectralGrid) -> Self {
        PerturbationState {
            phi: ScalarField::zeros(grid),
            u: VectorField::zeros(grid),
            zeta: ScalarField::zeros(grid),
            g_script: ScalarField::zeros(grid),
            time: 0.0,
        }
    }

    pub fn grid(&self) -> &SpectralGrid {
        self.phi.grid()
    }

    pub fn from_primitive(s: &CompressibleState, params: &PhysParams) -> Self {
        PerturbationState {
            phi: s.rho.shift(-params.rho_bar),
            u: s.u.clone(),
            zeta: s.theta.shift(-params.theta_bar),
            g_script: s.n.shift(-params.n_bar),
            time: s.time,
        }
    }

    pub fn to_primitive(&self, params: &PhysParams) -> CompressibleState {
        CompressibleState {
            rho: self.phi.shift(params.rho_bar),
            u: self.u.clone(),
            theta: self.zeta.shift(params.theta_bar),
            n: self.g_script.shift(params.n_bar),
            time: self.time,
        }
    }

    /// Largest max-norm over all components.
    pub fn max_abs(&self) -> f64 {
        self.phi
            .max_abs()
            .max(self.u.max_abs())
            .max(self.zeta.max_abs())
            .max(self.g_script.max_abs())
    }

    fn to_hats(&self) -> Vec<Hat> {
        let grid = self.grid();
        let mut out = Vec::with_capacity(grid.dim() + 3);
        out.push(self.phi.hat());
        out.extend(self.u.hats());
        out.push(self.zeta.hat());
        out.push(self.g_script.hat());
        out
    }

    fn from_hats(grid: &SpectralGrid, x: &[Hat], time: f64) -> Self {
        let d = grid.dim();
        PerturbationState {
            phi: ScalarField::from_hat(grid, &x[0]),
            u: VectorField::from_hats(grid, &x[1..1 + d]),
            zeta: ScalarField::from_hat(grid, &x[1 + d]),
            g_script: ScalarField::from_hat(grid, &x[2 + d]),
            time,
        }
    }
}

impl MomentumState {
    pub fn from_primitive(s: &CompressibleState, params: &PhysParams) -> Self {
        let rb = params.rho_bar;
        MomentumState {
            n_tilde: s.rho.map(|r| (r - rb) / rb),
            m: s.u.mul_scalar(&s.rho.scale(1.0 / rb)),
            zeta: s.theta.shift(-params.theta_bar),
            g_script: s.n.shift(-params.n_bar),
        }
    }
}

/// Pointwise tendencies of a four-block state, ordered as the unknowns of
/// the formulation that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Tendency {
    pub density: Vec<f64>,
    pub vector: Vec<Vec<f64>>,
    pub temperature: Vec<f64>,
    pub radiation: Vec<f64>,
}

impl Tendency {
    fn zeros(grid: &SpectralGrid) -> Self {
        let n = grid.npts();
        Tendency {
            density: vec![0.0; n],
            vector: vec![vec![0.0; n]; grid.dim()],
            temperature: vec![0.0; n],
            radiation: vec![0.0; n],
        }
    }

    /// Blocks as a flat list `[density, vector…, temperature, radiation]`.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.density];
        v.extend(self.vector.iter().map(|c| c.as_slice()));
        v.push(&self.temperature);
        v.push(&self.radiation);
        v
    }

    /// Maps primitive tendencies `(ρ_t, u_t, θ_t, n_t)` to the momentum form
    /// `(ρ_t/ρ̄, (ρ_t u + ρ u_t)/ρ̄, θ_t, n_t)`.
    pub fn primitive_to_momentum(&self, state: &CompressibleState, rho_bar: f64) -> Tendency {
        let rho = state.rho.values();
        let vector = self
            .vector
            .iter()
            .zip(state.u.comps())
            .map(|(ut, u)| {
                (0..rho.len())
                    .map(|p| (self.density[p] * u[p] + rho[p] * ut[p]) / rho_bar)
                    .collect()
            })
            .collect();
        Tendency {
            density: self.density.iter().map(|v| v / rho_bar).collect(),
            vector,
            temperature: self.temperature.clone(),
            radiation: self.radiation.clone(),
        }
    }

    /// Largest block-wise relative max-norm discrepancy.
    pub fn relative_discrepancy(&self, other: &Tendency) -> f64 {
        self.blocks()
            .iter()
            .zip(other.blocks().iter())
            .map(|(a, b)| {
                let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let diff = a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                if scale > 0.0 {
                    diff / scale
                } else {
                    diff
                }
            })
            .fold(0.0, f64::max)
    }

    fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

// ---------------------------------------------------------------------------
// Spectral derivative stacks

struct ScalarDerivs {
    grad: Vec<Vec<f64>>,
    lap: Vec<f64>,
}

fn scalar_derivs(grid: &SpectralGrid, h: &[Complex64]) -> ScalarDerivs {
    ScalarDerivs {
        grad: (0..grid.dim())
            .map(|a| grid.inverse(&grid.deriv_hat(h, a)))
            .collect(),
        lap: grid.inverse(&grid.lap_hat(h)),
    }
}

struct VectorDerivs {
    /// `grad[i][j] = ∂_j v_i`
    grad: Vec<Vec<Vec<f64>>>,
    lap: Vec<Vec<f64>>,
    grad_div: Vec<Vec<f64>>,
}

fn vector_derivs(grid: &SpectralGrid, hats: &[Hat]) -> VectorDerivs {
    let d = grid.dim();
    let div = grid.div_hat(hats);
    VectorDerivs {
        grad: hats
            .iter()
            .map(|h| (0..d).map(|j| grid.inverse(&grid.deriv_hat(h, j))).collect())
            .collect(),
        lap: hats.iter().map(|h| grid.inverse(&grid.lap_hat(h))).collect(),
        grad_div: (0..d).map(|j| grid.inverse(&grid.deriv_hat(&div, j))).collect(),
    }
}

fn vec3_at(v: &[Vec<f64>], p: usize) -> Vec3 {
    let mut out = [0.0; 3];
    for (a, c) in v.iter().enumerate() {
        out[a] = c[p];
    }
    out
}

fn mat3_at(m: &[Vec<Vec<f64>>], p: usize) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            out[i][j] = c[p];
        }
    }
    out
}

fn invalid(time: f64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Domain(reason) => Error::StateInvalid { time, reason },
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Right-hand sides

/// Tendencies of the primitive system with the temperature equation in
/// `θ`-form. The pressure gradient is `P_ρ∇ρ + P_θ∇θ` pointwise.
pub fn rhs_primitive(state: &CompressibleState, model: &Model) -> Result<Tendency> {
    state.check_positive()?;
    let grid = state.grid();
    let p = &model.params;
    let eos = model.eos.as_ref();
    let d = grid.dim();
    let npts = grid.npts();
    let d2 = p.delta * p.delta;

    let rho = state.rho.values();
    let theta = state.theta.values();
    let nrad = state.n.values();
    let u = state.u.comps();

    // −div(ρu) from the spectral divergence of the flux
    let flux: Vec<Hat> = u
        .iter()
        .map(|c| grid.forward(&c.iter().zip(rho).map(|(a, b)| a * b).collect::<Vec<_>>()))
        .collect();
    let rho_t: Vec<f64> = grid.inverse(&grid.div_hat(&flux)).iter().map(|v| -v).collect();

    let rd = scalar_derivs(grid, &state.rho.hat());
    let td = scalar_derivs(grid, &state.theta.hat());
    let nd = scalar_derivs(grid, &state.n.hat());
    let ud = vector_derivs(grid, &state.u.hats());

    let mut out = Tendency::zeros(grid);
    out.density = rho_t;
    for q in 0..npts {
        let (r, th) = (rho[q], theta[q]);
        let p_rho = eos.p_rho(r, th);
        let p_theta = eos.p_theta(r, th);
        let e_theta = eos.e_theta(r, th);
        let du = mat3_at(&ud.grad, q);
        let div_u = (0..d).map(|i| du[i][i]).sum::<f64>();
        for i in 0..d {
            let adv: f64 = (0..d).map(|j| u[j][q] * du[i][j]).sum();
            let grad_p = p_rho * rd.grad[i][q] + p_theta * td.grad[i][q];
            let visc = p.mu * ud.lap[i][q] + (p.mu + p.lambda) * ud.grad_div[i][q];
            out.vector[i][q] = -adv - grad_p / (d2 * r) + visc / r;
        }
        let adv_t: f64 = (0..d).map(|j| u[j][q] * td.grad[j][q]).sum();
        let heating = crate::model::viscous_heating(&du, p.mu, p.lambda);
        let source = p.sigma_tilde * th.powi(4) - p.sigma_a * nrad[q];
        let cap = r * e_theta;
        out.temperature[q] = -adv_t - th * p_theta * div_u / cap + p.kappa * td.lap[q] / cap
            + d2 * heating / cap
            - source / cap;
        out.radiation[q] = (p.nu * nd.lap[q] + source) / p.delta;
    }
    if !out.is_finite() {
        return Err(Error::StateInvalid {
            time: state.time,
            reason: "non-finite tendency".into(),
        });
    }
    Ok(out)
}

/// Tendencies of the `(φ, u, ζ, 𝒢)` system assembled from its frozen
/// linear part and the pointwise remainders `g₁…g₄`.
pub fn rhs_perturbation(state: &PerturbationState, model: &Model) -> Result<Tendency> {
    let grid = state.grid();
    let d = grid.dim();
    let pd = scalar_derivs(grid, &state.phi.hat());
    let zd = scalar_derivs(grid, &state.zeta.hat());
    let gd = scalar_derivs(grid, &state.g_script.hat());
    let ud = vector_derivs(grid, &state.u.hats());
    let mut out = Tendency::zeros(grid);
    let err = invalid(state.time);
    for q in 0..grid.npts() {
        let jet = VelocityJet {
            phi: state.phi.values()[q],
            grad_phi: vec3_at(&pd.grad, q),
            u: state.u.at(q),
            grad_u: mat3_at(&ud.grad, q),
            lap_u: vec3_at(&ud.lap, q),
            grad_div_u: vec3_at(&ud.grad_div, q),
            zeta: state.zeta.values()[q],
            grad_zeta: vec3_at(&zd.grad, q),
            lap_zeta: zd.lap[q],
            g_script: state.g_script.values()[q],
            lap_g: gd.lap[q],
        };
        let t = model.velocity_form_tendency(&jet).map_err(&err)?;
        out.density[q] = t.phi;
        for i in 0..d {
            out.vector[i][q] = t.u[i];
        }
        out.temperature[q] = t.zeta;
        out.radiation[q] = t.g_script;
    }
    Ok(out)
}

/// Tendencies of the momentum form `(ñ, m, ζ, 𝒢)` with remainders
/// `G₁…G₃`.
pub fn rhs_momentum(state: &MomentumState, model: &Model) -> Result<Tendency> {
    let grid = state.n_tilde.grid();
    let d = grid.dim();
    let n_hat = state.n_tilde.hat();
    let nd = scalar_derivs(grid, &n_hat);
    let grad_hats: Vec<Hat> = (0..d).map(|a| grid.deriv_hat(&n_hat, a)).collect();
    let hess: Vec<Vec<Vec<f64>>> = grad_hats
        .iter()
        .map(|g| (0..d).map(|j| grid.inverse(&grid.deriv_hat(g, j))).collect())
        .collect();
    let zd = scalar_derivs(grid, &state.zeta.hat());
    let gd = scalar_derivs(grid, &state.g_script.hat());
    let md = vector_derivs(grid, &state.m.hats());
    let mut out = Tendency::zeros(grid);
    for q in 0..grid.npts() {
        let jet = MomentumJet {
            n_tilde: state.n_tilde.values()[q],
            grad_n: vec3_at(&nd.grad, q),
            hess_n: mat3_at(&hess, q),
            m: state.m.at(q),
            grad_m: mat3_at(&md.grad, q),
            lap_m: vec3_at(&md.lap, q),
            grad_div_m: vec3_at(&md.grad_div, q),
            zeta: state.zeta.values()[q],
            grad_zeta: vec3_at(&zd.grad, q),
            lap_zeta: zd.lap[q],
            g_script: state.g_script.values()[q],
            lap_g: gd.lap[q],
        };
        let t = model.momentum_form_tendency(&jet)?;
        out.density[q] = t.n_tilde;
        for i in 0..d {
            out.vector[i][q] = t.m[i];
        }
        out.temperature[q] = t.zeta;
        out.radiation[q] = t.g_script;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Frozen linear operator

/// Per-mode 4×4 generator in `(φ̂, ŵ, ζ̂, 𝒢̂)` with `ŵ = k̂·û`, as a function
/// of `|k_d|` and `|k|²`.
pub fn mode_matrix(model: &Model, kmag: f64, ks2: f64) -> [[Complex64; 4]; 4] {
    let p = &model.params;
    let bg = &model.bg;
    let rb = p.rho_bar;
    let d2 = p.delta * p.delta;
    let cap = model.inv_heat_capacity();
    let a = p.emission_slope();
    let i = Complex64::new(0.0, 1.0);
    let r = |v: f64| Complex64::new(v, 0.0);
    [
        [ZERO, -i * (rb * kmag), ZERO, ZERO],
        [
            -i * (kmag * bg.p_rho / (rb * d2)),
            r(-(p.mu / rb) * ks2 - ((p.mu + p.lambda) / rb) * kmag * kmag),
            -i * (kmag * bg.p_theta / (rb * d2)),
            ZERO,
        ],
        [
            ZERO,
            -i * (kmag * model.temp_coupling()),
            r(-p.kappa * cap * ks2 - a * cap),
            r(p.sigma_a * cap),
        ],
        [ZERO, ZERO, r(a / p.delta), r((-p.nu * ks2 - p.sigma_a) / p.delta)],
    ]
}

/// Transverse velocity symbol `−(μ/ρ̄)|k|²`.
fn transverse_symbol(model: &Model, ks2: f64) -> f64 {
    -(model.params.mu / model.params.rho_bar) * ks2
}

/// Split of `û` into `(ŵ, k̂)`; `k̂` is `None` for modes with `k_d = 0`.
fn longitudinal(grid: &SpectralGrid, x: &[Hat], p: usize) -> (f64, [f64; 3], Complex64) {
    let d = grid.dim();
    let mut k = [0.0; 3];
    let mut kk = 0.0;
    for (a, ka) in k.iter_mut().enumerate().take(d) {
        *ka = grid.kd(a)[p];
        kk += *ka * *ka;
    }
    let kmag = kk.sqrt();
    if kmag == 0.0 {
        return (0.0, [0.0; 3], ZERO);
    }
    let khat = [k[0] / kmag, k[1] / kmag, k[2] / kmag];
    let mut w = ZERO;
    for a in 0..d {
        w += khat[a] * x[1 + a][p];
    }
    (kmag, khat, w)
}

/// `L x` for a stacked coefficient vector `[φ̂, û…, ζ̂, 𝒢̂]`.
pub fn apply_linear(grid: &SpectralGrid, model: &Model, x: &[Hat]) -> Vec<Hat> {
    let d = grid.dim();
    let mut out: Vec<Hat> = vec![vec![ZERO; grid.npts()]; d + 3];
    for p in 0..grid.npts() {
        let ks2 = grid.ks2()[p];
        let (kmag, khat, w) = longitudinal(grid, x, p);
        let m = mode_matrix(model, kmag, ks2);
        let y = mat_vec(&m, &[x[0][p], w, x[1 + d][p], x[2 + d][p]]);
        let ts = transverse_symbol(model, ks2);
        out[0][p] = y[0];
        for a in 0..d {
            let ut = x[1 + a][p] - w * khat[a];
            out[1 + a][p] = ut * ts + y[1] * khat[a];
        }
        out[1 + d][p] = y[2];
        out[2 + d][p] = y[3];
    }
    out
}

/// Precomputed `(I − h L)⁻¹` for every mode.
#[derive(Clone, Debug)]
pub struct ImplicitSolver {
    h: f64,
    inv: Vec<[[Complex64; 4]; 4]>,
    inv_t: Vec<f64>,
}

impl ImplicitSolver {
    pub fn new(grid: &SpectralGrid, model: &Model, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::domain("implicit step must be positive"));
        }
        let d = grid.dim();
        let mut inv = Vec::with_capacity(grid.npts());
        let mut inv_t = Vec::with_capacity(grid.npts());
        let one = Complex64::new(1.0, 0.0);
        for p in 0..grid.npts() {
            let ks2 = grid.ks2()[p];
            let kmag = (0..d).map(|a| grid.kd(a)[p].powi(2)).sum::<f64>().sqrt();
            let l = mode_matrix(model, kmag, ks2);
            let mut a = [[ZERO; 4]; 4];
            for r in 0..4 {
                for c in 0..4 {
                    a[r][c] = if r == c { one } else { ZERO } - l[r][c] * h;
                }
            }
            let mut m = [[ZERO; 4]; 4];
            for c in 0..4 {
                let mut e = [ZERO; 4];
                e[c] = one;
                let col = solve_dense(a, e).ok_or_else(|| {
                    Error::Solver(format!("singular implicit system at mode {:?}", grid.mode(p)))
                })?;
                for r in 0..4 {
                    m[r][c] = col[r];
                }
            }
            inv.push(m);
            inv_t.push(1.0 / (1.0 - h * transverse_symbol(model, ks2)));
        }
        Ok(ImplicitSolver { h, inv, inv_t })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn mode_inverse(&self, p: usize) -> &[[Complex64; 4]; 4] {
        &self.inv[p]
    }

    pub fn solve(&self, grid: &SpectralGrid, rhs: &[Hat]) -> Vec<Hat> {
        let d = grid.dim();
        let mut out: Vec<Hat> = vec![vec![ZERO; grid.npts()]; d + 3];
        for p in 0..grid.npts() {
            let (_, khat, w) = longitudinal(grid, rhs, p);
            let y = mat_vec(&self.inv[p], &[rhs[0][p], w, rhs[1 + d][p], rhs[2 + d][p]]);
            out[0][p] = y[0];
            for a in 0..d {
                let ut = rhs[1 + a][p] - w * khat[a];
                out[1 + a][p] = ut * self.inv_t[p] + y[1] * khat[a];
            }
            out[1 + d][p] = y[2];
            out[2 + d][p] = y[3];
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Time stepping

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    #[default]
    Primitive,
    Perturbation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ImexScheme {
    /// Backward/forward Euler.
    #[default]
    Euler,
    /// Stiffly accurate second-order ARS(2,2,2).
    Ars222,
}

/// Implicit term set used by every scheme.
pub const IMEX_SPLIT: &str =
    "implicit: frozen acoustics, mu/kappa/nu diffusion, linear exchange; explicit: advection and remainders";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Fixed step; `None` selects `0.25·dx/max(1, ‖u₀‖∞)`.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_end: f64,
    #[serde(default)]
    pub formulation: Formulation,
    #[serde(default)]
    pub scheme: ImexScheme,
    /// Abort when the advective CFL number `dt‖u‖∞/dx` exceeds 1.
    #[serde(default = "default_true")]
    pub cfl_check: bool,
    /// Diagnostic sampling interval in time units; `None` samples every step.
    #[serde(default)]
    pub cadence: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl SolverConfig {
    pub fn new(t_end: f64) -> Self {
        SolverConfig {
            dt: None,
            t_end,
            formulation: Formulation::Primitive,
            scheme: ImexScheme::Euler,
            cfl_check: true,
            cadence: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::domain(format!("dt must be positive (got {dt})")));
            }
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::domain(format!("t_end must be >= 0 (got {})", self.t_end)));
        }
        if let Some(c) = self.cadence {
            if !(c > 0.0) {
                return Err(Error::domain("cadence must be positive"));
            }
        }
        Ok(())
    }
}

/// `0.25·dx/max(1, ‖u‖∞)`.
pub fn default_dt(grid: &SpectralGrid, u: &VectorField) -> f64 {
    0.25 * grid.dx() / u.max_abs().max(1.0)
}

/// Number of steps and the effective step that lands exactly on `t_end`.
pub fn step_plan(t_end: f64, dt: f64) -> (usize, f64) {
    if t_end == 0.0 {
        return (0, dt);
    }
    let n = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    (n, t_end / n as f64)
}

/// Steps between diagnostic samples.
pub fn cadence_steps(cadence: Option<f64>, dt: f64) -> usize {
    match cadence {
        Some(c) => ((c / dt).round() as usize).max(1),
        None => 1,
    }
}

/// Reusable IMEX stepper with the implicit solves precomputed.
pub struct ImexStepper {
    model: Model,
    grid: SpectralGrid,
    dt: f64,
    scheme: ImexScheme,
    formulation: Formulation,
    solver: ImplicitSolver,
}

impl ImexStepper {
    pub fn new(
        grid: &SpectralGrid,
        model: &Model,
        dt: f64,
        scheme: ImexScheme,
        formulation: Formulation,
    ) -> Result<Self> {
        let h = match scheme {
            ImexScheme::Euler => dt,
            ImexScheme::Ars222 => dt * ars_gamma(),
        };
        Ok(ImexStepper {
            model: model.clone(),
            grid: grid.clone(),
            dt,
            scheme,
            formulation,
            solver: ImplicitSolver::new(grid, model, h)?,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Explicit part `N(x) = rhs(x) − L x`, dealiased.
    fn explicit(&self, state: &PerturbationState, x: &[Hat]) -> Result<Vec<Hat>> {
        let t = match self.formulation {
            Formulation::Primitive => {
                rhs_primitive(&state.to_primitive(&self.model.params), &self.model)?
            }
            Formulation::Perturbation => rhs_perturbation(state, &self.model)?,
        };
        let lx = apply_linear(&self.grid, &self.model, x);
        let mut out: Vec<Hat> = t
            .blocks()
            .iter()
            .zip(lx)
            .map(|(b, l)| {
                self.grid
                    .forward(b)
                    .into_iter()
                    .zip(l)
                    .map(|(a, c)| a - c)
                    .collect()
            })
            .collect();
        for h in &mut out {
            self.grid.dealias_hat(h);
        }
        Ok(out)
    }

    pub fn step(&self, state: &PerturbationState) -> Result<PerturbationState> {
        let grid = &self.grid;
        let dt = self.dt;
        let x0 = state.to_hats();
        let n0 = self.explicit(state, &x0)?;
        let x1 = match self.scheme {
            ImexScheme::Euler => {
                let rhs = axpy_blocks(&x0, dt, &n0);
                self.solver.solve(grid, &rhs)
            }
            ImexScheme::Ars222 => {
                let g = ars_gamma();
                let dl = 1.0 - 1.0 / (2.0 * g);
                let y1 = self.solver.solve(grid, &axpy_blocks(&x0, g * dt, &n0));
                let s1 = PerturbationState::from_hats(grid, &y1, state.time + g * dt);
                let n1 = self.explicit(&s1, &y1)?;
                let ly1 = apply_linear(grid, &self.model, &y1);
                let mut rhs = axpy_blocks(&x0, dt * dl, &n0);
                rhs = axpy_blocks(&rhs, dt * (1.0 - dl), &n1);
                rhs = axpy_blocks(&rhs, dt * (1.0 - g), &ly1);
                self.solver.solve(grid, &rhs)
            }
        };
        let next = PerturbationState::from_hats(grid, &x1, state.time + dt);
        next.to_primitive(&self.model.params).check_positive()?;
        Ok(next)
    }
}

fn ars_gamma() -> f64 {
    1.0 - 1.0 / 2f64.sqrt()
}

fn axpy_blocks(x: &[Hat], a: f64, y: &[Hat]) -> Vec<Hat> {
    x.iter()
        .zip(y)
        .map(|(xb, yb)| xb.iter().zip(yb).map(|(u, v)| u + v * a).collect())
        .collect()
}

/// One IMEX step of the given scheme.
pub fn step_imex(
    state: &PerturbationState,
    dt: f64,
    model: &Model,
    scheme: ImexScheme,
    formulation: Formulation,
) -> Result<PerturbationState> {
    ImexStepper::new(state.grid(), model, dt, scheme, formulation)?.step(state)
}

/// Termination record of a run that violated an invariant.
#[derive(Clone, Debug, PartialEq)]
pub struct AbortReport {
    pub last_valid_time: f64,
    pub error: Error,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub final_state: PerturbationState,
    pub steps: usize,
    pub dt: f64,
    /// Some sample had `n < 0` somewhere.
    pub negative_radiation: bool,
    pub max_cfl: f64,
    pub aborted: Option<AbortReport>,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.aborted.is_none()
    }
}

/// Advances `initial` to `t_end`, calling `observer` on the initial state,
/// every `cadence` and at the final time.
pub fn run(
    initial: &CompressibleState,
    config: &SolverConfig,
    model: &Model,
    observer: &mut dyn FnMut(&PerturbationState) -> Result<()>,
) -> Result<RunOutcome> {
    config.validate()?;
    initial.check_positive()?;
    let grid = initial.grid().clone();
    let dt_req = config.dt.unwrap_or_else(|| default_dt(&grid, &initial.u));
    let (nsteps, dt) = step_plan(config.t_end, dt_req);
    let every = cadence_steps(config.cadence, dt);
    let stepper = ImexStepper::new(&grid, model, dt, config.scheme, config.formulation)?;
    let mut state = PerturbationState::from_primitive(initial, &model.params);
    let n_bar = model.params.n_bar;
    let mut negative = state.g_script.min() + n_bar < 0.0;
    let mut max_cfl = dt * state.u.max_abs() / grid.dx();
    observer(&state)?;
    let mut aborted = None;
    for k in 1..=nsteps {
        match stepper.step(&state) {
            Ok(mut next) => {
                if k == nsteps {
                    next.time = config.t_end;
                }
                let cfl = dt * next.u.max_abs() / grid.dx();
                max_cfl = max_cfl.max(cfl);
                if config.cfl_check && cfl > 1.0 {
                    aborted = Some(AbortReport {
                        last_valid_time: state.time,
                        error: Error::StateInvalid {
                            time: next.time,
                            reason: format!("advective CFL {cfl:.3} exceeds 1"),
                        },
                    });
                    break;
                }
                negative |= next.g_script.min() + n_bar < 0.0;
                state = next;
                if k % every == 0 || k == nsteps {
                    observer(&state)?;
                }
            }
            Err(e) => {
                aborted = Some(AbortReport {
                    last_valid_time: state.time,
                    error: e,
                });
                break;
            }
        }
    }
    Ok(RunOutcome {
        final_state: state,
        steps: nsteps,
        dt,
        negative_radiation: negative,
        max_cfl,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::random_smooth;

    fn setup(n: usize) -> (SpectralGrid, Model) {
        (SpectralGrid::periodic(2, n).unwrap(), Model::ideal(PhysParams::default()).unwrap())
    }

    fn unit_model(delta: f64) -> Model {
        Model::ideal(PhysParams::balanced(0.1, 0.0, 0.1, 0.1, 1.0, 1.0, delta, 1.0, 1.0).unwrap())
            .unwrap()
    }

    fn smooth_state(grid: &SpectralGrid, model: &Model, amp: f64, seed: u64) -> CompressibleState {
        let p = &model.params;
        let u = VectorField::new(
            grid,
            (0..grid.dim())
                .map(|a| random_smooth(grid, seed + a as u64, 3, amp).into_values())
                .collect(),
        )
        .unwrap();
        CompressibleState {
            rho: random_smooth(grid, seed + 10, 3, amp).shift(p.rho_bar),
            u,
            theta: random_smooth(grid, seed + 11, 3, amp).shift(p.theta_bar),
            n: random_smooth(grid, seed + 12, 3, amp).shift(p.n_bar),
            time: 0.0,
        }
    }

    #[test]
    fn equilibrium_tendencies_vanish() {
        let (g, m) = setup(16);
        let s = CompressibleState::equilibrium(&g, &m.params);
        let t = rhs_primitive(&s, &m).unwrap();
        assert!(t.blocks().iter().all(|b| b.iter().all(|v| *v == 0.0)));
        let t = rhs_perturbation(&PerturbationState::zero(&g), &m).unwrap();
        assert!(t.blocks().iter().all(|b| b.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn uniform_exchange_example() {
        let g = SpectralGrid::periodic(2, 8).unwrap();
        let m = unit_model(0.1);
        let mut s = CompressibleState::equilibrium(&g, &m.params);
        s.n = ScalarField::constant(&g, 2.0);
        let t = rhs_primitive(&s, &m).unwrap();
        assert!((t.temperature[0] - 1.0).abs() < 1e-14);
        assert!((t.radiation[0] + 10.0).abs() < 1e-12);
    }

    #[test]
    fn zeta_only_leading_rate() {
        let g = SpectralGrid::periodic(2, 8).unwrap();
        let m = unit_model(0.1);
        let mut s = PerturbationState::zero(&g);
        let z = 1e-6;
        s.zeta = ScalarField::constant(&g, z);
        let t = rhs_perturbation(&s, &m).unwrap();
        assert!((t.temperature[0] / z + 4.0).abs() < 1e-4);
    }

    #[test]
    fn primitive_and_perturbation_rhs_agree() {
        let (g, m) = setup(32);
        let s = smooth_state(&g, &m, 0.05, 1);
        let a = rhs_primitive(&s, &m).unwrap();
        let b = rhs_perturbation(&PerturbationState::from_primitive(&s, &m.params), &m).unwrap();
        assert!(a.relative_discrepancy(&b) < 1e-10, "{}", a.relative_discrepancy(&b));
        let c = rhs_momentum(&MomentumState::from_primitive(&s, &m.params), &m).unwrap();
        let am = a.primitive_to_momentum(&s, m.params.rho_bar);
        assert!(am.relative_discrepancy(&c) < 1e-10, "{}", am.relative_discrepancy(&c));
    }

    #[test]
    fn implicit_solve_inverts_operator() {
        let (g, m) = setup(16);
        let s = PerturbationState::from_primitive(&smooth_state(&g, &m, 0.1, 3), &m.params);
        let x = s.to_hats();
        let h = 0.3;
        let solver = ImplicitSolver::new(&g, &m, h).unwrap();
        let y = solver.solve(&g, &x);
        let ly = apply_linear(&g, &m, &y);
        let back = axpy_blocks(&y, -h, &ly);
        for (a, b) in back.iter().zip(&x) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let (g, m) = setup(16);
        for scheme in [ImexScheme::Euler, ImexScheme::Ars222] {
            let s = PerturbationState::zero(&g);
            let next = step_imex(&s, 0.05, &m, scheme, Formulation::Primitive).unwrap();
            assert_eq!(next.max_abs(), 0.0);
        }
    }

    #[test]
    fn mass_is_conserved() {
        let (g, m) = setup(32);
        let init = smooth_state(&g, &m, 0.05, 5);
        let mass0 = init.rho.integral();
        let stepper = ImexStepper::new(&g, &m, 0.02, ImexScheme::Euler, Formulation::Primitive).unwrap();
        let mut s = PerturbationState::from_primitive(&init, &m.params);
        for _ in 0..10 {
            s = stepper.step(&s).unwrap();
            let mass = s.to_primitive(&m.params).rho.integral();
            assert!((mass - mass0).abs() < 1e-12 * mass0);
        }
    }

    #[test]
    fn positivity_loss_is_reported() {
        let (g, m) = setup(8);
        let mut s = CompressibleState::equilibrium(&g, &m.params);
        s.rho.values_mut()[3] = -0.1;
        assert!(matches!(rhs_primitive(&s, &m), Err(Error::StateInvalid { .. })));
    }

    #[test]
    fn step_plan_lands_on_end() {
        assert_eq!(step_plan(1.0, 0.3), (4, 0.25));
        assert_eq!(step_plan(1.0, 0.25), (4, 0.25));
        assert_eq!(step_plan(0.0, 0.1).0, 0);
    }
}
