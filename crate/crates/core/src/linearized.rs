//! Frozen-coefficient linearized problem in momentum variables
//!
//! ```text
//! ñ_t + div m = 0
//! m_t − μ̄ div(A∇m) − (λ̄+μ̄)∇(A div m) + ρ̄P_ρ/δ² ∇ñ + P_θ/δ² ∇ζ = G1
//! ζ_t + θ̄P_θ/(ρ̄e_θ) div m = κ/(ρ̄e_θ) Δζ − L/(ρ̄e_θ) + G2
//! δ𝒢_t − νΔ𝒢 = L + G3,      L = 4σ̃θ̄³ζ − σ_a𝒢
//! ```
//!
//! and a probe of its uniform estimate. The coefficient `A` is split as
//! `Ā + (A − Ā)` with `Ā` the midpoint of its bounds; the `Ā` part is
//! integrated exactly per Fourier mode (first-order exponential time
//! differencing), the remainder and forcings explicitly.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::compressible::{step_plan, MomentumState};
use crate::diagnostics::bundle_of;
use crate::error::{Error, Result};
use crate::model::{Model, Vec3};
use crate::spectral::{Hat, ScalarField, SpectralGrid, VectorField};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Parametrized coefficient families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientFamily {
    /// `A ≡ value`.
    Constant { value: f64 },
    /// `A = 1 + a sin x sin t`, `|a| < 1`.
    StandingWave { amplitude: f64 },
}

impl Default for CoefficientFamily {
    fn default() -> Self {
        CoefficientFamily::Constant { value: 1.0 }
    }
}

impl CoefficientFamily {
    pub fn label(&self) -> &'static str {
        match self {
            CoefficientFamily::Constant { .. } => "constant",
            CoefficientFamily::StandingWave { .. } => "standing-wave",
        }
    }
}

type CoeffFn = dyn Fn(Vec3, f64) -> f64 + Send + Sync;

/// `A(x, t)` with declared bounds `0 < M₀ ≤ A ≤ M₁`.
#[derive(Clone)]
pub struct Coefficient {
    f: Arc<CoeffFn>,
    lower: f64,
    upper: f64,
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coefficient")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish_non_exhaustive()
    }
}

impl Coefficient {
    pub fn custom(f: impl Fn(Vec3, f64) -> f64 + Send + Sync + 'static, lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower <= upper && upper.is_finite()) {
            return Err(Error::domain(format!(
                "coefficient bounds must satisfy 0 < M0 <= M1 < inf (got {lower}, {upper})"
            )));
        }
        Ok(Coefficient {
            f: Arc::new(f),
            lower,
            upper,
        })
    }

    pub fn from_family(family: CoefficientFamily) -> Result<Self> {
        match family {
            CoefficientFamily::Constant { value } => Coefficient::custom(move |_, _| value, value, value),
            CoefficientFamily::StandingWave { amplitude } => {
                if !(amplitude.abs() < 1.0) {
                    return Err(Error::domain(format!(
                        "standing-wave amplitude must satisfy |a| < 1 (got {amplitude})"
                    )));
                }
                Coefficient::custom(
                    move |x, t| 1.0 + amplitude * x[0].sin() * t.sin(),
                    1.0 - amplitude.abs(),
                    1.0 + amplitude.abs(),
                )
            }
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    /// Midpoint of the bounds, the frozen part of the split.
    pub fn frozen(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    /// Samples `A(·, t)` and checks the bounds.
    pub fn sample(&self, grid: &SpectralGrid, t: f64) -> Result<ScalarField> {
        let a = ScalarField::from_fn(grid, |x| (self.f)(x, t));
        let tol = 1e-12 * self.upper.max(1.0);
        let (lo, hi) = (a.min(), a.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        if !(lo >= self.lower - tol && hi <= self.upper + tol) {
            return Err(Error::domain(format!(
                "coefficient leaves [{}, {}] at t = {t}: range [{lo}, {hi}]",
                self.lower, self.upper
            )));
        }
        Ok(a)
    }
}

/// Forcings `G(x) cos(ωt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Forcing {
    pub g1: VectorField,
    pub g2: ScalarField,
    pub g3: ScalarField,
    pub omega: f64,
}

impl Forcing {
    pub fn zero(grid: &SpectralGrid) -> Self {
        Forcing {
            g1: VectorField::zeros(grid),
            g2: ScalarField::zeros(grid),
            g3: ScalarField::zeros(grid),
            omega: 0.0,
        }
    }

    pub fn profile(&self, t: f64) -> f64 {
        (self.omega * t).cos()
    }

    pub fn scale(&self, s: f64) -> Forcing {
        Forcing {
            g1: self.g1.scale(s),
            g2: self.g2.scale(s),
            g3: self.g3.scale(s),
            omega: self.omega,
        }
    }

    /// `‖(G1, δ⁻¹G2, δ⁻¹G3)(t)‖²_{H^k}`.
    pub fn scaled_norm_sq(&self, delta: f64, k: u32, t: f64) -> f64 {
        let grid = self.g2.grid();
        let s = self.profile(t).powi(2);
        let g1: f64 = self.g1.hats().iter().map(|h| grid.sobolev_sq_hat(h, k)).sum();
        let g23 = grid.sobolev_sq_hat(&self.g2.hat(), k) + grid.sobolev_sq_hat(&self.g3.hat(), k);
        s * (g1 + g23 / (delta * delta))
    }
}

#[derive(Clone, Debug)]
pub struct LinearizedProblem {
    pub coefficient: Coefficient,
    pub forcing: Forcing,
    pub initial: MomentumState,
    pub horizon: f64,
    /// Sobolev order `N` of the estimate.
    pub order: u32,
    /// Exponential rate in the estimate's growth factor.
    pub c0: f64,
}

pub const DEFAULT_ORDER: u32 = 2;

impl LinearizedProblem {
    pub fn new(coefficient: Coefficient, forcing: Forcing, initial: MomentumState, horizon: f64) -> Self {
        LinearizedProblem {
            coefficient,
            forcing,
            initial,
            horizon,
            order: DEFAULT_ORDER,
            c0: 0.0,
        }
    }

    pub fn zero(grid: &SpectralGrid, horizon: f64) -> Self {
        LinearizedProblem::new(
            Coefficient::from_family(CoefficientFamily::default()).expect("constant family"),
            Forcing::zero(grid),
            zero_state(grid),
            horizon,
        )
    }

    pub fn validate(&self, grid: &SpectralGrid) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::domain("horizon must be positive"));
        }
        if self.order == 0 {
            return Err(Error::domain("estimate order must be at least 1"));
        }
        if !(self.c0 >= 0.0 && self.c0.is_finite()) {
            return Err(Error::domain("c0 must be non-negative"));
        }
        for g in [
            self.initial.n_tilde.grid(),
            self.initial.m.grid(),
            self.initial.zeta.grid(),
            self.initial.g_script.grid(),
            self.forcing.g1.grid(),
            self.forcing.g2.grid(),
            self.forcing.g3.grid(),
        ] {
            grid.same_as(g)?;
        }
        Ok(())
    }
}

pub fn zero_state(grid: &SpectralGrid) -> MomentumState {
    MomentumState {
        n_tilde: ScalarField::zeros(grid),
        m: VectorField::zeros(grid),
        zeta: ScalarField::zeros(grid),
        g_script: ScalarField::zeros(grid),
    }
}

fn state_hats(s: &MomentumState) -> Vec<Hat> {
    let mut out = vec![s.n_tilde.hat()];
    out.extend(s.m.hats());
    out.push(s.zeta.hat());
    out.push(s.g_script.hat());
    out
}

fn state_from_hats(grid: &SpectralGrid, x: &[Hat]) -> MomentumState {
    let d = grid.dim();
    MomentumState {
        n_tilde: ScalarField::from_hat(grid, &x[0]),
        m: VectorField::from_hats(grid, &x[1..1 + d]),
        zeta: ScalarField::from_hat(grid, &x[1 + d]),
        g_script: ScalarField::from_hat(grid, &x[2 + d]),
    }
}

struct Coeffs {
    mu_bar: f64,
    visc2: f64,
    press_n: f64,
    press_z: f64,
    temp: f64,
    cond: f64,
    inv_c: f64,
    slope: f64,
    sigma_a: f64,
    nu: f64,
    delta: f64,
}

impl Coeffs {
    fn new(model: &Model) -> Self {
        let p = &model.params;
        let d2 = p.delta * p.delta;
        let c = model.inv_heat_capacity();
        Coeffs {
            mu_bar: p.mu_bar(),
            visc2: p.lambda_bar() + p.mu_bar(),
            press_n: p.rho_bar * model.bg.p_rho / d2,
            press_z: model.bg.p_theta / d2,
            temp: model.temp_coupling(),
            cond: p.kappa * c,
            inv_c: c,
            slope: p.emission_slope(),
            sigma_a: p.sigma_a,
            nu: p.nu,
            delta: p.delta,
        }
    }
}

/// Per-mode generator of the frozen system in `(ñ, m, ζ, 𝒢)`.
pub fn lin_mode_matrix(model: &Model, abar: f64, k: Vec3, ks2: f64, dim: usize) -> DMatrix<Complex64> {
    let c = Coeffs::new(model);
    let n = dim + 3;
    let iz = dim + 1;
    let ig = dim + 2;
    let i = Complex64::new(0.0, 1.0);
    let mut m = DMatrix::from_element(n, n, ZERO);
    for j in 0..dim {
        m[(0, 1 + j)] = -i * k[j];
        m[(iz, 1 + j)] = -i * k[j] * c.temp;
    }
    for a in 0..dim {
        m[(1 + a, 1 + a)] += Complex64::from(-c.mu_bar * abar * ks2);
        for b in 0..dim {
            m[(1 + a, 1 + b)] += Complex64::from(-c.visc2 * abar * k[a] * k[b]);
        }
        m[(1 + a, 0)] = -i * k[a] * c.press_n;
        m[(1 + a, iz)] = -i * k[a] * c.press_z;
    }
    m[(iz, iz)] = Complex64::from(-c.cond * ks2 - c.inv_c * c.slope);
    m[(iz, ig)] = Complex64::from(c.inv_c * c.sigma_a);
    m[(ig, iz)] = Complex64::from(c.slope / c.delta);
    m[(ig, ig)] = Complex64::from((-c.nu * ks2 - c.sigma_a) / c.delta);
    m
}

fn mode_k(grid: &SpectralGrid, p: usize) -> Vec3 {
    let mut k = [0.0; 3];
    for (a, kk) in k.iter_mut().enumerate().take(grid.dim()) {
        *kk = grid.kd(a)[p];
    }
    k
}

/// `μ̄ div(B∇m) + (λ̄+μ̄)∇(B div m)` for a spatial weight `B`.
fn weighted_viscous(grid: &SpectralGrid, c: &Coeffs, b: &ScalarField, m: &[Hat]) -> Vec<Hat> {
    let d = grid.dim();
    let bv = b.values();
    let mut out: Vec<Hat> = vec![vec![ZERO; grid.npts()]; d];
    for a in 0..d {
        for j in 0..d {
            let dm = grid.inverse(&grid.deriv_hat(&m[a], j));
            let flux: Vec<f64> = dm.iter().zip(bv).map(|(x, w)| x * w).collect();
            let t = grid.deriv_hat(&grid.forward(&flux), j);
            for (o, v) in out[a].iter_mut().zip(t) {
                *o += v * c.mu_bar;
            }
        }
    }
    let div = grid.inverse(&grid.div_hat(m));
    let q: Vec<f64> = div.iter().zip(bv).map(|(x, w)| x * w).collect();
    let qh = grid.forward(&q);
    for (a, o) in out.iter_mut().enumerate() {
        for (oo, v) in o.iter_mut().zip(grid.deriv_hat(&qh, a)) {
            *oo += v * c.visc2;
        }
    }
    out
}

fn add_forcing(grid: &SpectralGrid, c: &Coeffs, forcing: &[Hat], s: f64, out: &mut [Hat]) {
    let d = grid.dim();
    for a in 0..d {
        for (o, f) in out[1 + a].iter_mut().zip(&forcing[a]) {
            *o += f * s;
        }
    }
    for (o, f) in out[1 + d].iter_mut().zip(&forcing[d]) {
        *o += f * s;
    }
    for (o, f) in out[2 + d].iter_mut().zip(&forcing[d + 1]) {
        *o += f * (s / c.delta);
    }
}

fn forcing_hats(f: &Forcing) -> Vec<Hat> {
    let mut out = f.g1.hats();
    out.push(f.g2.hat());
    out.push(f.g3.hat());
    out
}

/// Full right-hand side at time `t`, with the `A`-weighted terms formed in
/// physical space. Used as an independent check of the split integrator.
pub fn linearized_rhs(
    problem: &LinearizedProblem,
    grid: &SpectralGrid,
    model: &Model,
    t: f64,
    state: &MomentumState,
) -> Result<MomentumState> {
    let c = Coeffs::new(model);
    let d = grid.dim();
    let x = state_hats(state);
    let a = problem.coefficient.sample(grid, t)?;
    let visc = weighted_viscous(grid, &c, &a, &x[1..1 + d]);
    let mut out: Vec<Hat> = vec![vec![ZERO; grid.npts()]; d + 3];
    let div = grid.div_hat(&x[1..1 + d]);
    let iu = Complex64::new(0.0, 1.0);
    let (iz, ig) = (d + 1, d + 2);
    for p in 0..grid.npts() {
        let ks2 = grid.ks2()[p];
        let k = mode_k(grid, p);
        out[0][p] = -div[p];
        for j in 0..d {
            out[1 + j][p] = visc[j][p] - iu * k[j] * (x[0][p] * c.press_n + x[iz][p] * c.press_z);
        }
        let l = x[iz][p] * c.slope - x[ig][p] * c.sigma_a;
        out[iz][p] = -div[p] * c.temp - x[iz][p] * (c.cond * ks2) - l * c.inv_c;
        out[ig][p] = (-x[ig][p] * (c.nu * ks2) + l) / c.delta;
    }
    add_forcing(grid, &c, &forcing_hats(&problem.forcing), problem.forcing.profile(t), &mut out);
    Ok(state_from_hats(grid, &out))
}

#[derive(Clone, Debug)]
pub struct LinTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<MomentumState>,
    pub dt: f64,
}

/// Integrates the problem to its horizon with step `dt`, keeping every step.
pub fn solve_linearized(
    problem: &LinearizedProblem,
    grid: &SpectralGrid,
    model: &Model,
    dt: f64,
) -> Result<LinTrajectory> {
    problem.validate(grid)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain("dt must be positive"));
    }
    let (nsteps, h) = step_plan(problem.horizon, dt);
    let c = Coeffs::new(model);
    let d = grid.dim();
    let nv = d + 3;
    let abar = problem.coefficient.frozen();

    // exp([[hM, hI], [0, 0]]) = [[e^{hM}, hφ₁(hM)], [0, I]]
    let mut expo: Vec<DMatrix<Complex64>> = Vec::with_capacity(grid.npts());
    let mut phi1: Vec<DMatrix<Complex64>> = Vec::with_capacity(grid.npts());
    for p in 0..grid.npts() {
        let m = lin_mode_matrix(model, abar, mode_k(grid, p), grid.ks2()[p], d);
        let mut aug = DMatrix::from_element(2 * nv, 2 * nv, ZERO);
        for r in 0..nv {
            for s in 0..nv {
                aug[(r, s)] = m[(r, s)] * h;
            }
            aug[(r, nv + r)] = Complex64::from(h);
        }
        let e = aug.exp();
        expo.push(e.view((0, 0), (nv, nv)).into_owned());
        phi1.push(e.view((0, nv), (nv, nv)).into_owned());
    }

    let fh = forcing_hats(&problem.forcing);
    let mut x = state_hats(&problem.initial);
    let mut traj = LinTrajectory {
        times: vec![0.0],
        states: vec![problem.initial.clone()],
        dt: h,
    };
    let mut t = 0.0;
    for step in 1..=nsteps {
        let a = problem.coefficient.sample(grid, t)?;
        let mut f: Vec<Hat> = if a.values().iter().any(|v| *v != abar) {
            let da = a.shift(-abar);
            let mut v = vec![vec![ZERO; grid.npts()]];
            v.extend(weighted_viscous(grid, &c, &da, &x[1..1 + d]));
            v.push(vec![ZERO; grid.npts()]);
            v.push(vec![ZERO; grid.npts()]);
            v
        } else {
            vec![vec![ZERO; grid.npts()]; nv]
        };
        add_forcing(grid, &c, &fh, problem.forcing.profile(t + 0.5 * h), &mut f);
        let mut next: Vec<Hat> = vec![vec![ZERO; grid.npts()]; nv];
        for p in 0..grid.npts() {
            let (e, ph) = (&expo[p], &phi1[p]);
            for r in 0..nv {
                let mut acc = ZERO;
                for s in 0..nv {
                    acc += e[(r, s)] * x[s][p] + ph[(r, s)] * f[s][p];
                }
                next[r][p] = acc;
            }
        }
        x = next;
        t = if step == nsteps { problem.horizon } else { step as f64 * h };
        let s = state_from_hats(grid, &x);
        if !(s.m.is_finite() && s.n_tilde.is_finite() && s.zeta.is_finite() && s.g_script.is_finite()) {
            return Err(Error::StateInvalid {
                time: t,
                reason: "non-finite linearized state".into(),
            });
        }
        traj.times.push(t);
        traj.states.push(s);
    }
    Ok(traj)
}

/// Outcome of the estimate probe.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub bundle: Vec<f64>,
    /// `∫‖∇m‖²_{H^N}`.
    pub diss_m: Vec<f64>,
    /// `δ⁻²∫‖∇ζ‖²_{H^N}`.
    pub diss_zeta: Vec<f64>,
    /// `δ⁻²∫‖∇𝒢‖²_{H^N}`.
    pub diss_g: Vec<f64>,
    /// `‖L‖_{H^N}`.
    pub exchange: Vec<f64>,
    /// `sup_t LHS/RHS`, an estimate of `C₀` for the given `c₀`.
    pub c0_estimate: f64,
    pub c0: f64,
    pub order: u32,
}

fn trapezoid_cumulative(times: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    for i in 0..v.len() {
        if i > 0 {
            acc += 0.5 * (times[i] - times[i - 1]) * (v[i] + v[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// Evaluates both sides of the uniform estimate along a trajectory.
pub fn check_estimate(traj: &LinTrajectory, problem: &LinearizedProblem, model: &Model) -> Result<EstimateReport> {
    let p = &model.params;
    let delta = p.delta;
    let d2 = delta * delta;
    let n = problem.order;
    let a = p.emission_slope();
    let mut bundle = Vec::new();
    let mut diss = Vec::new();
    let mut force = Vec::new();
    let mut growth = Vec::new();
    let (mut dm_s, mut dz_s, mut dg_s, mut exch) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (s, &t) in traj.states.iter().zip(&traj.times) {
        let grid = s.m.grid();
        bundle.push(bundle_of(&s.m, &s.n_tilde, &s.zeta, &s.g_script, delta, n));
        let nh = s.n_tilde.hat();
        let zh = s.zeta.hat();
        let gh = s.g_script.hat();
        let lh: Hat = zh.iter().zip(&gh).map(|(z, g)| z * a - g * p.sigma_a).collect();
        let dm: f64 = s.m.hats().iter().map(|h| grid.grad_sobolev_sq_hat(h, n)).sum();
        let dz = grid.grad_sobolev_sq_hat(&zh, n) / d2;
        let dg = grid.grad_sobolev_sq_hat(&gh, n) / d2;
        let ll = grid.sobolev_sq_hat(&lh, n);
        diss.push(grid.grad_sobolev_sq_hat(&nh, n - 1) / d2 + dm + dz + dg + ll / d2);
        dm_s.push(dm);
        dz_s.push(dz);
        dg_s.push(dg);
        exch.push(ll.sqrt());
        force.push(problem.forcing.scaled_norm_sq(delta, n - 1, t));
        let af = problem.coefficient.sample(grid, t)?;
        growth.push(1.0 + grid.sobolev_sq_hat(&af.hat(), n));
    }
    let diss_int = trapezoid_cumulative(&traj.times, &diss);
    let force_int = trapezoid_cumulative(&traj.times, &force);
    let growth_int = trapezoid_cumulative(&traj.times, &growth);
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut sup = 0.0f64;
    for i in 0..bundle.len() {
        let l = bundle[i] + diss_int[i];
        let ii = growth_int[i];
        let r = (bundle[0] + force_int[i]) * (1.0 + (problem.c0 * ii).exp() * ii);
        let ratio = if l == 0.0 {
            0.0
        } else if r == 0.0 {
            f64::INFINITY
        } else {
            l / r
        };
        sup = sup.max(ratio);
        lhs.push(l);
        rhs.push(r);
    }
    Ok(EstimateReport {
        times: traj.times.clone(),
        lhs,
        rhs,
        diss_m: trapezoid_cumulative(&traj.times, &dm_s),
        diss_zeta: trapezoid_cumulative(&traj.times, &dz_s),
        diss_g: trapezoid_cumulative(&traj.times, &dg_s),
        exchange: exch,
        bundle,
        c0_estimate: sup,
        c0: problem.c0,
        order: n,
    })
}

/// Seeded problem with well-prepared scalings: `ñ, ζ ~ δ`, `𝒢 ~ δ^{1/2}`,
/// `G2, G3 ~ δ`, everything else of unit size times `amplitude`.
pub fn seeded_problem(
    grid: &SpectralGrid,
    family: CoefficientFamily,
    delta: f64,
    seed: u64,
    amplitude: f64,
    forcing_amplitude: f64,
    horizon: f64,
) -> Result<LinearizedProblem> {
    use crate::spectral::random_smooth;
    let kmax = ((grid.n() - 1) / 3).min(4);
    let d = grid.dim();
    let field = |stream: u64, amp: f64| random_smooth(grid, seed.wrapping_mul(64).wrapping_add(stream), kmax, amp);
    let m = VectorField::from_scalars((0..d).map(|a| field(10 + a as u64, amplitude)).collect())?;
    let initial = MomentumState {
        n_tilde: field(1, amplitude * delta),
        m,
        zeta: field(2, amplitude * delta),
        g_script: field(3, amplitude * delta.sqrt()),
    };
    let g1 = VectorField::from_scalars((0..d).map(|a| field(20 + a as u64, forcing_amplitude)).collect())?;
    let forcing = Forcing {
        g1,
        g2: field(4, forcing_amplitude * delta),
        g3: field(5, forcing_amplitude * delta),
        omega: 1.0,
    };
    Ok(LinearizedProblem::new(Coefficient::from_family(family)?, forcing, initial, horizon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PhysParams;

    fn grid() -> SpectralGrid {
        SpectralGrid::periodic(2, 16).unwrap()
    }

    fn model() -> Model {
        Model::ideal(PhysParams::default()).unwrap()
    }

    fn max_diff(a: &MomentumState, b: &MomentumState) -> f64 {
        a.n_tilde
            .sub(&b.n_tilde)
            .max_abs()
            .max(a.m.sub(&b.m).max_abs())
            .max(a.zeta.sub(&b.zeta).max_abs())
            .max(a.g_script.sub(&b.g_script).max_abs())
    }

    fn axpy(x: &MomentumState, h: f64, k: &MomentumState) -> MomentumState {
        MomentumState {
            n_tilde: x.n_tilde.add(&k.n_tilde.scale(h)),
            m: x.m.add(&k.m.scale(h)),
            zeta: x.zeta.add(&k.zeta.scale(h)),
            g_script: x.g_script.add(&k.g_script.scale(h)),
        }
    }

    fn rk4(problem: &LinearizedProblem, g: &SpectralGrid, m: &Model, h: f64, steps: usize) -> MomentumState {
        let mut x = problem.initial.clone();
        for s in 0..steps {
            let t = s as f64 * h;
            let k1 = linearized_rhs(problem, g, m, t, &x).unwrap();
            let k2 = linearized_rhs(problem, g, m, t + h / 2.0, &axpy(&x, h / 2.0, &k1)).unwrap();
            let k3 = linearized_rhs(problem, g, m, t + h / 2.0, &axpy(&x, h / 2.0, &k2)).unwrap();
            let k4 = linearized_rhs(problem, g, m, t + h, &axpy(&x, h, &k3)).unwrap();
            let sum = axpy(&axpy(&axpy(&k1, 2.0, &k2), 2.0, &k3), 1.0, &k4);
            x = axpy(&x, h / 6.0, &sum);
        }
        x
    }

    #[test]
    fn zero_problem_stays_zero() {
        let g = grid();
        let m = model();
        let pb = LinearizedProblem::zero(&g, 0.2);
        let tr = solve_linearized(&pb, &g, &m, 0.05).unwrap();
        assert!(tr.states.iter().all(|s| max_diff(s, &zero_state(&g)) == 0.0));
        assert_eq!(check_estimate(&tr, &pb, &m).unwrap().c0_estimate, 0.0);
    }

    #[test]
    fn single_mode_matches_rk4() {
        let g = grid();
        let m = model();
        let mut pb = LinearizedProblem::zero(&g, 0.2);
        pb.initial.m = VectorField::from_fn(&g, |x| [(x[0] + 2.0 * x[1]).cos(), 0.5 * (x[0] + 2.0 * x[1]).sin(), 0.0]);
        pb.initial.zeta = ScalarField::from_fn(&g, |x| 0.1 * (x[0] + 2.0 * x[1]).cos());
        pb.initial.g_script = ScalarField::from_fn(&g, |x| 0.3 * (x[0] + 2.0 * x[1]).sin());
        let tr = solve_linearized(&pb, &g, &m, 0.05).unwrap();
        let oracle = rk4(&pb, &g, &m, 2e-5, 10_000);
        let err = max_diff(tr.states.last().unwrap(), &oracle);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn zero_mode_relaxes_to_forced_equilibrium() {
        let g = grid();
        let m = model();
        let mut pb = LinearizedProblem::zero(&g, 1.0);
        pb.forcing.g3 = ScalarField::constant(&g, 1.0);
        let tr = solve_linearized(&pb, &g, &m, 0.01).unwrap();
        let p = &m.params;
        let a = p.emission_slope();
        let cap = 1.0 / m.inv_heat_capacity();
        let r = a / cap + p.sigma_a / p.delta;
        let l_inf = -(p.sigma_a / p.delta) / r;
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let q = *t;
            let l = l_inf * (1.0 - (-r * t).exp());
            // aζ − σ_a𝒢 = L, ρ̄e ζ + δ𝒢 = Q
            let det = a * p.delta + p.sigma_a * cap;
            let zeta = (l * p.delta + p.sigma_a * q) / det;
            let gs = (a * q - cap * l) / det;
            assert!((s.zeta.mean() - zeta).abs() < 1e-10, "{t}");
            assert!((s.g_script.mean() - gs).abs() < 1e-10, "{t}");
        }
    }

    #[test]
    fn standing_wave_converges_to_rk4() {
        let g = grid();
        let m = model();
        let pb = seeded_problem(&g, CoefficientFamily::StandingWave { amplitude: 0.5 }, 0.1, 3, 1.0, 0.5, 0.5).unwrap();
        let oracle = rk4(&pb, &g, &m, 2e-5, 25_000);
        let e1 = max_diff(solve_linearized(&pb, &g, &m, 0.01).unwrap().states.last().unwrap(), &oracle);
        let e2 = max_diff(solve_linearized(&pb, &g, &m, 0.005).unwrap().states.last().unwrap(), &oracle);
        assert!(e2 < 0.6 * e1, "{e1} {e2}");
        assert!(e1 < 1e-2, "{e1}");
    }

    #[test]
    fn solution_map_is_linear() {
        let g = grid();
        let m = model();
        let fam = CoefficientFamily::StandingWave { amplitude: 0.4 };
        let a = seeded_problem(&g, fam, 0.1, 1, 1.0, 1.0, 0.3).unwrap();
        let b = seeded_problem(&g, fam, 0.1, 2, 1.0, 1.0, 0.3).unwrap();
        let mut sum = a.clone();
        sum.initial = axpy(&a.initial, 1.0, &b.initial);
        sum.forcing = Forcing {
            g1: a.forcing.g1.add(&b.forcing.g1),
            g2: a.forcing.g2.add(&b.forcing.g2),
            g3: a.forcing.g3.add(&b.forcing.g3),
            omega: 1.0,
        };
        let (ta, tb, ts) = (
            solve_linearized(&a, &g, &m, 0.01).unwrap(),
            solve_linearized(&b, &g, &m, 0.01).unwrap(),
            solve_linearized(&sum, &g, &m, 0.01).unwrap(),
        );
        let combined = axpy(ta.states.last().unwrap(), 1.0, tb.states.last().unwrap());
        let err = max_diff(&combined, ts.states.last().unwrap());
        let scale = combined.m.max_abs().max(1e-300);
        assert!(err / scale < 1e-10);

        let mut double = a.clone();
        double.initial = axpy(&a.initial, 1.0, &a.initial);
        double.forcing = a.forcing.scale(2.0);
        let ra = check_estimate(&ta, &a, &m).unwrap();
        let rd = check_estimate(&solve_linearized(&double, &g, &m, 0.01).unwrap(), &double, &m).unwrap();
        let last = ra.lhs.len() - 1;
        assert!((rd.lhs[last] / ra.lhs[last] - 4.0).abs() < 1e-9);
        assert!((rd.rhs[last] / ra.rhs[last] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn coefficient_bounds_are_enforced() {
        let g = grid();
        assert!(Coefficient::from_family(CoefficientFamily::StandingWave { amplitude: 1.0 }).is_err());
        assert!(Coefficient::custom(|_, _| 1.0, 0.0, 1.0).is_err());
        let bad = Coefficient::custom(|x, _| 1.0 + x[0].sin(), 0.5, 2.0).unwrap();
        let mut pb = LinearizedProblem::zero(&g, 0.1);
        pb.coefficient = bad;
        assert!(matches!(solve_linearized(&pb, &g, &model(), 0.05), Err(Error::Domain(_))));
    }
}
