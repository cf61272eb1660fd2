//! Projection solver for the incompressible Navier–Stokes limit
//! `u_t + (u·∇)u + ρ̄⁻¹∇P = μ̄Δu`, `div u = 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Hat, ScalarField, SpectralGrid, VectorField};

#[derive(Clone, Debug, PartialEq)]
pub struct IncompressibleState {
    pub u: VectorField,
    pub time: f64,
}

impl IncompressibleState {
    /// Leray-projects `u` so the state starts divergence-free.
    pub fn new(u: &VectorField, time: f64) -> Self {
        IncompressibleState {
            u: u.leray_project(),
            time,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NsScheme {
    /// Crank–Nicolson diffusion with a Heun predictor–corrector on the
    /// projected advection; second order.
    #[default]
    CrankNicolson,
    /// Backward Euler diffusion, forward Euler advection; first order.
    BackwardEuler,
}

/// `−P[(u·∇)u]` in conservative form, dealiased.
fn advection_hat(grid: &SpectralGrid, u_hat: &[Hat]) -> Vec<Hat> {
    let d = grid.dim();
    let u: Vec<Vec<f64>> = u_hat.iter().map(|h| grid.inverse(h)).collect();
    let mut out: Vec<Hat> = vec![vec![Complex64::new(0.0, 0.0); grid.npts()]; d];
    for i in 0..d {
        for j in 0..d {
            let prod: Vec<f64> = u[i].iter().zip(&u[j]).map(|(a, b)| a * b).collect();
            let dj = grid.deriv_hat(&grid.forward(&prod), j);
            for (o, v) in out[i].iter_mut().zip(dj) {
                *o -= v;
            }
        }
        grid.dealias_hat(&mut out[i]);
    }
    grid.leray_hat(&mut out);
    out
}

/// One projection step of `u` with kinematic viscosity `mu_bar`.
pub fn step_ns(
    state: &IncompressibleState,
    dt: f64,
    mu_bar: f64,
    scheme: NsScheme,
) -> Result<IncompressibleState> {
    if !(dt > 0.0) {
        return Err(Error::domain("dt must be positive"));
    }
    let grid = state.u.grid();
    let u0 = state.u.hats();
    let n0 = advection_hat(grid, &u0);
    let u1: Vec<Hat> = match scheme {
        NsScheme::BackwardEuler => u0
            .iter()
            .zip(&n0)
            .map(|(u, n)| {
                let rhs: Hat = u.iter().zip(n).map(|(a, b)| a + b * dt).collect();
                grid.helmholtz_hat(1.0, dt * mu_bar, &rhs)
            })
            .collect::<Result<_>>()?,
        NsScheme::CrankNicolson => {
            let half = 0.5 * dt * mu_bar;
            let explicit = |n: &[Hat], w: f64| -> Result<Vec<Hat>> {
                u0.iter()
                    .zip(n)
                    .map(|(u, nn)| {
                        let rhs: Hat = u
                            .iter()
                            .zip(nn)
                            .zip(grid.ks2())
                            .map(|((a, b), &k2)| a * (1.0 - half * k2) + b * (w * dt))
                            .collect();
                        grid.helmholtz_hat(1.0, half, &rhs)
                    })
                    .collect()
            };
            let pred = explicit(&n0, 1.0)?;
            let n1 = advection_hat(grid, &pred);
            let avg: Vec<Hat> = n0
                .iter()
                .zip(&n1)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x + y) * 0.5).collect())
                .collect();
            explicit(&avg, 1.0)?
        }
    };
    let u = VectorField::from_hats(grid, &u1);
    if !u.is_finite() {
        return Err(Error::StateInvalid {
            time: state.time + dt,
            reason: "non-finite velocity".into(),
        });
    }
    Ok(IncompressibleState {
        u,
        time: state.time + dt,
    })
}

/// Pressure with zero mean solving `ΔP = −ρ̄ div((u·∇)u)`.
pub fn pressure_recover(state: &IncompressibleState, rho_bar: f64) -> ScalarField {
    let grid = state.u.grid();
    let d = grid.dim();
    let u = state.u.comps();
    let u_hat = state.u.hats();
    let mut adv: Vec<Hat> = Vec::with_capacity(d);
    for i in 0..d {
        let mut acc = vec![0.0; grid.npts()];
        for (j, uj) in u.iter().enumerate() {
            let dui = grid.inverse(&grid.deriv_hat(&u_hat[i], j));
            for (a, (x, y)) in acc.iter_mut().zip(uj.iter().zip(&dui)) {
                *a += x * y;
            }
        }
        let mut h = grid.forward(&acc);
        grid.dealias_hat(&mut h);
        adv.push(h);
    }
    let div = grid.div_hat(&adv);
    let p: Hat = div
        .iter()
        .zip(grid.ks2())
        .map(|(c, &k2)| if k2 > 0.0 { c * (rho_bar / k2) } else { Complex64::new(0.0, 0.0) })
        .collect();
    ScalarField::from_hat(grid, &p)
}

#[derive(Clone, Debug)]
pub struct ReferenceRun {
    pub final_state: IncompressibleState,
    pub steps: usize,
    pub dt: f64,
}

/// Runs the limit system from the Leray projection of `u0`, observing the
/// initial state, every `every` steps and the final state.
pub fn run_reference(
    u0: &VectorField,
    dt: f64,
    nsteps: usize,
    every: usize,
    mu_bar: f64,
    scheme: NsScheme,
    observer: &mut dyn FnMut(&IncompressibleState) -> Result<()>,
) -> Result<ReferenceRun> {
    let mut state = IncompressibleState::new(u0, 0.0);
    observer(&state)?;
    for k in 1..=nsteps {
        state = step_ns(&state, dt, mu_bar, scheme)?;
        if k % every.max(1) == 0 || k == nsteps {
            observer(&state)?;
        }
    }
    Ok(ReferenceRun {
        final_state: state,
        steps: nsteps,
        dt,
    })
}

/// Taylor–Green velocity `(sin x cos y, −cos x sin y)e^{−2μ̄t}`.
pub fn taylor_green(grid: &SpectralGrid, mu_bar: f64, t: f64) -> VectorField {
    let decay = (-2.0 * mu_bar * t).exp();
    VectorField::from_fn(grid, |x| {
        [
            x[0].sin() * x[1].cos() * decay,
            -x[0].cos() * x[1].sin() * decay,
            0.0,
        ]
    })
}

/// Pressure of [`taylor_green`]: `(ρ̄/4)(cos 2x + cos 2y)e^{−4μ̄t}`.
pub fn taylor_green_pressure(grid: &SpectralGrid, rho_bar: f64, mu_bar: f64, t: f64) -> ScalarField {
    let decay = (-4.0 * mu_bar * t).exp();
    ScalarField::from_fn(grid, |x| 0.25 * rho_bar * ((2.0 * x[0]).cos() + (2.0 * x[1]).cos()) * decay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::random_smooth;

    fn grid() -> SpectralGrid {
        SpectralGrid::periodic(2, 32).unwrap()
    }

    fn random_solenoidal(g: &SpectralGrid, seed: u64, kmax: usize) -> VectorField {
        VectorField::new(
            g,
            vec![
                random_smooth(g, seed, kmax, 1.0).into_values(),
                random_smooth(g, seed + 1, kmax, 1.0).into_values(),
            ],
        )
        .unwrap()
        .leray_project()
    }

    #[test]
    fn zero_stays_zero() {
        let g = grid();
        let s = IncompressibleState::new(&VectorField::zeros(&g), 0.0);
        let next = step_ns(&s, 0.01, 0.1, NsScheme::CrankNicolson).unwrap();
        assert_eq!(next.u.max_abs(), 0.0);
        assert_eq!(pressure_recover(&s, 1.0).max_abs(), 0.0);
    }

    #[test]
    fn short_taylor_green_run() {
        let g = grid();
        let mut s = IncompressibleState::new(&taylor_green(&g, 0.1, 0.0), 0.0);
        for _ in 0..100 {
            s = step_ns(&s, 1e-3, 0.1, NsScheme::CrankNicolson).unwrap();
        }
        let err = s.u.sub(&taylor_green(&g, 0.1, s.time)).max_abs();
        assert!(err < 1e-8, "{err}");
        let p = pressure_recover(&s, 1.0).sub(&taylor_green_pressure(&g, 1.0, 0.1, s.time));
        assert!(p.max_abs() < 1e-7);
    }

    #[test]
    fn divergence_and_mean_preserved() {
        let g = grid();
        let mut u = random_solenoidal(&g, 4, 6);
        let shift = VectorField::new(&g, vec![vec![0.3; g.npts()], vec![-0.2; g.npts()]]).unwrap();
        u = u.add(&shift);
        let mut s = IncompressibleState::new(&u, 0.0);
        let m0 = s.u.mean();
        for _ in 0..20 {
            s = step_ns(&s, 5e-3, 0.1, NsScheme::CrankNicolson).unwrap();
            assert!(s.u.divergence().max_abs() < 1e-11);
        }
        let m1 = s.u.mean();
        assert!((m0[0] - m1[0]).abs() < 1e-12 && (m0[1] - m1[1]).abs() < 1e-12);
    }

    #[test]
    fn energy_does_not_grow() {
        let g = grid();
        let mut s = IncompressibleState::new(&random_solenoidal(&g, 8, 6), 0.0);
        let mut e = s.u.l2_norm();
        for _ in 0..50 {
            s = step_ns(&s, 5e-3, 0.1, NsScheme::CrankNicolson).unwrap();
            let e1 = s.u.l2_norm();
            assert!(e1 <= e);
            e = e1;
        }
    }

    #[test]
    fn pressure_gradient_balances_advection() {
        let g = grid();
        let u = random_solenoidal(&g, 21, 6);
        let s = IncompressibleState::new(&u, 0.0);
        let rho_bar = 1.3;
        let p = pressure_recover(&s, rho_bar);
        let gp = p.gradient();
        // ∇P + ρ̄(u·∇)u is divergence-free
        let mut comps = Vec::new();
        for i in 0..2 {
            let ui = s.u.component(i);
            let adv = s.u.component(0).mul(&ui.derivative(0)).add(&s.u.component(1).mul(&ui.derivative(1)));
            comps.push(gp.component(i).add(&adv.scale(rho_bar)).dealiased());
        }
        let r = VectorField::from_scalars(comps).unwrap();
        assert!(r.divergence().max_abs() < 1e-10 * gp.max_abs().max(1.0));
        // ∇P is orthogonal to solenoidal fields
        let w = random_solenoidal(&g, 30, 8);
        assert!(gp.inner(&w).abs() < 1e-10 * gp.l2_norm() * w.l2_norm());
    }
}
