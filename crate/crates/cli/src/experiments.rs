//! Single runs, δ-sweeps, reference runs and linearized estimate sweeps.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use lowmach_core::compressible::{cadence_steps, default_dt, run, step_plan, PerturbationState, SolverConfig};
use lowmach_core::diagnostics::{
    attach_reference, build_records, compare_to_reference, lemma_probes, sample, summarize, DiagnosticsRecord,
    LemmaProbes, RefComparison, RunSummary, Sample, Trajectory,
};
use lowmach_core::incompressible::{run_reference, taylor_green, taylor_green_pressure, pressure_recover};
use lowmach_core::init::{make_well_prepared, InitReport, InitSpec};
use lowmach_core::linearized::{check_estimate, seeded_problem, solve_linearized, CoefficientFamily, LinearizedProblem};
use lowmach_core::model::Model;
use lowmach_core::spectral::{write_snapshot, SpectralGrid, VectorField};

use crate::config::{ExperimentConfig, OutputFormat, ReferenceInit};
use crate::error::CliError;
use crate::fit::{fit_rate, RateFit};
use crate::output::{ensure_dir, write_csv, write_json};

pub const KIND_COMPRESSIBLE: &str = "compressible";
pub const KIND_INCOMPRESSIBLE: &str = "incompressible";
pub const KIND_LINEARIZED: &str = "linearized";

/// Everything measured along one compressible run.
#[derive(Clone, Debug)]
pub struct MemberRun {
    pub delta: f64,
    pub init: InitReport,
    pub samples: Vec<Sample>,
    pub records: Vec<DiagnosticsRecord>,
    pub velocity: Trajectory,
    pub final_state: PerturbationState,
    pub dt: f64,
    pub steps: usize,
    pub max_cfl: f64,
    pub abort: Option<String>,
    pub last_valid_time: f64,
}

impl MemberRun {
    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MemberSummary {
    pub delta: f64,
    pub completed: bool,
    pub abort: Option<String>,
    pub last_valid_time: f64,
    pub dt: f64,
    pub steps: usize,
    pub max_cfl: f64,
    pub init: InitReport,
    pub run: RunSummary,
    pub reference: Option<RefSummary>,
    pub lemma: Option<LemmaProbes>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RefSummary {
    pub sup_l2: f64,
    pub sup_h1: f64,
}

/// Generates the data for `delta` and runs it with step `dt`.
pub fn run_member(cfg: &ExperimentConfig, grid: &SpectralGrid, model: &Model, seed: u64, dt: f64) -> Result<MemberRun, CliError> {
    let spec = InitSpec {
        seed,
        ..cfg.init.clone()
    };
    let wp = make_well_prepared(&spec, grid, model)?;
    let mut solver = cfg.solver_config();
    solver.dt = Some(dt);
    let (l, beta) = (cfg.diagnostics.order, cfg.diagnostics.beta);
    let mut samples = Vec::new();
    let mut velocity = Trajectory::default();
    let outcome = run(&wp.state, &solver, model, &mut |s| {
        samples.push(sample(s, model, l, beta)?);
        velocity.push(s.time, &s.u);
        Ok(())
    })?;
    let delta = model.params.delta;
    let records = build_records(&samples, delta, seed, KIND_COMPRESSIBLE);
    let (abort, last_valid_time) = match &outcome.aborted {
        Some(a) => (Some(a.error.to_string()), a.last_valid_time),
        None => (None, outcome.final_state.time),
    };
    Ok(MemberRun {
        delta,
        init: wp.report,
        samples,
        records,
        velocity,
        final_state: outcome.final_state,
        dt: outcome.dt,
        steps: outcome.steps,
        max_cfl: outcome.max_cfl,
        abort,
        last_valid_time,
    })
}

/// The shared step: configured, or the default from the generated velocity.
pub fn sweep_dt(cfg: &ExperimentConfig, grid: &SpectralGrid, model: &Model, seed: u64) -> Result<f64, CliError> {
    if let Some(dt) = cfg.solver.dt {
        return Ok(dt);
    }
    let spec = InitSpec {
        seed,
        ..cfg.init.clone()
    };
    let wp = make_well_prepared(&spec, grid, model)?;
    Ok(default_dt(grid, &wp.state.u))
}

/// Incompressible run sampled on the same step and cadence as the
/// compressible runs.
pub fn reference_trajectory(cfg: &ExperimentConfig, u0: &VectorField, dt: f64, model: &Model) -> Result<Trajectory, CliError> {
    let solver: SolverConfig = cfg.solver_config();
    let (nsteps, h) = step_plan(solver.t_end, dt);
    let every = cadence_steps(solver.cadence, h);
    let mut traj = Trajectory::default();
    run_reference(u0, h, nsteps, every, model.params.mu_bar(), cfg.reference.scheme, &mut |s| {
        traj.push(s.time, &s.u);
        Ok(())
    })?;
    if let Some(t) = traj.times.last_mut() {
        *t = solver.t_end;
    }
    Ok(traj)
}

fn member_summary(m: &MemberRun, cmp: Option<&RefComparison>, model: &Model, probes: bool) -> MemberSummary {
    MemberSummary {
        delta: m.delta,
        completed: m.completed(),
        abort: m.abort.clone(),
        last_valid_time: m.last_valid_time,
        dt: m.dt,
        steps: m.steps,
        max_cfl: m.max_cfl,
        init: m.init.clone(),
        run: summarize(&m.samples),
        reference: cmp.map(|c| RefSummary {
            sup_l2: c.sup_l2,
            sup_h1: c.sup_h1,
        }),
        lemma: if probes && m.completed() { lemma_probes(&m.samples, model).ok() } else { None },
    }
}

fn pair_with_reference(m: &mut MemberRun, reference: &Trajectory) -> Result<Option<RefComparison>, CliError> {
    if !m.completed() {
        return Ok(None);
    }
    let cmp = compare_to_reference(&m.velocity, reference)?;
    attach_reference(&mut m.records, &cmp)?;
    Ok(Some(cmp))
}

// ---------------------------------------------------------------------------
// run

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub member: MemberSummary,
}

pub fn run_single(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport, CliError> {
    let grid = cfg.grid.build()?;
    let model = cfg.model()?;
    let seed = cfg.init.seed;
    let dt = sweep_dt(cfg, &grid, &model, seed)?;
    let mut m = run_member(cfg, &grid, &model, seed, dt)?;
    let cmp = if cfg.reference.enabled {
        let u0 = m.velocity.u[0].clone();
        let r = reference_trajectory(cfg, &u0, m.dt, &model)?;
        pair_with_reference(&mut m, &r)?
    } else {
        None
    };
    ensure_dir(out)?;
    if cfg.output.wants(OutputFormat::Csv) {
        write_csv(&out.join("diagnostics.csv"), &m.records)?;
    }
    let report = RunReport {
        config: cfg.clone(),
        member: member_summary(&m, cmp.as_ref(), &model, cfg.diagnostics.lemma_probes),
    };
    if cfg.output.wants(OutputFormat::Json) {
        write_json(&out.join("summary.json"), &report)?;
    }
    if cfg.output.snapshots {
        let s = &m.final_state;
        let mut comps: Vec<&[f64]> = vec![s.phi.values()];
        comps.extend(s.u.comps().iter().map(|c| c.as_slice()));
        comps.push(s.zeta.values());
        comps.push(s.g_script.values());
        let ext = match cfg.output.snapshot_format {
            lowmach_core::spectral::SnapshotFormat::Binary => "rhsf",
            lowmach_core::spectral::SnapshotFormat::Csv => "csv",
        };
        write_snapshot(&out.join(format!("final_state.{ext}")), &grid, &comps, cfg.output.snapshot_format)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    /// Every member completed.
    pub complete: bool,
    pub deltas: Vec<f64>,
    pub seed: u64,
    pub dt: f64,
    /// All members completed with the same step.
    pub uniform_dt: bool,
    /// `sup_t ‖(ρ−ρ̄, θ−θ̄)‖_{L²}` against δ.
    pub thermal_fit: Option<RateFit>,
    /// `sup_t ‖n−n̄‖_{L²}` against δ.
    pub radiation_fit: Option<RateFit>,
    /// `sup_t ‖u^δ − u‖_{L²}` per member.
    pub reference_errors: Vec<Option<f64>>,
    /// Successive ratios of the reference errors.
    pub reference_ratios: Vec<f64>,
    pub reference_monotone: bool,
    pub sandwich_min: f64,
    pub sandwich_max: f64,
    pub members: Vec<MemberSummary>,
    pub linearized: Option<LinearizedReport>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub report: SweepReport,
    pub records: Vec<DiagnosticsRecord>,
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| CliError::Failed(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Computes the sweep without writing anything.
pub fn compute_sweep(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<SweepResult, CliError> {
    let grid = cfg.grid.build()?;
    let seed = cfg.sweep_seed();
    let deltas = cfg.sweep.deltas.clone();
    let models: Vec<Model> = deltas.iter().map(|d| cfg.model_at(*d)).collect::<Result<_, _>>()?;
    let dt = sweep_dt(cfg, &grid, &models[0], seed)?;

    let wp = make_well_prepared(
        &InitSpec {
            seed,
            ..cfg.init.clone()
        },
        &grid,
        &models[0],
    )?;
    let (runs, reference) = with_pool(threads, || {
        rayon::join(
            || {
                models
                    .par_iter()
                    .map(|m| run_member(cfg, &grid, m, seed, dt))
                    .collect::<Vec<Result<MemberRun, CliError>>>()
            },
            || reference_trajectory(cfg, &wp.state.u, dt, &models[0]),
        )
    })?;
    let reference = reference?;
    let mut members = Vec::new();
    let mut records = Vec::new();
    for (r, model) in runs.into_iter().zip(&models) {
        let mut m = r?;
        let cmp = pair_with_reference(&mut m, &reference)?;
        members.push(member_summary(&m, cmp.as_ref(), model, cfg.diagnostics.lemma_probes));
        records.extend(m.records);
    }

    let complete = members.iter().all(|m| m.completed);
    let uniform_dt = complete && members.iter().all(|m| m.dt == members[0].dt);
    let fit_of = |f: &dyn Fn(&MemberSummary) -> f64| -> Option<RateFit> {
        let pts: Vec<(f64, f64)> = members.iter().filter(|m| m.completed).map(|m| (m.delta, f(m))).collect();
        fit_rate(&pts).ok()
    };
    let thermal_fit = fit_of(&|m| m.run.thermal_l2_sup);
    let radiation_fit = fit_of(&|m| m.run.radiation_l2_sup);
    let reference_errors: Vec<Option<f64>> = members.iter().map(|m| m.reference.as_ref().map(|r| r.sup_l2)).collect();
    let mut reference_ratios = Vec::new();
    let mut reference_monotone = complete;
    for w in reference_errors.windows(2) {
        match (w[0], w[1]) {
            (Some(a), Some(b)) if a > 0.0 => {
                let r = b / a;
                reference_monotone &= r < 1.0;
                reference_ratios.push(r);
            }
            _ => reference_monotone = false,
        }
    }
    let sandwich_min = members.iter().map(|m| m.run.sandwich_min).fold(f64::INFINITY, f64::min);
    let sandwich_max = members.iter().map(|m| m.run.sandwich_max).fold(0.0, f64::max);

    let linearized = if cfg.sweep.linearized {
        let lin = compute_linearized(cfg, threads)?;
        records.extend(lin.records);
        Some(lin.report)
    } else {
        None
    };

    Ok(SweepResult {
        report: SweepReport {
            complete,
            deltas,
            seed,
            dt,
            uniform_dt,
            thermal_fit,
            radiation_fit,
            reference_errors,
            reference_ratios,
            reference_monotone,
            sandwich_min,
            sandwich_max,
            members,
            linearized,
        },
        records,
    })
}

pub fn run_sweep(cfg: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<SweepReport, CliError> {
    let res = compute_sweep(cfg, threads)?;
    ensure_dir(out)?;
    if cfg.output.wants(OutputFormat::Csv) {
        write_csv(&out.join("sweep.csv"), &res.records)?;
    }
    if cfg.output.wants(OutputFormat::Json) {
        write_json(&out.join("sweep_report.json"), &res.report)?;
    }
    Ok(res.report)
}

// ---------------------------------------------------------------------------
// reference

#[derive(Clone, Debug, Serialize)]
pub struct ReferenceReport {
    pub initial: ReferenceInit,
    pub dt: f64,
    pub steps: usize,
    pub t_end: f64,
    /// Max-norm errors against the analytic Taylor–Green solution.
    pub velocity_error_max: Option<f64>,
    pub pressure_error_max: Option<f64>,
    pub divergence_max: f64,
}

pub fn run_reference_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<ReferenceReport, CliError> {
    let grid = cfg.grid.build()?;
    let model = cfg.model()?;
    let mu_bar = model.params.mu_bar();
    let solver = cfg.solver_config();
    let (u0, dt) = match cfg.reference.initial {
        ReferenceInit::TaylorGreen => {
            if grid.dim() < 2 {
                return Err(CliError::Config("taylor-green reference needs dim >= 2".into()));
            }
            let u = taylor_green(&grid, mu_bar, 0.0);
            let dt = solver.dt.unwrap_or_else(|| default_dt(&grid, &u));
            (u, dt)
        }
        ReferenceInit::Init => {
            let wp = make_well_prepared(&cfg.init, &grid, &model)?;
            let dt = sweep_dt(cfg, &grid, &model, cfg.init.seed)?;
            (wp.state.u, dt)
        }
    };
    let (nsteps, h) = step_plan(solver.t_end, dt);
    let every = cadence_steps(solver.cadence, h);
    let l = cfg.diagnostics.order;
    let tg = cfg.reference.initial == ReferenceInit::TaylorGreen;
    let mut records = Vec::new();
    let (mut sup, mut diss, mut prev): (f64, f64, Option<(f64, f64)>) = (0.0, 0.0, None);
    let mut last = None;
    let fin = run_reference(&u0, h, nsteps, every, mu_bar, cfg.reference.scheme, &mut |s| {
        let hats = s.u.hats();
        let bundle: f64 = hats.iter().map(|x| grid.sobolev_sq_hat(x, l)).sum();
        let rate: f64 = hats.iter().map(|x| grid.grad_sobolev_sq_hat(x, l)).sum();
        if let Some((t0, r0)) = prev {
            diss += 0.5 * (s.time - t0) * (rate + r0);
        }
        prev = Some((s.time, rate));
        sup = sup.max(bundle);
        let (e2, e1) = if tg {
            let d = s.u.sub(&taylor_green(&grid, mu_bar, s.time));
            (Some(d.sobolev_norm(0)?), Some(d.sobolev_norm(1)?))
        } else {
            (None, None)
        };
        records.push(DiagnosticsRecord {
            time: s.time,
            bundle_sup: sup,
            energy_e: bundle,
            diss_u: diss,
            diss_theta: 0.0,
            diss_g: 0.0,
            exchange_residual: 0.0,
            ref_error_l2: e2,
            ref_error_h1: e1,
            delta: 0.0,
            seed: cfg.init.seed,
            kind: KIND_INCOMPRESSIBLE.to_string(),
        });
        last = Some(s.clone());
        Ok(())
    })?;
    let state = last.unwrap_or(fin.final_state);
    let (vel, pres) = if tg {
        let ve = state.u.sub(&taylor_green(&grid, mu_bar, state.time)).max_abs();
        let pe = pressure_recover(&state, model.params.rho_bar)
            .sub(&taylor_green_pressure(&grid, model.params.rho_bar, mu_bar, state.time))
            .max_abs();
        (Some(ve), Some(pe))
    } else {
        (None, None)
    };
    let report = ReferenceReport {
        initial: cfg.reference.initial,
        dt: h,
        steps: nsteps,
        t_end: solver.t_end,
        velocity_error_max: vel,
        pressure_error_max: pres,
        divergence_max: state.u.divergence().max_abs(),
    };
    ensure_dir(out)?;
    if cfg.output.wants(OutputFormat::Csv) {
        write_csv(&out.join("reference.csv"), &records)?;
    }
    if cfg.output.wants(OutputFormat::Json) {
        write_json(&out.join("reference_report.json"), &report)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// linearized

/// Spread of the estimated constant across δ for one coefficient family.
#[derive(Clone, Debug, Serialize)]
pub struct FamilyReport {
    pub family: CoefficientFamily,
    pub deltas: Vec<f64>,
    pub c0_estimates: Vec<f64>,
    pub spread: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearizedReport {
    pub c0: f64,
    pub order: u32,
    pub families: Vec<FamilyReport>,
}

#[derive(Clone, Debug)]
pub struct LinearizedResult {
    pub report: LinearizedReport,
    pub records: Vec<DiagnosticsRecord>,
}

pub fn linearized_problem(cfg: &ExperimentConfig, grid: &SpectralGrid, family: CoefficientFamily, delta: f64) -> Result<LinearizedProblem, CliError> {
    let lin = &cfg.linearized;
    let mut pb = seeded_problem(grid, family, delta, lin.seed, lin.amplitude, lin.forcing_amplitude, lin.horizon)?;
    pb.order = lin.order;
    pb.c0 = lin.c0;
    Ok(pb)
}

pub fn compute_linearized(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<LinearizedResult, CliError> {
    let lin = &cfg.linearized;
    let grid = SpectralGrid::new(cfg.grid.dim, lin.n, cfg.grid.extent, cfg.grid.dealias)?;
    let jobs: Vec<(CoefficientFamily, f64)> = lin
        .families
        .iter()
        .flat_map(|f| lin.deltas.iter().map(move |d| (*f, *d)))
        .collect();
    let results = with_pool(threads, || {
        jobs.par_iter()
            .map(|(family, delta)| -> Result<_, CliError> {
                let model = cfg.model_at(*delta)?;
                let pb = linearized_problem(cfg, &grid, *family, *delta)?;
                let traj = solve_linearized(&pb, &grid, &model, lin.dt)?;
                Ok(check_estimate(&traj, &pb, &model)?)
            })
            .collect::<Vec<_>>()
    })?;
    let mut families: Vec<FamilyReport> = Vec::new();
    let mut records = Vec::new();
    for ((family, delta), r) in jobs.iter().zip(results) {
        let r = r?;
        let mut sup = 0.0f64;
        for i in 0..r.times.len() {
            sup = sup.max(r.bundle[i]);
            records.push(DiagnosticsRecord {
                time: r.times[i],
                bundle_sup: sup,
                energy_e: r.lhs[i],
                diss_u: r.diss_m[i],
                diss_theta: r.diss_zeta[i],
                diss_g: r.diss_g[i],
                exchange_residual: r.exchange[i],
                ref_error_l2: None,
                ref_error_h1: None,
                delta: *delta,
                seed: lin.seed,
                kind: KIND_LINEARIZED.to_string(),
            });
        }
        match families.iter_mut().find(|f| f.family == *family) {
            Some(f) => {
                f.deltas.push(*delta);
                f.c0_estimates.push(r.c0_estimate);
            }
            None => families.push(FamilyReport {
                family: *family,
                deltas: vec![*delta],
                c0_estimates: vec![r.c0_estimate],
                spread: 0.0,
            }),
        }
    }
    for f in &mut families {
        let max = f.c0_estimates.iter().cloned().fold(0.0, f64::max);
        let min = f.c0_estimates.iter().cloned().fold(f64::INFINITY, f64::min);
        f.spread = if min > 0.0 { max / min } else { f64::INFINITY };
    }
    Ok(LinearizedResult {
        report: LinearizedReport {
            c0: lin.c0,
            order: lin.order,
            families,
        },
        records,
    })
}

pub fn run_linearized(cfg: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<LinearizedReport, CliError> {
    let res = compute_linearized(cfg, threads)?;
    ensure_dir(out)?;
    if cfg.output.wants(OutputFormat::Csv) {
        write_csv(&out.join("linearized.csv"), &res.records)?;
    }
    if cfg.output.wants(OutputFormat::Json) {
        write_json(&out.join("linearized_report.json"), &res.report)?;
    }
    Ok(res.report)
}
