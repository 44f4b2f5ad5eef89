//! The fully discrete scheme: per step, solve the Stokes system with lagged
//! moments, then Lie–Trotter transport — the velocity advection with its
//! source first, then the spatial advection — each by one forward Euler
//! sub-step.

use std::sync::Arc;

use crate::diagnostics::{conserved_quantities, ConservedQuantities};
use crate::manufactured::{ManufacturedCase, PhaseFn, VectorFn};
use crate::stokes::{solve_stokes, PressureField, StokesOperators, VelocityField};
use crate::vlasov::{
    apply_v_transport, apply_x_transport, compute_moments, interpolate_nodal, MomentPair,
    PhaseField, PhaseSpace,
};
use crate::{Error, Result};

/// Source callables bound into the step; `None` means the homogeneous model.
/// `seam_inflow` carries the exact solution when it is not torus-periodic,
/// in which case the x transport imposes its traces at the seam.
#[derive(Clone, Default)]
pub struct Sources {
    pub f_src: Option<PhaseFn>,
    pub g_src: Option<VectorFn>,
    pub seam_inflow: Option<PhaseFn>,
}

impl Sources {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_case(case: &ManufacturedCase) -> Self {
        let f = case.clone();
        let g = case.clone();
        Self {
            f_src: Some(Arc::new(move |t, x, v| f.source_f_at(t, x, v))),
            g_src: Some(Arc::new(move |t, x| g.source_g_at(t, x))),
            seam_inflow: if case.torus_periodic {
                None
            } else {
                Some(case.f_fn())
            },
        }
    }
}

/// Time step plus the parameters its stability check needs.
#[derive(Debug, Clone, Copy)]
pub struct StepConfig {
    pub dt: f64,
    pub penalty: f64,
    pub cfl_safety: f64,
    /// Bound on `sup |u_h|` assumed by the CFL formula; the realized fluid
    /// velocity is checked against it every step.
    pub u_bound: f64,
}

/// Discrete state at one time level; moments always match `f`.
#[derive(Debug, Clone)]
pub struct SimulationState {
    pub t: f64,
    pub f: PhaseField,
    pub u: VelocityField,
    pub p: PressureField,
    pub moments: MomentPair,
}

impl SimulationState {
    /// Assemble the state at `t0`: moments of `f`, and the Stokes solution
    /// for those moments (with `G(t0)`), so diagnostics of the initial state
    /// are well defined.
    pub fn initialize(
        f: PhaseField,
        ops: &StokesOperators,
        sources: &Sources,
        t0: f64,
    ) -> Result<Self> {
        let moments = compute_moments(&f);
        let g = sources.g_src.clone();
        let (u, p) = solve_stokes(ops, &moments.rho, &moments.rho_v, move |x| {
            g.as_ref().map_or([0.0, 0.0], |g| g(t0, x))
        })?;
        Ok(Self {
            t: t0,
            f,
            u,
            p,
            moments,
        })
    }
}

/// Largest per-axis velocity magnitude over `Ω_v`.
fn max_axis_speed(space: &PhaseSpace) -> f64 {
    let d = space.vmesh().domain();
    let mut m = 0.0f64;
    for ax in 0..2 {
        m = m.max(d[ax][0].abs()).max(d[ax][1].abs());
    }
    m
}

/// Forward-Euler CFL bound
/// `safety · min(h_x / L, h_v / (u_bound + L)) / (2k + 1)` with
/// `L = max |v_i|` over `Ω_v` and `k = max(k_x, k_v)`.
pub fn cfl_dt(space: &PhaseSpace, u_bound: f64, safety: f64) -> f64 {
    let l = max_axis_speed(space);
    let hx = space.xmesh().cell_width()[0].min(space.xmesh().cell_width()[1]);
    let hv = space.vmesh().cell_width()[0].min(space.vmesh().cell_width()[1]);
    let (kx, kv) = space.degrees();
    let k = kx.max(kv) as f64;
    safety * (hx / l).min(hv / (u_bound + l)) / (2.0 * k + 1.0)
}

/// One Lie–Trotter step of size `dt`:
/// 1. solve Stokes with the lagged moments and `G(t+dt)`;
/// 2. velocity transport of `f` with `(u^{n+1} - v)` plus the source `F(t)`;
/// 3. spatial transport of the intermediate state;
/// 4. refresh moments.
pub fn lie_trotter_step(
    state: &SimulationState,
    ops: &StokesOperators,
    cfg: &StepConfig,
    sources: &Sources,
    dt: f64,
) -> Result<SimulationState> {
    if !(dt > 0.0) {
        return Err(Error::TimeStep(format!("step size {dt} must be positive")));
    }
    let space = state.f.space().clone();
    let bound = cfl_dt(&space, cfg.u_bound, cfg.cfl_safety);
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::TimeStep(format!(
            "dt = {dt:.3e} exceeds the CFL bound {bound:.3e}"
        )));
    }

    let t = state.t;
    let t_next = t + dt;
    let g = sources.g_src.clone();
    let (u_next, p_next) = solve_stokes(
        ops,
        &state.moments.rho,
        &state.moments.rho_v,
        move |x| g.as_ref().map_or([0.0, 0.0], |g| g(t_next, x)),
    )?;
    let realized = u_next.max_nodal_speed();
    if realized > cfg.u_bound * (1.0 + 1e-9) {
        return Err(Error::TimeStep(format!(
            "fluid speed {realized:.3e} exceeds the configured bound {:.3e}; \
             the CFL premise is violated",
            cfg.u_bound
        )));
    }

    // Velocity transport with source, one Euler step: f* = f + dt(rate + F).
    let mut f_star = state.f.clone();
    let rate_v = apply_v_transport(&u_next, &state.f);
    f_star.axpy(dt, &rate_v);
    if let Some(fs) = &sources.f_src {
        let fs = fs.clone();
        let src = interpolate_nodal(&space, move |x, v| fs(t, x, v));
        f_star.axpy(dt, &src);
    }

    // Spatial transport of the intermediate state.
    let rate_x = match &sources.seam_inflow {
        None => apply_x_transport(&f_star),
        Some(exact) => {
            let exact = exact.clone();
            crate::vlasov::apply_x_transport_with_inflow(&f_star, t, move |t, x, v| {
                exact(t, x, v)
            })
        }
    };
    let mut f_next = f_star;
    f_next.axpy(dt, &rate_x);

    let moments = compute_moments(&f_next);
    Ok(SimulationState {
        t: t_next,
        f: f_next,
        u: u_next,
        p: p_next,
        moments,
    })
}

/// Per-step diagnostics row.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub t: f64,
    pub conserved: ConservedQuantities,
    pub min_rho: f64,
    pub l2_f: f64,
}

fn record(state: &SimulationState) -> StepRecord {
    StepRecord {
        t: state.t,
        conserved: conserved_quantities(&state.f),
        min_rho: state.moments.rho.min_nodal(),
        l2_f: state.f.l2_norm(),
    }
}

/// March from the state's time to `t_final` with steps of `cfg.dt` (the last
/// step shortened to land exactly), recording diagnostics per step. With
/// `t_final` equal to the initial time, returns the initial state only.
pub fn run(
    initial: SimulationState,
    ops: &StokesOperators,
    cfg: &StepConfig,
    sources: &Sources,
    t_final: f64,
) -> Result<(SimulationState, Vec<StepRecord>)> {
    if t_final < initial.t {
        return Err(Error::TimeStep(format!(
            "final time {t_final} precedes initial time {}",
            initial.t
        )));
    }
    let t0 = initial.t;
    let span = t_final - t0;
    let mut records = vec![record(&initial)];
    if span == 0.0 {
        return Ok((initial, records));
    }
    if !(cfg.dt > 0.0) {
        return Err(Error::TimeStep("dt must be positive".into()));
    }
    let n_steps = ((span / cfg.dt) - 1e-9).ceil().max(1.0) as usize;
    let mut state = initial;
    for i in 0..n_steps {
        let t_target = if i + 1 == n_steps {
            t_final
        } else {
            t0 + (i + 1) as f64 * cfg.dt
        };
        let dt = t_target - state.t;
        state = lie_trotter_step(&state, ops, cfg, sources, dt)?;
        state.t = t_target;
        records.push(record(&state));
    }
    Ok((state, records))
}
