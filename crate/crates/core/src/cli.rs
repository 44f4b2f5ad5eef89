//! Command-line front end: configure and run single simulations,
//! conservation audits, convergence studies, and Stokes-only studies;
//! emit CSV artifacts with the configuration echoed in the header.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Parser;

use crate::basis::NodalBasis1D;
use crate::diagnostics::{
    eoc, l2_error_phase, l2_error_pressure, l2_error_velocity, velocity_energy_error,
    ConvergenceTable,
};
use crate::manufactured::ManufacturedCase;
use crate::mesh::{build_mesh, build_phase_mesh};
use crate::splitting::{cfl_dt, run, SimulationState, Sources, StepConfig, StepRecord};
use crate::stokes::{solve_stokes, StokesOperators, XScalarField};
use crate::vlasov::{project_initial, PhaseSpace};
use crate::{Error, Result};

pub const OUTDIR_ENV: &str = "VSDG_OUTDIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    Convergence,
    Conserve,
    StokesOnly,
}

impl Mode {
    fn parse(s: &str) -> Result<Mode> {
        match s {
            "simulate" => Ok(Mode::Simulate),
            "convergence" => Ok(Mode::Convergence),
            "conserve" => Ok(Mode::Conserve),
            "stokes-only" => Ok(Mode::StokesOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode '{other}' (expected simulate|convergence|conserve|stokes-only)"
            ))),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Convergence => "convergence",
            Mode::Conserve => "conserve",
            Mode::StokesOnly => "stokes-only",
        }
    }
}

/// Time-step policy: explicit `dt`, or `min(CFL bound, factor · h^{k+1})`
/// with `k = min(k_x, k_v)` so the splitting error stays below the spatial
/// error in refinement studies.
#[derive(Debug, Clone, Copy)]
pub enum DtPolicy {
    Auto { factor: f64 },
    Explicit(f64),
}

/// Validated run configuration; every field is echoed into output headers.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub case: String,
    pub kx: usize,
    pub kv: usize,
    pub meshes: Vec<usize>,
    pub t_final: f64,
    pub dt_policy: DtPolicy,
    pub penalty: f64,
    pub cfl_safety: f64,
    pub steps: usize,
    pub outdir: PathBuf,
}

impl RunConfig {
    fn header(&self) -> String {
        let dt = match self.dt_policy {
            DtPolicy::Auto { factor } => format!("auto(factor={factor})"),
            DtPolicy::Explicit(dt) => format!("{dt:.16e}"),
        };
        let meshes: Vec<String> = self.meshes.iter().map(|m| m.to_string()).collect();
        format!(
            "# mode={} case={} kx={} kv={} meshes={} tfinal={} dt={} penalty={} \
             cfl_safety={} steps={}\n",
            self.mode.name(),
            self.case,
            self.kx,
            self.kv,
            meshes.join("/"),
            self.t_final,
            dt,
            self.penalty,
            self.cfl_safety,
            self.steps,
        )
    }
}

#[derive(Parser, Debug, Default)]
#[command(
    name = "vsdg",
    about = "dG solver for the 2D×2V Vlasov–Stokes system",
    disable_help_flag = false
)]
struct CliArgs {
    /// Plain-text key=value configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// simulate | convergence | conserve | stokes-only
    #[arg(long)]
    mode: Option<String>,
    /// Manufactured case: example1 | example2
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    kx: Option<usize>,
    #[arg(long)]
    kv: Option<usize>,
    /// Comma-separated x-mesh sizes, e.g. 4,8,16
    #[arg(long, value_delimiter = ',')]
    meshes: Option<Vec<usize>>,
    #[arg(long)]
    tfinal: Option<f64>,
    /// Explicit time step (otherwise the auto policy applies)
    #[arg(long)]
    dt: Option<f64>,
    /// Factor c in the auto policy dt = min(CFL, c·h^{k+1})
    #[arg(long)]
    dt_factor: Option<f64>,
    #[arg(long)]
    penalty: Option<f64>,
    #[arg(long)]
    cfl_safety: Option<f64>,
    /// Number of steps in conserve mode
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    outdir: Option<PathBuf>,
}

fn parse_file(path: &Path) -> Result<std::collections::BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = std::collections::BTreeMap::new();
    const KNOWN: [&str; 12] = [
        "mode",
        "case",
        "kx",
        "kv",
        "meshes",
        "tfinal",
        "dt",
        "dt_factor",
        "penalty",
        "cfl_safety",
        "steps",
        "outdir",
    ];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::InvalidConfig(format!(
                "{}:{}: expected key=value",
                path.display(),
                lineno + 1
            )));
        };
        let key = key.trim();
        if !KNOWN.contains(&key) {
            return Err(Error::InvalidConfig(format!(
                "{}:{}: unknown key '{key}'",
                path.display(),
                lineno + 1
            )));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(key: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid value '{s}' for {key}")))
}

/// Parse argv (plus an optional config file); flags override file values,
/// the `VSDG_OUTDIR` environment variable overrides the file's output
/// directory, and an explicit `--outdir` flag overrides both.
pub fn parse_config(argv: &[String]) -> Result<RunConfig> {
    let args = CliArgs::try_parse_from(argv)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let file = match &args.config {
        Some(path) => parse_file(path)?,
        None => Default::default(),
    };
    let from_file = |key: &str| file.get(key).map(String::as_str);

    let mode = match args.mode.as_deref().or_else(|| from_file("mode")) {
        Some(m) => Mode::parse(m)?,
        None => Mode::Simulate,
    };
    let case = match args.case.clone().or_else(|| file.get("case").cloned()) {
        Some(c) => c,
        None if mode == Mode::Conserve => String::new(),
        None => return Err(Error::InvalidConfig("missing required --case".into())),
    };
    if !case.is_empty() {
        ManufacturedCase::by_name(&case)?;
    }
    let kx = match args.kx {
        Some(k) => k,
        None => from_file("kx").map(|s| parse_num("kx", s)).transpose()?.unwrap_or(1),
    };
    let kv = match args.kv {
        Some(k) => k,
        None => from_file("kv").map(|s| parse_num("kv", s)).transpose()?.unwrap_or(1),
    };
    let meshes = match args.meshes.clone() {
        Some(m) => m,
        None => match from_file("meshes") {
            Some(s) => s
                .split(',')
                .map(|t| parse_num::<usize>("meshes", t.trim()))
                .collect::<Result<Vec<_>>>()?,
            None => vec![8],
        },
    };
    let t_final = match args.tfinal {
        Some(t) => t,
        None => from_file("tfinal")
            .map(|s| parse_num("tfinal", s))
            .transpose()?
            .unwrap_or(0.1),
    };
    let dt_policy = if let Some(dt) = args.dt {
        DtPolicy::Explicit(dt)
    } else if let Some(f) = args.dt_factor {
        DtPolicy::Auto { factor: f }
    } else if let Some(s) = from_file("dt") {
        DtPolicy::Explicit(parse_num("dt", s)?)
    } else if let Some(s) = from_file("dt_factor") {
        DtPolicy::Auto {
            factor: parse_num("dt_factor", s)?,
        }
    } else {
        DtPolicy::Auto { factor: 0.2 }
    };
    let penalty = match args.penalty {
        Some(p) => p,
        None => from_file("penalty")
            .map(|s| parse_num("penalty", s))
            .transpose()?
            .unwrap_or(10.0),
    };
    let cfl_safety = match args.cfl_safety {
        Some(c) => c,
        None => from_file("cfl_safety")
            .map(|s| parse_num("cfl_safety", s))
            .transpose()?
            .unwrap_or(0.5),
    };
    let steps = match args.steps {
        Some(s) => s,
        None => from_file("steps")
            .map(|s| parse_num("steps", s))
            .transpose()?
            .unwrap_or(100),
    };
    let outdir = if let Some(dir) = args.outdir {
        dir
    } else if let Ok(dir) = std::env::var(OUTDIR_ENV) {
        PathBuf::from(dir)
    } else if let Some(dir) = file.get("outdir") {
        PathBuf::from(dir)
    } else {
        PathBuf::from("out")
    };

    let cfg = RunConfig {
        mode,
        case,
        kx,
        kv,
        meshes,
        t_final,
        dt_policy,
        penalty,
        cfl_safety,
        steps,
        outdir,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<()> {
    if cfg.penalty <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "penalty must be positive, got {}",
            cfg.penalty
        )));
    }
    if !(cfg.cfl_safety > 0.0 && cfg.cfl_safety <= 1.0) {
        return Err(Error::InvalidConfig(
            "cfl_safety must lie in (0, 1]".into(),
        ));
    }
    if cfg.t_final < 0.0 {
        return Err(Error::InvalidConfig("tfinal must be nonnegative".into()));
    }
    if let DtPolicy::Explicit(dt) = cfg.dt_policy {
        if dt <= 0.0 {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
    }
    if let DtPolicy::Auto { factor } = cfg.dt_policy {
        if factor <= 0.0 {
            return Err(Error::InvalidConfig("dt_factor must be positive".into()));
        }
    }
    if cfg.meshes.is_empty() {
        return Err(Error::InvalidConfig("at least one mesh is required".into()));
    }
    if cfg.mode == Mode::Convergence || cfg.mode == Mode::StokesOnly {
        if cfg.meshes.len() < 2 {
            return Err(Error::InvalidConfig(
                "convergence studies need at least two meshes".into(),
            ));
        }
        for &n in &cfg.meshes {
            if !n.is_power_of_two() {
                return Err(Error::InvalidConfig(format!(
                    "mesh size {n} is not a power of two"
                )));
            }
        }
        for pair in cfg.meshes.windows(2) {
            if pair[1] != 2 * pair[0] {
                return Err(Error::InvalidConfig(format!(
                    "mesh sizes must double: got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
    }
    if cfg.mode != Mode::Conserve && cfg.case.is_empty() {
        return Err(Error::InvalidConfig("missing required --case".into()));
    }
    Ok(())
}

/// Build the phase-space discretization for mesh size `n`: `n × n` spatial
/// cells and `h_v = h_x` on the velocity box.
pub fn build_space(case: &ManufacturedCase, n: usize, kx: usize, kv: usize) -> Result<Arc<PhaseSpace>> {
    let hx = (case.omega_x[0][1] - case.omega_x[0][0]) / n as f64;
    let mut nv = [0usize; 2];
    for ax in 0..2 {
        let extent = case.omega_v[ax][1] - case.omega_v[ax][0];
        let count = (extent / hx).round();
        if ((count * hx) - extent).abs() > 1e-9 * extent {
            return Err(Error::InvalidConfig(format!(
                "h_v = h_x = {hx} does not tile the velocity axis {ax}"
            )));
        }
        nv[ax] = count as usize;
    }
    let xm = build_mesh(case.omega_x, [n, n], [true, true])?;
    let vm = build_mesh(case.omega_v, nv, [false, false])?;
    Ok(Arc::new(PhaseSpace::new(build_phase_mesh(xm, vm)?, kx, kv)?))
}

fn resolve_dt(cfg: &RunConfig, space: &PhaseSpace, u_bound: f64) -> f64 {
    let cfl = cfl_dt(space, u_bound, cfg.cfl_safety);
    match cfg.dt_policy {
        DtPolicy::Explicit(dt) => dt,
        DtPolicy::Auto { factor } => {
            let k = space.degrees().0.min(space.degrees().1) as f64;
            let h = space.mesh_size();
            cfl.min(factor * h.powf(k + 1.0))
        }
    }
}

/// Worst ratio `‖f^n‖ / (e^{1.1 t_n} ‖f^0‖)` over the recorded steps; at
/// most one for an L²-stable run.
pub fn stability_margin(records: &[StepRecord]) -> f64 {
    let l2_0 = records.first().map_or(0.0, |r| r.l2_f);
    if l2_0 == 0.0 {
        return 0.0;
    }
    records
        .iter()
        .map(|r| r.l2_f / ((1.1 * r.t).exp() * l2_0))
        .fold(0.0, f64::max)
}

pub struct ConvergenceStudy {
    pub table: ConvergenceTable,
    pub stability_margin: f64,
    pub csv_path: PathBuf,
}

/// Run the manufactured case over the mesh list and tabulate errors and
/// orders at the final time.
pub fn run_convergence_study(cfg: &RunConfig) -> Result<ConvergenceStudy> {
    let case = ManufacturedCase::by_name(&cfg.case)?;
    let sources = Sources::from_case(&case);
    let mut points = Vec::new();
    let mut margin = 0.0f64;
    for &n in &cfg.meshes {
        let space = build_space(&case, n, cfg.kx, cfg.kv)?;
        let ops = StokesOperators::new(
            space.xmesh().clone(),
            space.xbasis().clone(),
            cfg.penalty,
        )?;
        let f0 = project_initial(&space, |x, v| case.f_at(0.0, x, v))?;
        let init = SimulationState::initialize(f0, &ops, &sources, 0.0)?;
        let dt = resolve_dt(cfg, &space, case.u_bound);
        let step_cfg = StepConfig {
            dt,
            penalty: cfg.penalty,
            cfl_safety: cfg.cfl_safety,
            u_bound: case.u_bound,
        };
        let (state, records) = run(init, &ops, &step_cfg, &sources, cfg.t_final)?;
        margin = margin.max(stability_margin(&records));
        let t = cfg.t_final;
        let err_f = l2_error_phase(&state.f, |t, x, v| case.f_at(t, x, v), t);
        let err_u = l2_error_velocity(&state.u, |t, x| case.u_at(t, x), t);
        let err_p = l2_error_pressure(&state.p, |t, x| case.p_at(t, x), t);
        points.push((space.mesh_size(), err_f, err_u, err_p));
    }
    let table = eoc(&points)?;
    let csv_path = cfg.outdir.join(format!(
        "convergence_{}_kx{}_kv{}.csv",
        cfg.case, cfg.kx, cfg.kv
    ));
    write_file(&csv_path, &(cfg.header() + &table.to_csv()))?;
    Ok(ConvergenceStudy {
        table,
        stability_margin: margin,
        csv_path,
    })
}

/// Smooth bump supported in `|s| < 1/2`.
fn bump(s: f64) -> f64 {
    let z = 2.0 * s;
    if z.abs() < 1.0 {
        (-1.0 / (1.0 - z * z)).exp()
    } else {
        0.0
    }
}

/// The audit initial datum: positive, x-periodic, and supported well inside
/// the velocity box so no numerical support reaches `∂Ω_v` within the run.
pub fn audit_datum(x: [f64; 2], v: [f64; 2]) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let sx = 1.0 + 0.5 * (two_pi * x[0]).sin() * (two_pi * x[1]).sin();
    8.0 * sx * bump(v[0] - 0.25) * bump(v[1] - 0.15)
}

pub struct AuditResult {
    pub records: Vec<StepRecord>,
    pub mass_drift: f64,
    /// Per-component momentum drift; `None` when `k_v = 0` (momentum
    /// conservation needs `k ≥ 1`).
    pub momentum_drift: Option<[f64; 2]>,
    pub stability_margin: f64,
    pub csv_path: PathBuf,
}

/// March the source-free system for `cfg.steps` CFL-limited steps and track
/// the conserved quantities.
pub fn run_conservation_audit(cfg: &RunConfig) -> Result<AuditResult> {
    let n = cfg.meshes[0];
    let xm = build_mesh([[0.0, 1.0], [0.0, 1.0]], [n, n], [true, true])?;
    let vm = build_mesh([[-4.0, 4.0], [-4.0, 4.0]], [2 * n, 2 * n], [false, false])?;
    let space = Arc::new(PhaseSpace::new(build_phase_mesh(xm, vm)?, cfg.kx, cfg.kv)?);
    let ops = StokesOperators::new(space.xmesh().clone(), space.xbasis().clone(), cfg.penalty)?;
    let sources = Sources::none();
    let f0 = project_initial(&space, audit_datum)?;
    let init = SimulationState::initialize(f0, &ops, &sources, 0.0)?;
    let u_bound = (2.0 * init.u.max_nodal_speed()).max(0.1);
    let dt = cfl_dt(&space, u_bound, cfg.cfl_safety);
    let step_cfg = StepConfig {
        dt,
        penalty: cfg.penalty,
        cfl_safety: cfg.cfl_safety,
        u_bound,
    };
    let t_final = cfg.steps as f64 * dt;
    let (_, records) = run(init, &ops, &step_cfg, &sources, t_final)?;

    let first = &records[0];
    let mass0 = first.conserved.mass;
    let mut mass_drift = 0.0f64;
    let mut mom_drift = [0.0f64; 2];
    for r in &records {
        mass_drift = mass_drift.max((r.conserved.mass - mass0).abs() / mass0.abs());
        for c in 0..2 {
            let scale = first.conserved.momentum[c].abs().max(mass0.abs());
            mom_drift[c] =
                mom_drift[c].max((r.conserved.momentum[c] - first.conserved.momentum[c]).abs() / scale);
        }
    }
    let momentum_drift = if cfg.kv >= 1 { Some(mom_drift) } else { None };

    let csv_path = cfg.outdir.join(format!("conserve_n{}_kx{}_kv{}.csv", n, cfg.kx, cfg.kv));
    let mut csv = cfg.header();
    csv.push_str("t,mass,momentum1,momentum2,energy,min_rho,l2f\n");
    for r in &records {
        let _ = writeln!(
            csv,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.t,
            r.conserved.mass,
            r.conserved.momentum[0],
            r.conserved.momentum[1],
            r.conserved.kinetic_energy,
            r.min_rho,
            r.l2_f
        );
    }
    let momentum_note = match momentum_drift {
        Some(d) => format!("{:.3e},{:.3e}", d[0], d[1]),
        None => "n/a,n/a".to_string(),
    };
    let _ = writeln!(
        csv,
        "# max_rel_drift mass={mass_drift:.3e} momentum={momentum_note}"
    );
    write_file(&csv_path, &csv)?;
    let margin = stability_margin(&records);
    Ok(AuditResult {
        records,
        mass_drift,
        momentum_drift,
        stability_margin: margin,
        csv_path,
    })
}

pub struct StokesStudy {
    /// Rows `(h, errL2u, errEnergyU, errL2p)`.
    pub rows: Vec<(f64, f64, f64, f64)>,
    /// Final-pair EOCs `(L2 u, energy u, L2 p)`.
    pub final_eoc: Option<(f64, f64, f64)>,
    pub csv_path: PathBuf,
}

/// Stokes-only manufactured convergence: solve the generalized Stokes system
/// with the exact (projected) density at `t = 0` and tabulate velocity and
/// pressure errors.
pub fn run_stokes_study(cfg: &RunConfig) -> Result<StokesStudy> {
    let case = ManufacturedCase::by_name(&cfg.case)?;
    let basis = Arc::new(NodalBasis1D::new(cfg.kx)?);
    let mut rows = Vec::new();
    for &n in &cfg.meshes {
        let mesh = Arc::new(build_mesh(case.omega_x, [n, n], [true, true])?);
        let ops = StokesOperators::new(mesh.clone(), basis.clone(), cfg.penalty)?;
        let rho = project_x_scalar(&mesh, &basis, |x| case.rho_at(0.0, x))?;
        let zero = XScalarField::zeros(mesh.clone(), basis.clone());
        let rv = [zero.clone(), zero];
        let g = |x: [f64; 2]| {
            let rv = case.rho_v_at(0.0, x);
            let gg = case.source_g_at(0.0, x);
            [rv[0] + gg[0], rv[1] + gg[1]]
        };
        let (u, p) = solve_stokes(&ops, &rho, &rv, g)?;
        let err_u = l2_error_velocity(&u, |t, x| case.u_at(t, x), 0.0);
        let err_e = velocity_energy_error(
            &u,
            |t, x| case.u_at(t, x),
            |t, x| case.grad_u_at(t, x),
            0.0,
        );
        let err_p = l2_error_pressure(&p, |t, x| case.p_at(t, x), 0.0);
        rows.push((mesh.mesh_size(), err_u, err_e, err_p));
    }
    let table = eoc(&rows)?;
    let final_eoc = table.final_eoc();
    let csv_path = cfg
        .outdir
        .join(format!("stokes_{}_k{}.csv", cfg.case, cfg.kx));
    let mut csv = cfg.header();
    csv.push_str("h,errL2u,errEnergyU,errL2p,eoc_u,eoc_energy,eoc_p\n");
    for r in &table.rows {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}",
            r.h,
            r.err_f,
            r.err_u,
            r.err_p,
            fmt(r.eoc_f),
            fmt(r.eoc_u),
            fmt(r.eoc_p)
        );
    }
    write_file(&csv_path, &csv)?;
    Ok(StokesStudy {
        rows,
        final_eoc,
        csv_path,
    })
}

/// L² projection of a scalar function onto the x-mesh dG space with `k + 3`
/// Gauss points per direction.
pub fn project_x_scalar<F>(
    mesh: &Arc<crate::mesh::CartesianMesh2D>,
    basis: &Arc<NodalBasis1D>,
    g: F,
) -> Result<XScalarField>
where
    F: Fn([f64; 2]) -> f64,
{
    let quad = crate::basis::gauss_rule(basis.degree() + 3)?;
    let np = basis.num_nodes();
    let nq = quad.len();
    let mut vals = vec![0.0; nq * np];
    for q in 0..nq {
        let row = basis.eval_all(quad.points[q]);
        vals[q * np..(q + 1) * np].copy_from_slice(&row);
    }
    let mut field = XScalarField::zeros(mesh.clone(), basis.clone());
    for cell in 0..mesh.num_cells() {
        for a2 in 0..np {
            for a1 in 0..np {
                let mut acc = 0.0;
                for q2 in 0..nq {
                    for q1 in 0..nq {
                        let x = mesh.map_to_physical(cell, [quad.points[q1], quad.points[q2]]);
                        acc += quad.weights[q1]
                            * quad.weights[q2]
                            * g(x)
                            * vals[q1 * np + a1]
                            * vals[q2 * np + a2];
                    }
                }
                field.data_mut()[cell * np * np + a2 * np + a1] =
                    acc / (basis.node_weights()[a1] * basis.node_weights()[a2]);
            }
        }
    }
    Ok(field)
}

pub struct SimulateResult {
    pub records: Vec<StepRecord>,
    pub err_f: f64,
    pub err_u: f64,
    pub err_p: f64,
    pub csv_path: PathBuf,
}

/// Single forced run on the first mesh with per-step diagnostics and final
/// errors.
pub fn run_simulate(cfg: &RunConfig) -> Result<SimulateResult> {
    let case = ManufacturedCase::by_name(&cfg.case)?;
    let sources = Sources::from_case(&case);
    let n = cfg.meshes[0];
    let space = build_space(&case, n, cfg.kx, cfg.kv)?;
    let ops = StokesOperators::new(space.xmesh().clone(), space.xbasis().clone(), cfg.penalty)?;
    let f0 = project_initial(&space, |x, v| case.f_at(0.0, x, v))?;
    let init = SimulationState::initialize(f0, &ops, &sources, 0.0)?;
    let dt = resolve_dt(cfg, &space, case.u_bound);
    let step_cfg = StepConfig {
        dt,
        penalty: cfg.penalty,
        cfl_safety: cfg.cfl_safety,
        u_bound: case.u_bound,
    };
    let (state, records) = run(init, &ops, &step_cfg, &sources, cfg.t_final)?;
    let t = cfg.t_final;
    let err_f = l2_error_phase(&state.f, |t, x, v| case.f_at(t, x, v), t);
    let err_u = l2_error_velocity(&state.u, |t, x| case.u_at(t, x), t);
    let err_p = l2_error_pressure(&state.p, |t, x| case.p_at(t, x), t);

    let csv_path = cfg.outdir.join(format!(
        "simulate_{}_n{}_kx{}_kv{}.csv",
        cfg.case, n, cfg.kx, cfg.kv
    ));
    let mut csv = cfg.header();
    csv.push_str("t,mass,momentum1,momentum2,energy,min_rho,l2f\n");
    for r in &records {
        let _ = writeln!(
            csv,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.t,
            r.conserved.mass,
            r.conserved.momentum[0],
            r.conserved.momentum[1],
            r.conserved.kinetic_energy,
            r.min_rho,
            r.l2_f
        );
    }
    let _ = writeln!(csv, "# errL2f={err_f:.16e} errL2u={err_u:.16e} errL2p={err_p:.16e}");
    write_file(&csv_path, &csv)?;
    Ok(SimulateResult {
        records,
        err_f,
        err_u,
        err_p,
        csv_path,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

/// Entry point shared by the binary and tests. Exit codes: 0 success,
/// 2 configuration error, 3 solver/runtime failure.
pub fn main_from_args(argv: &[String]) -> i32 {
    let cfg = match parse_config(argv) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let outcome = dispatch(&cfg);
    match outcome {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) | Error::InvalidMesh(_) | Error::InvalidBasis(_) => 2,
                _ => 3,
            }
        }
    }
}

fn dispatch(cfg: &RunConfig) -> Result<String> {
    let mut out = String::new();
    match cfg.mode {
        Mode::Convergence => {
            let study = run_convergence_study(cfg)?;
            out.push_str(&study.table.to_csv());
            let _ = writeln!(out, "# stability_margin={:.6}", study.stability_margin);
            let _ = writeln!(out, "# wrote {}", study.csv_path.display());
        }
        Mode::Conserve => {
            let audit = run_conservation_audit(cfg)?;
            let mom = match audit.momentum_drift {
                Some(d) => format!("{:.3e},{:.3e}", d[0], d[1]),
                None => "n/a,n/a".into(),
            };
            let _ = writeln!(
                out,
                "mass_drift={:.3e} momentum_drift={mom} stability_margin={:.6}",
                audit.mass_drift, audit.stability_margin
            );
            let _ = writeln!(out, "# wrote {}", audit.csv_path.display());
        }
        Mode::StokesOnly => {
            let study = run_stokes_study(cfg)?;
            for r in &study.rows {
                let _ = writeln!(
                    out,
                    "h={:.6e} errL2u={:.6e} errEnergyU={:.6e} errL2p={:.6e}",
                    r.0, r.1, r.2, r.3
                );
            }
            if let Some((a, b, c)) = study.final_eoc {
                let _ = writeln!(out, "eoc_u={a:.3} eoc_energy={b:.3} eoc_p={c:.3}");
            }
            let _ = writeln!(out, "# wrote {}", study.csv_path.display());
        }
        Mode::Simulate => {
            let sim = run_simulate(cfg)?;
            let last = sim.records.last().unwrap();
            let _ = writeln!(
                out,
                "t={:.6} errL2f={:.6e} errL2u={:.6e} errL2p={:.6e} min_rho={:.3e}",
                last.t, sim.err_f, sim.err_u, sim.err_p, last.min_rho
            );
            let _ = writeln!(out, "# wrote {}", sim.csv_path.display());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        std::iter::once("vsdg".to_string())
            .chain(s.split_whitespace().map(String::from))
            .collect()
    }

    #[test]
    fn parses_the_documented_flag_set() {
        let cfg = parse_config(&argv(
            "--mode convergence --case example1 --kx 1 --kv 1 --meshes 4,8,16 \
             --tfinal 0.1 --penalty 10",
        ))
        .unwrap();
        assert_eq!(cfg.mode, Mode::Convergence);
        assert_eq!(cfg.case, "example1");
        assert_eq!(cfg.meshes, vec![4, 8, 16]);
        assert_eq!(cfg.t_final, 0.1);
        assert_eq!(cfg.penalty, 10.0);
    }

    #[test]
    fn rejects_bad_configs() {
        // Missing case.
        assert!(parse_config(&argv("--mode simulate")).is_err());
        // Negative penalty.
        assert!(parse_config(&argv("--case example1 --penalty -1")).is_err());
        // Non-power-of-two meshes in convergence mode.
        assert!(parse_config(&argv(
            "--mode convergence --case example1 --meshes 3,6"
        ))
        .is_err());
        // Non-doubling meshes.
        assert!(parse_config(&argv(
            "--mode convergence --case example1 --meshes 4,16"
        ))
        .is_err());
        // Single mesh in convergence mode.
        assert!(parse_config(&argv(
            "--mode convergence --case example1 --meshes 8"
        ))
        .is_err());
        // Unknown case.
        assert!(parse_config(&argv("--case example7")).is_err());
    }

    #[test]
    fn config_file_merges_and_flags_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "mode=convergence\ncase=example1\nmeshes=4,8\npenalty=7\n",
        )
        .unwrap();
        let cfg = parse_config(&argv(&format!(
            "--config {} --penalty 11",
            path.display()
        )))
        .unwrap();
        assert_eq!(cfg.mode, Mode::Convergence);
        assert_eq!(cfg.penalty, 11.0);
        assert_eq!(cfg.meshes, vec![4, 8]);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "case=example1\nbogus=1\n").unwrap();
        assert!(parse_config(&argv(&format!("--config {}", path.display()))).is_err());
    }

    #[test]
    fn empty_argv_yields_config_error_exit() {
        assert_eq!(main_from_args(&["vsdg".to_string()]), 2);
    }
}
