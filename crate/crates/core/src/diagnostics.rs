//! Conserved-quantity tracking, error norms against manufactured solutions,
//! and experimental orders of convergence.
//!
//! All diagnostics are pure functions of the state with deterministic
//! summation order: parallel passes collect per-cell partial sums into a
//! vector that is reduced sequentially.

use rayon::prelude::*;

use crate::basis::gauss_rule;
use crate::stokes::{PressureField, StokesOperators, VelocityField};
use crate::vlasov::{apply_semi_discrete, PhaseField};
use crate::{Error, Result};

/// Mass, momentum, and kinetic energy of `f_h` by collocated quadrature
/// (exact for the representable integrands when `k_v ≥ 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservedQuantities {
    pub mass: f64,
    pub momentum: [f64; 2],
    pub kinetic_energy: f64,
}

pub fn conserved_quantities(f: &PhaseField) -> ConservedQuantities {
    let sp = f.space();
    let n_vdofs = sp.n_vdofs();
    let n_vn = sp.n_vnodes();
    let n_xn = sp.n_xnodes();
    let partials: Vec<[f64; 4]> = f
        .data()
        .par_chunks(n_vdofs)
        .enumerate()
        .map(|(xd, chunk)| {
            let wx = sp.x_node_weight(xd % n_xn);
            let mut acc = [0.0; 4];
            for (vd, &val) in chunk.iter().enumerate() {
                let iv = vd / n_vn;
                let b = vd % n_vn;
                let w = sp.v_node_weight(b) * val;
                let v = sp.v_node_coord(iv, b);
                acc[0] += w;
                acc[1] += w * v[0];
                acc[2] += w * v[1];
                acc[3] += w * 0.5 * (v[0] * v[0] + v[1] * v[1]);
            }
            [wx * acc[0], wx * acc[1], wx * acc[2], wx * acc[3]]
        })
        .collect();
    let mut total = [0.0; 4];
    for p in partials {
        for i in 0..4 {
            total[i] += p[i];
        }
    }
    ConservedQuantities {
        mass: total[0],
        momentum: [total[1], total[2]],
        kinetic_energy: total[3],
    }
}

/// L² error of `f_h` against an exact phase-space function at time `t`,
/// with `k+3` quadrature points per direction.
pub fn l2_error_phase<F>(f: &PhaseField, exact: F, t: f64) -> f64
where
    F: Fn(f64, [f64; 2], [f64; 2]) -> f64 + Sync,
{
    let sp = f.space();
    let (kx, kv) = sp.degrees();
    let qx = gauss_rule(kx + 3).expect("rule");
    let qv = gauss_rule(kv + 3).expect("rule");
    let npx = kx + 1;
    let npv = kv + 1;
    let nqx = qx.len();
    let nqv = qv.len();
    // Basis values at quadrature points per direction.
    let vx: Vec<f64> = (0..nqx)
        .flat_map(|q| sp.xbasis().eval_all(qx.points[q]))
        .collect(); // [q * npx + a]
    let vv: Vec<f64> = (0..nqv)
        .flat_map(|q| sp.vbasis().eval_all(qv.points[q]))
        .collect();
    let n_xn = sp.n_xnodes();
    let n_vn = sp.n_vnodes();
    let n_vc = sp.n_vcells();
    let jx = 0.25 * sp.xmesh().cell_width()[0] * sp.xmesh().cell_width()[1];
    let jv = 0.25 * sp.vmesh().cell_width()[0] * sp.vmesh().cell_width()[1];

    let partials: Vec<f64> = (0..sp.n_xcells())
        .into_par_iter()
        .map(|ix| {
            let mut cloc = vec![0.0; n_xn * n_vn];
            let mut t1 = vec![0.0; n_xn * nqv * nqv];
            let mut acc = 0.0;
            for iv in 0..n_vc {
                // Gather local coefficients (strided in the global layout).
                for a in 0..n_xn {
                    for b in 0..n_vn {
                        cloc[a * n_vn + b] = f.data()[sp.index(ix, iv, a, b)];
                    }
                }
                // Contract velocity axes: t1[a][q4][q3].
                for a in 0..n_xn {
                    for q4 in 0..nqv {
                        for q3 in 0..nqv {
                            let mut s = 0.0;
                            for b2 in 0..npv {
                                for b1 in 0..npv {
                                    s += cloc[a * n_vn + b2 * npv + b1]
                                        * vv[q3 * npv + b1]
                                        * vv[q4 * npv + b2];
                                }
                            }
                            t1[a * nqv * nqv + q4 * nqv + q3] = s;
                        }
                    }
                }
                for q2 in 0..nqx {
                    for q1 in 0..nqx {
                        let xq = sp.xmesh().map_to_physical(ix, [qx.points[q1], qx.points[q2]]);
                        for q4 in 0..nqv {
                            for q3 in 0..nqv {
                                let vq = sp
                                    .vmesh()
                                    .map_to_physical(iv, [qv.points[q3], qv.points[q4]]);
                                let mut fh = 0.0;
                                for a2 in 0..npx {
                                    for a1 in 0..npx {
                                        fh += t1[(a2 * npx + a1) * nqv * nqv + q4 * nqv + q3]
                                            * vx[q1 * npx + a1]
                                            * vx[q2 * npx + a2];
                                    }
                                }
                                let d = fh - exact(t, xq, vq);
                                let w = qx.weights[q1]
                                    * qx.weights[q2]
                                    * qv.weights[q3]
                                    * qv.weights[q4]
                                    * jx
                                    * jv;
                                acc += w * d * d;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    partials.iter().sum::<f64>().sqrt()
}

/// L² error of the velocity against the exact field at time `t`.
pub fn l2_error_velocity<F>(u: &VelocityField, exact: F, t: f64) -> f64
where
    F: Fn(f64, [f64; 2]) -> [f64; 2] + Sync,
{
    let mesh = u.mesh().clone();
    let basis = u.basis().clone();
    let q = gauss_rule(basis.degree() + 3).expect("rule");
    let nq = q.len();
    let np = basis.num_nodes();
    let vx: Vec<f64> = (0..nq).flat_map(|s| basis.eval_all(q.points[s])).collect();
    let j = 0.25 * mesh.cell_width()[0] * mesh.cell_width()[1];
    let partials: Vec<f64> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|cell| {
            let mut acc = 0.0;
            for q2 in 0..nq {
                for q1 in 0..nq {
                    let xq = mesh.map_to_physical(cell, [q.points[q1], q.points[q2]]);
                    let ue = exact(t, xq);
                    let w = q.weights[q1] * q.weights[q2] * j;
                    for comp in 0..2 {
                        let mut uh = 0.0;
                        for a2 in 0..np {
                            for a1 in 0..np {
                                uh += u.component(comp)[cell * np * np + a2 * np + a1]
                                    * vx[q1 * np + a1]
                                    * vx[q2 * np + a2];
                            }
                        }
                        let d = uh - ue[comp];
                        acc += w * d * d;
                    }
                }
            }
            acc
        })
        .collect();
    partials.iter().sum::<f64>().sqrt()
}

/// L² error of the pressure after subtracting the mean of the exact field.
pub fn l2_error_pressure<F>(p: &PressureField, exact: F, t: f64) -> f64
where
    F: Fn(f64, [f64; 2]) -> f64 + Sync,
{
    let field = p.as_scalar();
    let mesh = field.mesh().clone();
    let basis = field.basis().clone();
    let q = gauss_rule(basis.degree() + 3).expect("rule");
    let nq = q.len();
    let np = basis.num_nodes();
    let vx: Vec<f64> = (0..nq).flat_map(|s| basis.eval_all(q.points[s])).collect();
    let j = 0.25 * mesh.cell_width()[0] * mesh.cell_width()[1];
    let d = mesh.domain();
    let area = (d[0][1] - d[0][0]) * (d[1][1] - d[1][0]);
    let mean_exact: f64 = (0..mesh.num_cells())
        .into_par_iter()
        .map(|cell| {
            let mut acc = 0.0;
            for q2 in 0..nq {
                for q1 in 0..nq {
                    let xq = mesh.map_to_physical(cell, [q.points[q1], q.points[q2]]);
                    acc += q.weights[q1] * q.weights[q2] * j * exact(t, xq);
                }
            }
            acc
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        / area;
    let partials: Vec<f64> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|cell| {
            let mut acc = 0.0;
            for q2 in 0..nq {
                for q1 in 0..nq {
                    let xq = mesh.map_to_physical(cell, [q.points[q1], q.points[q2]]);
                    let w = q.weights[q1] * q.weights[q2] * j;
                    let mut ph = 0.0;
                    for a2 in 0..np {
                        for a1 in 0..np {
                            ph += field.data()[cell * np * np + a2 * np + a1]
                                * vx[q1 * np + a1]
                                * vx[q2 * np + a2];
                        }
                    }
                    let diff = ph - (exact(t, xq) - mean_exact);
                    acc += w * diff * diff;
                }
            }
            acc
        })
        .collect();
    partials.iter().sum::<f64>().sqrt()
}

/// Broken energy norm `(Σ ‖∇(u-u_exact)‖² + Σ h_x⁻¹ ‖[[u_h]]‖²_F)^{1/2}`
/// (the exact field is continuous, so only `u_h` jumps).
pub fn velocity_energy_error<F, G>(u: &VelocityField, exact: F, exact_grad: G, t: f64) -> f64
where
    F: Fn(f64, [f64; 2]) -> [f64; 2] + Sync,
    G: Fn(f64, [f64; 2]) -> [[f64; 2]; 2] + Sync,
{
    let _ = exact;
    let mesh = u.mesh().clone();
    let basis = u.basis().clone();
    let q = gauss_rule(basis.degree() + 3).expect("rule");
    let nq = q.len();
    let np = basis.num_nodes();
    let vx: Vec<f64> = (0..nq).flat_map(|s| basis.eval_all(q.points[s])).collect();
    let dx: Vec<f64> = (0..nq).flat_map(|s| basis.deriv_all(q.points[s])).collect();
    let [h1, h2] = mesh.cell_width();
    let j = 0.25 * h1 * h2;
    let volume: f64 = (0..mesh.num_cells())
        .into_par_iter()
        .map(|cell| {
            let mut acc = 0.0;
            for q2 in 0..nq {
                for q1 in 0..nq {
                    let xq = mesh.map_to_physical(cell, [q.points[q1], q.points[q2]]);
                    let ge = exact_grad(t, xq);
                    let w = q.weights[q1] * q.weights[q2] * j;
                    for comp in 0..2 {
                        let mut g = [0.0; 2];
                        for a2 in 0..np {
                            for a1 in 0..np {
                                let c = u.component(comp)[cell * np * np + a2 * np + a1];
                                g[0] += c * dx[q1 * np + a1] * vx[q2 * np + a2] * 2.0 / h1;
                                g[1] += c * vx[q1 * np + a1] * dx[q2 * np + a2] * 2.0 / h2;
                            }
                        }
                        let d0 = g[0] - ge[comp][0];
                        let d1 = g[1] - ge[comp][1];
                        acc += w * (d0 * d0 + d1 * d1);
                    }
                }
            }
            acc
        })
        .sum();

    // Jump part over interior edges, h_x⁻¹-weighted.
    let eq = gauss_rule(np).expect("rule");
    let etab: Vec<f64> = (0..eq.len())
        .flat_map(|s| basis.eval_all(eq.points[s]))
        .collect();
    let tr_hi = basis.trace_hi().to_vec();
    let tr_lo = basis.trace_lo().to_vec();
    let hx = mesh.mesh_size();
    let mut jumps = 0.0;
    for edge in mesh.edges() {
        let Some(plus) = edge.plus_cell else { continue };
        let h_tan = mesh.cell_width()[1 - edge.axis];
        for s in 0..eq.len() {
            let w = eq.weights[s] * 0.5 * h_tan / hx;
            for comp in 0..2 {
                let mut um = 0.0;
                let mut up = 0.0;
                for a2 in 0..np {
                    for a1 in 0..np {
                        let (an, at) = if edge.axis == 0 { (a1, a2) } else { (a2, a1) };
                        let tan_val = etab[s * np + at];
                        um += u.component(comp)[edge.minus_cell * np * np + a2 * np + a1]
                            * tr_hi[an]
                            * tan_val;
                        up += u.component(comp)[plus * np * np + a2 * np + a1]
                            * tr_lo[an]
                            * tan_val;
                    }
                }
                jumps += w * (um - up) * (um - up);
            }
        }
    }
    (volume + jumps).sqrt()
}

/// One row of a mesh-refinement study.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    pub h: f64,
    pub err_f: f64,
    pub err_u: f64,
    pub err_p: f64,
    pub eoc_f: Option<f64>,
    pub eoc_u: Option<f64>,
    pub eoc_p: Option<f64>,
}

/// Per-mesh errors and experimental orders of convergence.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,errL2f,errL2u,errL2p,eoc_f,eoc_u,eoc_p\n");
        for r in &self.rows {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}\n",
                r.h,
                r.err_f,
                r.err_u,
                r.err_p,
                fmt(r.eoc_f),
                fmt(r.eoc_u),
                fmt(r.eoc_p)
            ));
        }
        out
    }

    /// EOC of the finest mesh pair, per column `(f, u, p)`.
    pub fn final_eoc(&self) -> Option<(f64, f64, f64)> {
        let last = self.rows.last()?;
        Some((last.eoc_f?, last.eoc_u?, last.eoc_p?))
    }
}

/// Build the table from `(h, errL2f, errL2u, errL2p)` rows; `h` must halve
/// between consecutive rows.
pub fn eoc(points: &[(f64, f64, f64, f64)]) -> Result<ConvergenceTable> {
    let mut rows = Vec::with_capacity(points.len());
    for (i, &(h, ef, eu, ep)) in points.iter().enumerate() {
        let mut row = ConvergenceRow {
            h,
            err_f: ef,
            err_u: eu,
            err_p: ep,
            eoc_f: None,
            eoc_u: None,
            eoc_p: None,
        };
        if i > 0 {
            let (hp, efp, eup, epp) = points[i - 1];
            if (hp / h - 2.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "mesh sequence must halve h: got {hp} then {h}"
                )));
            }
            row.eoc_f = Some((efp / ef).log2());
            row.eoc_u = Some((eup / eu).log2());
            row.eoc_p = Some((epp / ep).log2());
        }
        rows.push(row);
    }
    Ok(ConvergenceTable { rows })
}

/// Instantaneous residual of the discrete energy balance at a state whose
/// `(u, p)` solve the Stokes system for `f`'s own moments:
/// `⟨rate, |v|²/2⟩ + a_h(u,u) + s_h(p,p) + ∫|u-v|² f`, normalized by the
/// kinetic energy. Requires `k_v ≥ 2` so `|v|²/2` is a test function.
pub fn energy_balance_residual(
    f: &PhaseField,
    u: &VelocityField,
    p: &PressureField,
    ops: &StokesOperators,
) -> Result<f64> {
    let sp = f.space();
    if sp.degrees().1 < 2 {
        return Err(Error::InvalidConfig(
            "energy balance requires k_v >= 2".into(),
        ));
    }
    let rate = apply_semi_discrete(u, f);
    let n_vn = sp.n_vnodes();
    let n_xn = sp.n_xnodes();
    let mut t1 = 0.0;
    let mut kinetic = 0.0;
    for (xd, (rchunk, fchunk)) in rate
        .data()
        .chunks(sp.n_vdofs())
        .zip(f.data().chunks(sp.n_vdofs()))
        .enumerate()
    {
        let wx = sp.x_node_weight(xd % n_xn);
        for (vd, (&rv, &fv)) in rchunk.iter().zip(fchunk).enumerate() {
            let v = sp.v_node_coord(vd / n_vn, vd % n_vn);
            let e = 0.5 * (v[0] * v[0] + v[1] * v[1]);
            let w = wx * sp.v_node_weight(vd % n_vn);
            t1 += w * rv * e;
            kinetic += w * fv * e;
        }
    }
    let t2 = ops.sip_energy(u);
    let t3 = ops.stab_energy(p);

    // ∫ |u - v|² f with the degree-3k volume rule in x (u nodal in x as in
    // the transport operator) and collocated v nodes.
    let quad = crate::stokes::volume_quadrature(sp.xbasis())?;
    let nq = quad.len();
    let npx = sp.xbasis().num_nodes();
    let vx: Vec<f64> = (0..nq)
        .flat_map(|s| sp.xbasis().eval_all(quad.points[s]))
        .collect();
    let jx = 0.25 * sp.xmesh().cell_width()[0] * sp.xmesh().cell_width()[1];
    let mut t4 = 0.0;
    for ix in 0..sp.n_xcells() {
        for q2 in 0..nq {
            for q1 in 0..nq {
                let w = quad.weights[q1] * quad.weights[q2] * jx;
                let mut uq = [0.0; 2];
                for a2 in 0..npx {
                    for a1 in 0..npx {
                        let tv = vx[q1 * npx + a1] * vx[q2 * npx + a2];
                        let dof = ix * n_xn + a2 * npx + a1;
                        uq[0] += u.component(0)[dof] * tv;
                        uq[1] += u.component(1)[dof] * tv;
                    }
                }
                for iv in 0..sp.n_vcells() {
                    for b in 0..n_vn {
                        let mut fq = 0.0;
                        for a2 in 0..npx {
                            for a1 in 0..npx {
                                fq += f.data()[sp.index(ix, iv, a2 * npx + a1, b)]
                                    * vx[q1 * npx + a1]
                                    * vx[q2 * npx + a2];
                            }
                        }
                        let v = sp.v_node_coord(iv, b);
                        let d0 = uq[0] - v[0];
                        let d1 = uq[1] - v[1];
                        t4 += w * sp.v_node_weight(b) * fq * (d0 * d0 + d1 * d1);
                    }
                }
            }
        }
    }
    let norm = kinetic.abs().max(f64::MIN_POSITIVE);
    Ok((t1 + t2 + t3 + t4).abs() / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, build_phase_mesh};
    use crate::vlasov::{PhaseField, PhaseSpace};
    use std::sync::Arc;

    fn space(nx: usize, nv: usize, kx: usize, kv: usize) -> Arc<PhaseSpace> {
        let xm = build_mesh([[0.0, 1.0], [0.0, 1.0]], [nx, nx], [true, true]).unwrap();
        let vm = build_mesh([[-1.0, 1.0], [-1.0, 1.0]], [nv, nv], [false, false]).unwrap();
        Arc::new(PhaseSpace::new(build_phase_mesh(xm, vm).unwrap(), kx, kv).unwrap())
    }

    #[test]
    fn conserved_quantities_of_simple_fields() {
        let sp = space(2, 4, 1, 1);
        let zero = PhaseField::zeros(sp.clone());
        let c = conserved_quantities(&zero);
        assert_eq!(c.mass, 0.0);
        assert_eq!(c.momentum, [0.0, 0.0]);
        assert_eq!(c.kinetic_energy, 0.0);

        let mut one = PhaseField::zeros(sp);
        one.data_mut().fill(1.0);
        let c = conserved_quantities(&one);
        assert!((c.mass - 4.0).abs() <= 1e-13);
        assert!(c.momentum[0].abs() <= 1e-13 && c.momentum[1].abs() <= 1e-13);
        assert!((c.kinetic_energy - 4.0 / 3.0).abs() <= 1e-13);
    }

    #[test]
    fn conserved_quantities_match_dense_oracle() {
        let sp = space(2, 2, 1, 2);
        let mut f = PhaseField::zeros(sp.clone());
        let mut seed = 0x9e3779b97f4a7c15u64;
        for v in f.data_mut() {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            *v = (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        }
        let got = conserved_quantities(&f);
        // Dense oracle: loop with explicit weights in a different order.
        let mut mass = 0.0;
        let mut mom = [0.0; 2];
        let mut en = 0.0;
        for iv in 0..sp.n_vcells() {
            for b in 0..sp.n_vnodes() {
                let v = sp.v_node_coord(iv, b);
                for ix in 0..sp.n_xcells() {
                    for a in 0..sp.n_xnodes() {
                        let w = sp.x_node_weight(a) * sp.v_node_weight(b);
                        let val = f.get(ix, iv, a, b);
                        mass += w * val;
                        mom[0] += w * val * v[0];
                        mom[1] += w * val * v[1];
                        en += w * val * 0.5 * (v[0] * v[0] + v[1] * v[1]);
                    }
                }
            }
        }
        assert!((got.mass - mass).abs() <= 1e-13);
        assert!((got.momentum[0] - mom[0]).abs() <= 1e-13);
        assert!((got.momentum[1] - mom[1]).abs() <= 1e-13);
        assert!((got.kinetic_energy - en).abs() <= 1e-13);
    }

    #[test]
    fn phase_error_of_exact_representation_is_zero() {
        let sp = space(2, 2, 1, 1);
        let f = crate::vlasov::project_initial(&sp, |x, v| {
            0.3 + x[0] - 0.5 * x[1] + v[0] * 0.25 - v[1]
        })
        .unwrap();
        let err = l2_error_phase(
            &f,
            |_t, x, v| 0.3 + x[0] - 0.5 * x[1] + v[0] * 0.25 - v[1],
            0.0,
        );
        assert!(err <= 1e-13, "err = {err}");
        // And against zero the error is the norm of the exact function.
        let zero = PhaseField::zeros(sp);
        let err = l2_error_phase(&zero, |_t, _x, v| v[0], 0.0);
        // ‖v1‖ over [0,1]²x[-1,1]²: sqrt(∫ v1²) = sqrt((2/3)*2) = sqrt(4/3).
        assert!((err - (4.0f64 / 3.0).sqrt()).abs() <= 1e-13);
    }

    #[test]
    fn eoc_of_clean_ratios() {
        let t = eoc(&[(0.5, 1.0, 1.0, 1.0), (0.25, 0.25, 0.125, 0.5)]).unwrap();
        let last = t.rows.last().unwrap();
        assert!((last.eoc_f.unwrap() - 2.0).abs() <= 1e-12);
        assert!((last.eoc_u.unwrap() - 3.0).abs() <= 1e-12);
        assert!((last.eoc_p.unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn eoc_rejects_non_halving_sequence() {
        assert!(eoc(&[(0.5, 1.0, 1.0, 1.0), (0.3, 0.5, 0.5, 0.5)]).is_err());
    }

    #[test]
    fn energy_balance_requires_kv_at_least_two() {
        let sp = space(2, 2, 1, 1);
        let f = PhaseField::zeros(sp.clone());
        let basis = sp.xbasis().clone();
        let mesh = sp.xmesh().clone();
        let ops = StokesOperators::new(mesh.clone(), basis.clone(), 10.0).unwrap();
        let u = VelocityField::zeros(mesh.clone(), basis.clone());
        let p = PressureField::new(crate::stokes::XScalarField::zeros(mesh, basis));
        assert!(energy_balance_residual(&f, &u, &p, &ops).is_err());
    }
}
