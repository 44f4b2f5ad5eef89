//! Discrete Vlasov transport on the phase space `Ω_x × Ω_v`: the upwind
//! numerical fluxes, the dimension-split transport operators, velocity
//! moments, and the initial L² projection.
//!
//! Both split operators reduce to 1D conservative upwind dG sweeps along
//! mesh lines: for a fixed velocity node the `x`-advection speed is the
//! constant node velocity, and for a fixed spatial node the `v`-advection
//! speed is `u(x_node) - v`, affine along each velocity axis. The collocated
//! Gauss rule integrates every term of the split forms exactly, so the
//! sweeps below are the assembled weak operators, not approximations of
//! them.

use std::sync::Arc;

use rayon::prelude::*;

use crate::basis::NodalBasis1D;
use crate::mesh::{CartesianMesh2D, PhaseMesh};
use crate::stokes::{VelocityField, XScalarField};
use crate::{Error, Result};

/// Discretization context shared by phase-space fields: meshes, bases, and
/// the node/weight tables the transport kernels index into. Immutable after
/// construction and freely shareable across threads.
#[derive(Debug)]
pub struct PhaseSpace {
    xmesh: Arc<CartesianMesh2D>,
    vmesh: Arc<CartesianMesh2D>,
    xbasis: Arc<NodalBasis1D>,
    vbasis: Arc<NodalBasis1D>,
    mesh_size: f64,
    /// Physical node coordinates along each v axis: `[axis][cell * npv + j]`.
    vnode_coords: [Vec<f64>; 2],
    /// Physical interface coordinates along each v axis: `[axis][cell]`,
    /// length `cells + 1`.
    vedge_coords: [Vec<f64>; 2],
    /// 2D quadrature weight (including Jacobian) per x node within a cell.
    xnode_weights: Vec<f64>,
    /// Same per v node.
    vnode_weights: Vec<f64>,
    /// Velocity coordinates per (v-cell, v-node) pair, flattened.
    vcoord1: Vec<f64>,
    vcoord2: Vec<f64>,
}

impl PhaseSpace {
    pub fn new(mesh: PhaseMesh, kx: usize, kv: usize) -> Result<Self> {
        let xbasis = Arc::new(NodalBasis1D::new(kx)?);
        let vbasis = Arc::new(NodalBasis1D::new(kv)?);
        let mesh_size = mesh.mesh_size();
        let xmesh = Arc::new(mesh.xmesh);
        let vmesh = Arc::new(mesh.vmesh);

        let npv = kv + 1;
        let mut vnode_coords = [Vec::new(), Vec::new()];
        let mut vedge_coords = [Vec::new(), Vec::new()];
        for ax in 0..2 {
            let n = vmesh.cells_per_axis()[ax];
            let h = vmesh.cell_width()[ax];
            let a = vmesh.domain()[ax][0];
            let mut nodes = Vec::with_capacity(n * npv);
            for c in 0..n {
                let origin = a + c as f64 * h;
                for &xi in vbasis.nodes() {
                    nodes.push(origin + 0.5 * (xi + 1.0) * h);
                }
            }
            vnode_coords[ax] = nodes;
            vedge_coords[ax] = (0..=n).map(|c| a + c as f64 * h).collect();
        }

        let jx = 0.25 * xmesh.cell_width()[0] * xmesh.cell_width()[1];
        let jv = 0.25 * vmesh.cell_width()[0] * vmesh.cell_width()[1];
        let npx = kx + 1;
        let wx = xbasis.node_weights().to_vec();
        let wv = vbasis.node_weights().to_vec();
        let mut xnode_weights = vec![0.0; npx * npx];
        for a2 in 0..npx {
            for a1 in 0..npx {
                xnode_weights[a2 * npx + a1] = wx[a1] * wx[a2] * jx;
            }
        }
        let mut vnode_weights = vec![0.0; npv * npv];
        for b2 in 0..npv {
            for b1 in 0..npv {
                vnode_weights[b2 * npv + b1] = wv[b1] * wv[b2] * jv;
            }
        }

        let [nv0, nv1] = vmesh.cells_per_axis();
        let n_vn = npv * npv;
        let mut vcoord1 = vec![0.0; nv0 * nv1 * n_vn];
        let mut vcoord2 = vec![0.0; nv0 * nv1 * n_vn];
        for j2 in 0..nv1 {
            for j1 in 0..nv0 {
                let iv = j2 * nv0 + j1;
                for b2 in 0..npv {
                    for b1 in 0..npv {
                        let b = b2 * npv + b1;
                        vcoord1[iv * n_vn + b] = vnode_coords[0][j1 * npv + b1];
                        vcoord2[iv * n_vn + b] = vnode_coords[1][j2 * npv + b2];
                    }
                }
            }
        }

        Ok(Self {
            xmesh,
            vmesh,
            xbasis,
            vbasis,
            mesh_size,
            vnode_coords,
            vedge_coords,
            xnode_weights,
            vnode_weights,
            vcoord1,
            vcoord2,
        })
    }

    pub fn xmesh(&self) -> &Arc<CartesianMesh2D> {
        &self.xmesh
    }

    pub fn vmesh(&self) -> &Arc<CartesianMesh2D> {
        &self.vmesh
    }

    pub fn xbasis(&self) -> &Arc<NodalBasis1D> {
        &self.xbasis
    }

    pub fn vbasis(&self) -> &Arc<NodalBasis1D> {
        &self.vbasis
    }

    /// `h = max(h_x, h_v)` of the underlying phase mesh.
    pub fn mesh_size(&self) -> f64 {
        self.mesh_size
    }

    pub fn degrees(&self) -> (usize, usize) {
        (self.xbasis.degree(), self.vbasis.degree())
    }

    pub fn n_xcells(&self) -> usize {
        self.xmesh.num_cells()
    }

    pub fn n_vcells(&self) -> usize {
        self.vmesh.num_cells()
    }

    pub fn n_xnodes(&self) -> usize {
        self.xbasis.num_nodes() * self.xbasis.num_nodes()
    }

    pub fn n_vnodes(&self) -> usize {
        self.vbasis.num_nodes() * self.vbasis.num_nodes()
    }

    pub fn n_xdofs(&self) -> usize {
        self.n_xcells() * self.n_xnodes()
    }

    pub fn n_vdofs(&self) -> usize {
        self.n_vcells() * self.n_vnodes()
    }

    pub fn n_dofs(&self) -> usize {
        self.n_xdofs() * self.n_vdofs()
    }

    /// Flat index of coefficient `(x-cell, v-cell, x-node, v-node)`.
    /// Storage is x-dof major: `((ix * n_xn + a) * n_vc + iv) * n_vn + b`.
    pub fn index(&self, ix: usize, iv: usize, a: usize, b: usize) -> usize {
        ((ix * self.n_xnodes() + a) * self.n_vcells() + iv) * self.n_vnodes() + b
    }

    /// Physical coordinates of x node `a` in x cell `ix`.
    pub fn x_node_coord(&self, ix: usize, a: usize) -> [f64; 2] {
        let npx = self.xbasis.num_nodes();
        let xi = [
            self.xbasis.nodes()[a % npx],
            self.xbasis.nodes()[a / npx],
        ];
        self.xmesh.map_to_physical(ix, xi)
    }

    /// Physical coordinates of v node `b` in v cell `iv`.
    pub fn v_node_coord(&self, iv: usize, b: usize) -> [f64; 2] {
        let n_vn = self.n_vnodes();
        [
            self.vcoord1[iv * n_vn + b],
            self.vcoord2[iv * n_vn + b],
        ]
    }

    /// Quadrature weight (with Jacobian) of x node `a` within any x cell.
    pub fn x_node_weight(&self, a: usize) -> f64 {
        self.xnode_weights[a]
    }

    pub fn v_node_weight(&self, b: usize) -> f64 {
        self.vnode_weights[b]
    }

    /// Largest velocity magnitude over `Ω_v` (attained at a corner).
    pub fn max_speed(&self) -> f64 {
        let d = self.vmesh.domain();
        let m0 = d[0][0].abs().max(d[0][1].abs());
        let m1 = d[1][0].abs().max(d[1][1].abs());
        (m0 * m0 + m1 * m1).sqrt()
    }
}

/// Nodal dG coefficients of `f_h` on the product mesh.
#[derive(Debug, Clone)]
pub struct PhaseField {
    space: Arc<PhaseSpace>,
    data: Vec<f64>,
}

impl PhaseField {
    pub fn zeros(space: Arc<PhaseSpace>) -> Self {
        let n = space.n_dofs();
        Self {
            space,
            data: vec![0.0; n],
        }
    }

    pub fn space(&self) -> &Arc<PhaseSpace> {
        &self.space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, ix: usize, iv: usize, a: usize, b: usize) -> f64 {
        self.data[self.space.index(ix, iv, a, b)]
    }

    pub fn set(&mut self, ix: usize, iv: usize, a: usize, b: usize, value: f64) {
        let i = self.space.index(ix, iv, a, b);
        self.data[i] = value;
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &PhaseField) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += scale * o;
        }
    }

    /// Exact L² norm over the phase space (diagonal mass).
    pub fn l2_norm(&self) -> f64 {
        let sp = &self.space;
        let n_vdofs = sp.n_vdofs();
        let n_vn = sp.n_vnodes();
        let n_xn = sp.n_xnodes();
        let mut acc = 0.0;
        for (xd, chunk) in self.data.chunks_exact(n_vdofs).enumerate() {
            let wx = sp.x_node_weight(xd % n_xn);
            let mut cell_acc = 0.0;
            for (vd, &val) in chunk.iter().enumerate() {
                cell_acc += sp.v_node_weight(vd % n_vn) * val * val;
            }
            acc += wx * cell_acc;
        }
        acc.sqrt()
    }
}

/// Zeroth and first velocity moments of `f_h` as degree-`k_x` dG fields on
/// the x mesh. The macroscopic velocity `V_h` is never formed; only
/// `ρ_h` and `(ρV)_h` are produced.
#[derive(Debug, Clone)]
pub struct MomentPair {
    pub rho: XScalarField,
    pub rho_v: [XScalarField; 2],
}

/// Upwind flux for transport speed `a_n` normal to an edge:
/// `a_n {f} + |a_n|/2 (f⁻ - f⁺)`.
#[inline]
pub fn upwind_flux_scalar(a_n: f64, f_minus: f64, f_plus: f64) -> f64 {
    0.5 * a_n * (f_minus + f_plus) + 0.5 * a_n.abs() * (f_minus - f_plus)
}

/// Upwind flux `{v f}_α · n` across an x edge with unit normal `n`.
pub fn upwind_flux_x(f_minus: f64, f_plus: f64, v: [f64; 2], n: [f64; 2]) -> f64 {
    upwind_flux_scalar(v[0] * n[0] + v[1] * n[1], f_minus, f_plus)
}

/// Upwind flux `{(u - v) f}_β · n` across a v edge.
pub fn upwind_flux_v(f_minus: f64, f_plus: f64, u: [f64; 2], v: [f64; 2], n: [f64; 2]) -> f64 {
    let a_n = (u[0] - v[0]) * n[0] + (u[1] - v[1]) * n[1];
    upwind_flux_scalar(a_n, f_minus, f_plus)
}

/// Transport speed along one 1D line of cells.
enum LineSpeed<'a> {
    Constant(f64),
    /// Node speeds `[cell * np + j]` and interface speeds `[cell]`
    /// (length `cells + 1`).
    Tables { nodes: &'a [f64], edges: &'a [f64] },
}

/// End treatment of a non-periodic line: the exterior traces seen by the
/// upwind flux at the two domain boundaries. Zero realizes the
/// compact-support convention (no inflow, free outflow); manufactured runs
/// substitute exact-solution traces.
#[derive(Clone, Copy)]
enum LineBoundary {
    Periodic,
    Exterior(f64, f64),
}

/// One conservative upwind dG sweep along a line of `n_cells` cells of width
/// `h`. Adds the mass-inverted weak rate of `∂_t f + ∂_s(a f) = 0` into
/// `rate`.
fn line_sweep(
    basis: &NodalBasis1D,
    n_cells: usize,
    h: f64,
    boundary: LineBoundary,
    speed: &LineSpeed,
    f: &[f64],
    rate: &mut [f64],
    fhat: &mut [f64],
) {
    let np = basis.num_nodes();
    debug_assert_eq!(f.len(), n_cells * np);
    debug_assert_eq!(fhat.len(), n_cells + 1);
    let diff = basis.diff_matrix();
    let w = basis.node_weights();
    let tl = basis.trace_lo();
    let th = basis.trace_hi();

    let edge_speed = |e: usize| match speed {
        LineSpeed::Constant(a) => *a,
        LineSpeed::Tables { edges, .. } => edges[e],
    };

    // Single-valued interface fluxes, oriented left-to-right.
    for e in 0..=n_cells {
        let (fm, fp) = match boundary {
            LineBoundary::Periodic => {
                let lc = (e + n_cells - 1) % n_cells;
                let rc = e % n_cells;
                (
                    trace(&f[lc * np..(lc + 1) * np], th),
                    trace(&f[rc * np..(rc + 1) * np], tl),
                )
            }
            LineBoundary::Exterior(left, right) => {
                let fm = if e == 0 {
                    left
                } else {
                    trace(&f[(e - 1) * np..e * np], th)
                };
                let fp = if e == n_cells {
                    right
                } else {
                    trace(&f[e * np..(e + 1) * np], tl)
                };
                (fm, fp)
            }
        };
        fhat[e] = upwind_flux_scalar(edge_speed(e), fm, fp);
    }

    let inv_j = 2.0 / h;
    for c in 0..n_cells {
        let fc = &f[c * np..(c + 1) * np];
        let rc = &mut rate[c * np..(c + 1) * np];
        for i in 0..np {
            // Volume: Σ_q w_q a(x_q) f_q l_i'(x_q); exact for affine speeds.
            let mut vol = 0.0;
            match speed {
                LineSpeed::Constant(a) => {
                    for q in 0..np {
                        vol += w[q] * fc[q] * diff[q * np + i];
                    }
                    vol *= *a;
                }
                LineSpeed::Tables { nodes, .. } => {
                    for q in 0..np {
                        vol += w[q] * nodes[c * np + q] * fc[q] * diff[q * np + i];
                    }
                }
            }
            let bdry = fhat[c + 1] * th[i] - fhat[c] * tl[i];
            rc[i] += (vol - bdry) * inv_j / w[i];
        }
    }
}

#[inline]
fn trace(cell: &[f64], t: &[f64]) -> f64 {
    cell.iter().zip(t).map(|(f, t)| f * t).sum()
}

/// Weak rate of the x-transport `∂_t f + v · ∇_x f = 0`: for every test
/// function the result satisfies `(r, Ψ) = -B_h^v(f, Ψ)`, assembled per
/// velocity node as constant-coefficient advection with periodic fluxes.
pub fn apply_x_transport(f: &PhaseField) -> PhaseField {
    x_transport_impl(f, None)
}

/// The same x-transport with manufactured inflow traces at the torus seam:
/// the exterior state at the domain ends is the exact solution at time `t`
/// instead of the wrapped-around neighbor. Used by verification runs whose
/// exact solution is not 1-periodic in `x` (it would be discontinuous across
/// the seam, and the periodic problem would converge to a different weak
/// solution).
pub fn apply_x_transport_with_inflow<F>(f: &PhaseField, t: f64, exact: F) -> PhaseField
where
    F: Fn(f64, [f64; 2], [f64; 2]) -> f64 + Sync,
{
    x_transport_impl(f, Some((t, &exact)))
}

type InflowRef<'a> = (f64, &'a (dyn Fn(f64, [f64; 2], [f64; 2]) -> f64 + Sync));

fn x_transport_impl(f: &PhaseField, inflow: Option<InflowRef>) -> PhaseField {
    let sp = f.space().clone();
    let n_xdofs = sp.n_xdofs();
    let n_xn = sp.n_xnodes();
    let n_vn = sp.n_vnodes();
    let npx = sp.xbasis.num_nodes();
    let [nx0, nx1] = sp.xmesh.cells_per_axis();
    let [hx0, hx1] = sp.xmesh.cell_width();

    // Transpose to v-dof-major order so each task owns a contiguous slab.
    let mut vmajor = vec![0.0; f.data.len()];
    transpose_to_v_major(&sp, &f.data, &mut vmajor);
    let mut rate_vmajor = vec![0.0; f.data.len()];

    rate_vmajor
        .par_chunks_mut(n_xdofs)
        .zip(vmajor.par_chunks(n_xdofs))
        .enumerate()
        .for_each_init(
            || {
                (
                    vec![0.0; nx0.max(nx1) * npx],
                    vec![0.0; nx0.max(nx1) * npx],
                    vec![0.0; nx0.max(nx1) + 1],
                )
            },
            |(line, lrate, fhat), (vd, (rslab, fslab))| {
                let iv = vd / n_vn;
                let b = vd % n_vn;
                let v = sp.v_node_coord(iv, b);
                let dom = sp.xmesh.domain();
                // Axis 0 lines: fixed (x-cell row i2, node a2).
                for i2 in 0..nx1 {
                    for a2 in 0..npx {
                        for i1 in 0..nx0 {
                            let base = (i2 * nx0 + i1) * n_xn + a2 * npx;
                            for a1 in 0..npx {
                                line[i1 * npx + a1] = fslab[base + a1];
                            }
                        }
                        let boundary = match inflow {
                            None => LineBoundary::Periodic,
                            Some((t, exact)) => {
                                let y = dom[1][0]
                                    + (i2 as f64 + 0.5 * (sp.xbasis.nodes()[a2] + 1.0)) * hx1;
                                LineBoundary::Exterior(
                                    exact(t, [dom[0][0], y], v),
                                    exact(t, [dom[0][1], y], v),
                                )
                            }
                        };
                        let l = &mut lrate[..nx0 * npx];
                        l.fill(0.0);
                        line_sweep(
                            &sp.xbasis,
                            nx0,
                            hx0,
                            boundary,
                            &LineSpeed::Constant(v[0]),
                            &line[..nx0 * npx],
                            l,
                            &mut fhat[..nx0 + 1],
                        );
                        for i1 in 0..nx0 {
                            let base = (i2 * nx0 + i1) * n_xn + a2 * npx;
                            for a1 in 0..npx {
                                rslab[base + a1] += l[i1 * npx + a1];
                            }
                        }
                    }
                }
                // Axis 1 lines: fixed (x-cell column i1, node a1).
                for i1 in 0..nx0 {
                    for a1 in 0..npx {
                        for i2 in 0..nx1 {
                            let base = (i2 * nx0 + i1) * n_xn + a1;
                            for a2 in 0..npx {
                                line[i2 * npx + a2] = fslab[base + a2 * npx];
                            }
                        }
                        let boundary = match inflow {
                            None => LineBoundary::Periodic,
                            Some((t, exact)) => {
                                let x = dom[0][0]
                                    + (i1 as f64 + 0.5 * (sp.xbasis.nodes()[a1] + 1.0)) * hx0;
                                LineBoundary::Exterior(
                                    exact(t, [x, dom[1][0]], v),
                                    exact(t, [x, dom[1][1]], v),
                                )
                            }
                        };
                        let l = &mut lrate[..nx1 * npx];
                        l.fill(0.0);
                        line_sweep(
                            &sp.xbasis,
                            nx1,
                            hx1,
                            boundary,
                            &LineSpeed::Constant(v[1]),
                            &line[..nx1 * npx],
                            l,
                            &mut fhat[..nx1 + 1],
                        );
                        for i2 in 0..nx1 {
                            let base = (i2 * nx0 + i1) * n_xn + a1;
                            for a2 in 0..npx {
                                rslab[base + a2 * npx] += l[i2 * npx + a2];
                            }
                        }
                    }
                }
            },
        );

    let mut rate = PhaseField::zeros(sp.clone());
    transpose_from_v_major(&sp, &rate_vmajor, &mut rate.data);
    rate
}

fn transpose_to_v_major(sp: &PhaseSpace, xmajor: &[f64], vmajor: &mut [f64]) {
    let n_xdofs = sp.n_xdofs();
    let n_vdofs = sp.n_vdofs();
    vmajor
        .par_chunks_mut(n_xdofs)
        .enumerate()
        .for_each(|(vd, slab)| {
            for (xd, s) in slab.iter_mut().enumerate() {
                *s = xmajor[xd * n_vdofs + vd];
            }
        });
}

fn transpose_from_v_major(sp: &PhaseSpace, vmajor: &[f64], xmajor: &mut [f64]) {
    let n_xdofs = sp.n_xdofs();
    let n_vdofs = sp.n_vdofs();
    xmajor
        .par_chunks_mut(n_vdofs)
        .enumerate()
        .for_each(|(xd, slab)| {
            for (vd, s) in slab.iter_mut().enumerate() {
                *s = vmajor[vd * n_xdofs + xd];
            }
        });
}

/// Weak rate of the v-transport `∂_t f + ∇_v · ((u - v) f) = 0` with the
/// fluid velocity frozen at each spatial node and zero inflow at `∂Ω_v`.
pub fn apply_v_transport(u: &VelocityField, f: &PhaseField) -> PhaseField {
    let sp = f.space().clone();
    assert_eq!(
        u.dofs(),
        sp.n_xdofs(),
        "velocity field does not match the phase-space x discretization"
    );
    let n_vdofs = sp.n_vdofs();
    let n_vn = sp.n_vnodes();
    let npv = sp.vbasis.num_nodes();
    let [nv0, nv1] = sp.vmesh.cells_per_axis();
    let [hv0, hv1] = sp.vmesh.cell_width();

    let mut rate = PhaseField::zeros(sp.clone());
    rate.data
        .par_chunks_mut(n_vdofs)
        .zip(f.data.par_chunks(n_vdofs))
        .enumerate()
        .for_each_init(
            || {
                (
                    vec![0.0; nv0.max(nv1) * npv],
                    vec![0.0; nv0.max(nv1) * npv],
                    vec![0.0; nv0.max(nv1) + 1],
                    vec![0.0; nv0.max(nv1) * npv],
                    vec![0.0; nv0.max(nv1) + 1],
                )
            },
            |(line, lrate, fhat, anodes, aedges), (xd, (rslab, fslab))| {
                let uc = [u.component(0)[xd], u.component(1)[xd]];
                for ax in 0..2 {
                    let (n_along, h) = if ax == 0 { (nv0, hv0) } else { (nv1, hv1) };
                    for (i, c) in sp.vnode_coords[ax].iter().enumerate() {
                        anodes[i] = uc[ax] - c;
                    }
                    for (i, c) in sp.vedge_coords[ax].iter().enumerate() {
                        aedges[i] = uc[ax] - c;
                    }
                    let speed = LineSpeed::Tables {
                        nodes: &anodes[..n_along * npv],
                        edges: &aedges[..n_along + 1],
                    };
                    let n_trans = if ax == 0 { nv1 } else { nv0 };
                    for jt in 0..n_trans {
                        for bt in 0..npv {
                            for ja in 0..n_along {
                                for ba in 0..npv {
                                    let (iv, b) = if ax == 0 {
                                        (jt * nv0 + ja, bt * npv + ba)
                                    } else {
                                        (ja * nv0 + jt, ba * npv + bt)
                                    };
                                    line[ja * npv + ba] = fslab[iv * n_vn + b];
                                }
                            }
                            let l = &mut lrate[..n_along * npv];
                            l.fill(0.0);
                            line_sweep(
                                &sp.vbasis,
                                n_along,
                                h,
                                LineBoundary::Exterior(0.0, 0.0),
                                &speed,
                                &line[..n_along * npv],
                                l,
                                &mut fhat[..n_along + 1],
                            );
                            for ja in 0..n_along {
                                for ba in 0..npv {
                                    let (iv, b) = if ax == 0 {
                                        (jt * nv0 + ja, bt * npv + ba)
                                    } else {
                                        (ja * nv0 + jt, ba * npv + bt)
                                    };
                                    rslab[iv * n_vn + b] += l[ja * npv + ba];
                                }
                            }
                        }
                    }
                }
            },
        );
    rate
}

/// The full semi-discrete transport rate: sum of the two split operators,
/// which partition `B_{h,R}`.
pub fn apply_semi_discrete(u: &VelocityField, f: &PhaseField) -> PhaseField {
    let mut rate = apply_x_transport(f);
    let rv = apply_v_transport(u, f);
    rate.axpy(1.0, &rv);
    rate
}

/// Element-wise L² projection of the initial datum onto `Z_h`, with
/// `k_x + 3` (resp. `k_v + 3`) Gauss points per spatial (velocity)
/// direction to resolve Gaussian-weighted data.
pub fn project_initial<F>(space: &Arc<PhaseSpace>, f0: F) -> Result<PhaseField>
where
    F: Fn([f64; 2], [f64; 2]) -> f64 + Sync,
{
    let (kx, kv) = space.degrees();
    project_with_points(space, f0, kx + 3, kv + 3)
}

/// Projection with explicit quadrature sizes (testing hook).
pub fn project_with_points<F>(
    space: &Arc<PhaseSpace>,
    f0: F,
    nqx: usize,
    nqv: usize,
) -> Result<PhaseField>
where
    F: Fn([f64; 2], [f64; 2]) -> f64 + Sync,
{
    let qx = crate::basis::gauss_rule(nqx)?;
    let qv = crate::basis::gauss_rule(nqv)?;
    let npx = space.xbasis.num_nodes();
    let npv = space.vbasis.num_nodes();
    // P[a][q] = w_q l_a(ξ_q) / w_a^node: projection factor per direction.
    let px = projection_factors(&space.xbasis, &qx);
    let pv = projection_factors(&space.vbasis, &qv);

    let n_xn = space.n_xnodes();
    let n_vn = space.n_vnodes();
    let n_vc = space.n_vcells();
    let n_vdofs = space.n_vdofs();
    let [nx0, _] = space.xmesh.cells_per_axis();
    let xmesh = space.xmesh.clone();
    let vmesh = space.vmesh.clone();

    let mut field = PhaseField::zeros(space.clone());
    field
        .data
        .par_chunks_mut(n_xn * n_vdofs)
        .enumerate()
        .for_each_init(
            || vec![0.0; nqx * nqx * nqv * nqv],
            |evals, (ix, xcell_chunk)| {
                let xo = xmesh.cell_origin(ix);
                let [hx0, hx1] = xmesh.cell_width();
                let xq: Vec<f64> = qx.points.iter().map(|t| xo[0] + 0.5 * (t + 1.0) * hx0).collect();
                let yq: Vec<f64> = qx.points.iter().map(|t| xo[1] + 0.5 * (t + 1.0) * hx1).collect();
                for iv in 0..n_vc {
                    let vo = vmesh.cell_origin(iv);
                    let [hv0, hv1] = vmesh.cell_width();
                    let vq: Vec<f64> =
                        qv.points.iter().map(|t| vo[0] + 0.5 * (t + 1.0) * hv0).collect();
                    let wq: Vec<f64> =
                        qv.points.iter().map(|t| vo[1] + 0.5 * (t + 1.0) * hv1).collect();
                    let mut p = 0;
                    for q2 in 0..nqx {
                        for q1 in 0..nqx {
                            for q4 in 0..nqv {
                                for q3 in 0..nqv {
                                    evals[p] = f0([xq[q1], yq[q2]], [vq[q3], wq[q4]]);
                                    p += 1;
                                }
                            }
                        }
                    }
                    for a2 in 0..npx {
                        for a1 in 0..npx {
                            let a = a2 * npx + a1;
                            for b2 in 0..npv {
                                for b1 in 0..npv {
                                    let b = b2 * npv + b1;
                                    let mut acc = 0.0;
                                    let mut p = 0;
                                    for q2 in 0..nqx {
                                        let f2 = px[a2 * nqx + q2];
                                        for q1 in 0..nqx {
                                            let f12 = f2 * px[a1 * nqx + q1];
                                            for q4 in 0..nqv {
                                                let f124 = f12 * pv[b2 * nqv + q4];
                                                for q3 in 0..nqv {
                                                    acc += f124 * pv[b1 * nqv + q3] * evals[p];
                                                    p += 1;
                                                }
                                            }
                                        }
                                    }
                                    xcell_chunk[a * n_vdofs + iv * n_vn + b] = acc;
                                }
                            }
                        }
                    }
                }
                let _ = nx0;
            },
        );
    Ok(field)
}

/// Nodal interpolant of a phase-space function: with Gauss-collocated nodal
/// bases this is the L² projection under the collocated rule. Used for the
/// per-step transport source, where the interpolation error is of the same
/// `h^{k+1}` order as the projection error.
pub fn interpolate_nodal<F>(space: &Arc<PhaseSpace>, g: F) -> PhaseField
where
    F: Fn([f64; 2], [f64; 2]) -> f64 + Sync,
{
    let n_vdofs = space.n_vdofs();
    let n_xn = space.n_xnodes();
    let n_vn = space.n_vnodes();
    let mut field = PhaseField::zeros(space.clone());
    field
        .data
        .par_chunks_mut(n_vdofs)
        .enumerate()
        .for_each(|(xd, chunk)| {
            let x = space.x_node_coord(xd / n_xn, xd % n_xn);
            for (vd, c) in chunk.iter_mut().enumerate() {
                let v = space.v_node_coord(vd / n_vn, vd % n_vn);
                *c = g(x, v);
            }
        });
    field
}

/// `P[a][q] = w_q l_a(ξ_q) / w_a`: contraction of the projection's
/// right-hand side with the inverse diagonal mass, per direction.
fn projection_factors(basis: &NodalBasis1D, quad: &crate::basis::QuadratureRule) -> Vec<f64> {
    let np = basis.num_nodes();
    let nq = quad.len();
    let mut p = vec![0.0; np * nq];
    for q in 0..nq {
        let vals = basis.eval_all(quad.points[q]);
        for a in 0..np {
            p[a * nq + q] = quad.weights[q] * vals[a] / basis.node_weights()[a];
        }
    }
    p
}

/// Velocity moments by exact quadrature: `ρ_h` and `(ρV)_h` as nodal fields
/// on the x mesh.
pub fn compute_moments(f: &PhaseField) -> MomentPair {
    let sp = f.space();
    let n_vdofs = sp.n_vdofs();
    let n_vn = sp.n_vnodes();
    let n_xdofs = sp.n_xdofs();
    let mut rho = vec![0.0; n_xdofs];
    let mut rv1 = vec![0.0; n_xdofs];
    let mut rv2 = vec![0.0; n_xdofs];
    rho.par_iter_mut()
        .zip(rv1.par_iter_mut())
        .zip(rv2.par_iter_mut())
        .zip(f.data.par_chunks(n_vdofs))
        .for_each(|(((r, m1), m2), chunk)| {
            let mut acc = 0.0;
            let mut acc1 = 0.0;
            let mut acc2 = 0.0;
            for (vd, &val) in chunk.iter().enumerate() {
                let w = sp.v_node_weight(vd % n_vn) * val;
                acc += w;
                acc1 += w * sp.vcoord1[vd];
                acc2 += w * sp.vcoord2[vd];
            }
            *r = acc;
            *m1 = acc1;
            *m2 = acc2;
        });
    MomentPair {
        rho: XScalarField::from_data(sp.xmesh().clone(), sp.xbasis().clone(), rho),
        rho_v: [
            XScalarField::from_data(sp.xmesh().clone(), sp.xbasis().clone(), rv1),
            XScalarField::from_data(sp.xmesh().clone(), sp.xbasis().clone(), rv2),
        ],
    }
}

/// Check that a velocity field is defined on the same x discretization.
pub fn check_compatible(u: &VelocityField, f: &PhaseField) -> Result<()> {
    if u.dofs() != f.space().n_xdofs() {
        return Err(Error::DimensionMismatch(
            "velocity field and phase field live on different x meshes".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, build_phase_mesh};
    use approx::assert_abs_diff_eq;

    pub struct Rng(u64);
    impl Rng {
        pub fn new(seed: u64) -> Self {
            Self(seed.max(1))
        }
        pub fn next_f64(&mut self) -> f64 {
            self.0 ^= self.0 << 13;
            self.0 ^= self.0 >> 7;
            self.0 ^= self.0 << 17;
            (self.0 >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        }
    }

    fn space(nx: usize, nv: usize, kx: usize, kv: usize) -> Arc<PhaseSpace> {
        let xm = build_mesh([[0.0, 1.0], [0.0, 1.0]], [nx, nx], [true, true]).unwrap();
        let vm = build_mesh([[-1.0, 1.0], [-1.0, 1.0]], [nv, nv], [false, false]).unwrap();
        Arc::new(PhaseSpace::new(build_phase_mesh(xm, vm).unwrap(), kx, kv).unwrap())
    }

    fn random_field(sp: &Arc<PhaseSpace>, rng: &mut Rng) -> PhaseField {
        let mut f = PhaseField::zeros(sp.clone());
        for v in f.data_mut() {
            *v = rng.next_f64();
        }
        f
    }

    /// Random field that vanishes identically on the outermost v-cell layer.
    fn interior_field(sp: &Arc<PhaseSpace>, rng: &mut Rng) -> PhaseField {
        let mut f = random_field(sp, rng);
        let [nv0, nv1] = sp.vmesh().cells_per_axis();
        for ix in 0..sp.n_xcells() {
            for j2 in 0..nv1 {
                for j1 in 0..nv0 {
                    if j1 == 0 || j2 == 0 || j1 == nv0 - 1 || j2 == nv1 - 1 {
                        let iv = j2 * nv0 + j1;
                        for a in 0..sp.n_xnodes() {
                            for b in 0..sp.n_vnodes() {
                                f.set(ix, iv, a, b, 0.0);
                            }
                        }
                    }
                }
            }
        }
        f
    }

    fn uniform_velocity(sp: &Arc<PhaseSpace>, u: [f64; 2]) -> VelocityField {
        let mut vf = VelocityField::zeros(sp.xmesh().clone(), sp.xbasis().clone());
        vf.component_mut(0).fill(u[0]);
        vf.component_mut(1).fill(u[1]);
        vf
    }

    fn random_velocity(sp: &Arc<PhaseSpace>, rng: &mut Rng) -> VelocityField {
        let mut vf = VelocityField::zeros(sp.xmesh().clone(), sp.xbasis().clone());
        for c in 0..2 {
            for v in vf.component_mut(c) {
                *v = rng.next_f64();
            }
        }
        vf
    }

    fn integral(f: &PhaseField) -> f64 {
        let sp = f.space();
        let mut acc = 0.0;
        for ix in 0..sp.n_xcells() {
            for iv in 0..sp.n_vcells() {
                for a in 0..sp.n_xnodes() {
                    for b in 0..sp.n_vnodes() {
                        acc += sp.x_node_weight(a) * sp.v_node_weight(b) * f.get(ix, iv, a, b);
                    }
                }
            }
        }
        acc
    }

    fn weighted_integral<G: Fn([f64; 2], [f64; 2]) -> f64>(f: &PhaseField, g: G) -> f64 {
        let sp = f.space();
        let mut acc = 0.0;
        for ix in 0..sp.n_xcells() {
            for iv in 0..sp.n_vcells() {
                for a in 0..sp.n_xnodes() {
                    for b in 0..sp.n_vnodes() {
                        let w = sp.x_node_weight(a) * sp.v_node_weight(b);
                        acc += w
                            * f.get(ix, iv, a, b)
                            * g(sp.x_node_coord(ix, a), sp.v_node_coord(iv, b));
                    }
                }
            }
        }
        acc
    }

    #[test]
    fn upwind_flux_selects_upstream_side() {
        // Positive speed: pure upwind from the minus side.
        assert_eq!(upwind_flux_scalar(2.0, 3.0, 7.0), 6.0);
        // Zero speed: nothing moves.
        assert_eq!(upwind_flux_scalar(0.0, 3.0, 7.0), 0.0);
        // f⁻=2, f⁺=4, v·n=−1 → central + penalty = −4.
        assert_eq!(upwind_flux_x(2.0, 4.0, [1.0, 0.0], [-1.0, 0.0]), -4.0);
        // u = v: no relative transport.
        assert_eq!(
            upwind_flux_v(1.0, 2.0, [0.5, -0.5], [0.5, -0.5], [1.0, 0.0]),
            0.0
        );
        // (u−v)·n > 0: upstream trace.
        assert_eq!(
            upwind_flux_v(3.0, 9.0, [1.0, 0.0], [0.0, 0.0], [1.0, 0.0]),
            3.0
        );
    }

    #[test]
    fn project_zero_gives_zero_field() {
        let sp = space(2, 2, 1, 1);
        let f = project_initial(&sp, |_, _| 0.0).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_reproduces_seeded_dg_function() {
        let sp = space(2, 2, 1, 2);
        let mut rng = Rng::new(5);
        let seed = random_field(&sp, &mut rng);
        // Evaluate the seeded dG function through tensor basis evaluation.
        let sp2 = sp.clone();
        let seed_ref = seed.clone();
        let eval = move |x: [f64; 2], v: [f64; 2]| -> f64 {
            let xm = sp2.xmesh();
            let vm = sp2.vmesh();
            let locate = |m: &CartesianMesh2D, p: [f64; 2]| -> (usize, [f64; 2]) {
                let mut ij = [0usize; 2];
                let mut xi = [0.0; 2];
                for ax in 0..2 {
                    let h = m.cell_width()[ax];
                    let rel = (p[ax] - m.domain()[ax][0]) / h;
                    let c = (rel.floor() as usize).min(m.cells_per_axis()[ax] - 1);
                    ij[ax] = c;
                    xi[ax] = 2.0 * (rel - c as f64) - 1.0;
                }
                (m.cell_index(ij), xi)
            };
            let (ix, xxi) = locate(xm, x);
            let (iv, vxi) = locate(vm, v);
            let ex1 = sp2.xbasis().eval_all(xxi[0]);
            let ex2 = sp2.xbasis().eval_all(xxi[1]);
            let ev1 = sp2.vbasis().eval_all(vxi[0]);
            let ev2 = sp2.vbasis().eval_all(vxi[1]);
            let npx = sp2.xbasis().num_nodes();
            let npv = sp2.vbasis().num_nodes();
            let mut acc = 0.0;
            for a2 in 0..npx {
                for a1 in 0..npx {
                    for b2 in 0..npv {
                        for b1 in 0..npv {
                            acc += seed_ref.get(ix, iv, a2 * npx + a1, b2 * npv + b1)
                                * ex1[a1]
                                * ex2[a2]
                                * ev1[b1]
                                * ev2[b2];
                        }
                    }
                }
            }
            acc
        };
        let proj = project_initial(&sp, eval).unwrap();
        for (p, s) in proj.data().iter().zip(seed.data()) {
            assert_abs_diff_eq!(p, s, epsilon = 1e-12);
        }
    }

    #[test]
    fn moments_of_zero_and_constant_fields() {
        let sp = space(2, 4, 1, 1);
        let zero = PhaseField::zeros(sp.clone());
        let m = compute_moments(&zero);
        assert!(m.rho.data().iter().all(|&v| v == 0.0));

        let mut one = PhaseField::zeros(sp.clone());
        one.data_mut().fill(1.0);
        let m = compute_moments(&one);
        for &r in m.rho.data() {
            assert_abs_diff_eq!(r, 4.0, epsilon = 1e-13); // |Ω_v| = 4
        }
        for c in 0..2 {
            for &r in m.rho_v[c].data() {
                assert_abs_diff_eq!(r, 0.0, epsilon = 1e-13); // odd moment
            }
        }
    }

    #[test]
    fn moments_of_quadratic_fields() {
        let sp = space(2, 4, 1, 2);
        // f = v1²: ∫_{[-1,1]²} v1² dv = (2/3)·2 = 4/3, odd moments vanish.
        let f = project_initial(&sp, |_, v| v[0] * v[0]).unwrap();
        let m = compute_moments(&f);
        for &r in m.rho.data() {
            assert_abs_diff_eq!(r, 4.0 / 3.0, epsilon = 1e-12);
        }
        for c in 0..2 {
            for &r in m.rho_v[c].data() {
                assert_abs_diff_eq!(r, 0.0, epsilon = 1e-12);
            }
        }
        // f = |v|²: ∫_{[-1,1]²} |v|² dv = 8/3.
        let f = project_initial(&sp, |_, v| v[0] * v[0] + v[1] * v[1]).unwrap();
        let m = compute_moments(&f);
        for &r in m.rho.data() {
            assert_abs_diff_eq!(r, 8.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn moments_are_linear_in_f() {
        let sp = space(2, 2, 1, 1);
        let mut rng = Rng::new(11);
        let f = random_field(&sp, &mut rng);
        let g = random_field(&sp, &mut rng);
        let mut combo = f.clone();
        combo.axpy(2.5, &g);
        let mc = compute_moments(&combo);
        let mf = compute_moments(&f);
        let mg = compute_moments(&g);
        for i in 0..mc.rho.data().len() {
            assert_abs_diff_eq!(
                mc.rho.data()[i],
                mf.rho.data()[i] + 2.5 * mg.rho.data()[i],
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn x_transport_of_constant_state_is_zero() {
        let sp = space(3, 2, 1, 1);
        let mut f = PhaseField::zeros(sp.clone());
        f.data_mut().fill(4.2);
        let r = apply_x_transport(&f);
        for &v in r.data() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn x_transport_conserves_mass_on_torus() {
        let sp = space(3, 2, 2, 1);
        let mut rng = Rng::new(3);
        let f = random_field(&sp, &mut rng);
        let r = apply_x_transport(&f);
        assert_abs_diff_eq!(integral(&r), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn x_transport_conserves_momentum() {
        // ψ = v_i is continuous across x edges, so the flux terms cancel.
        let sp = space(3, 2, 1, 1);
        let mut rng = Rng::new(13);
        let f = random_field(&sp, &mut rng);
        let r = apply_x_transport(&f);
        for c in 0..2 {
            let m = weighted_integral(&r, |_, v| v[c]);
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn v_transport_of_zero_is_zero() {
        let sp = space(2, 2, 1, 1);
        let f = PhaseField::zeros(sp.clone());
        let u = uniform_velocity(&sp, [0.3, -0.1]);
        let r = apply_v_transport(&u, &f);
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn v_transport_conserves_mass_for_interior_support() {
        let sp = space(2, 4, 1, 1);
        let mut rng = Rng::new(17);
        let f = interior_field(&sp, &mut rng);
        let u = random_velocity(&sp, &mut rng);
        let r = apply_v_transport(&u, &f);
        assert_abs_diff_eq!(integral(&r), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn v_transport_momentum_duality() {
        // ⟨v-rate, v_i⟩ = ∫ (u_i − v_i) f for interior-supported f, k ≥ 1.
        let sp = space(2, 4, 1, 1);
        let mut rng = Rng::new(23);
        let f = interior_field(&sp, &mut rng);
        let u = random_velocity(&sp, &mut rng);
        let r = apply_v_transport(&u, &f);
        for c in 0..2 {
            let lhs = weighted_integral(&r, |_, v| v[c]);
            // Independent quadrature of ∫ (u_i − v_i) f with u collocated at
            // the x nodes, matching the operator's definition.
            let mut rhs = 0.0;
            for ix in 0..sp.n_xcells() {
                for a in 0..sp.n_xnodes() {
                    let xd = ix * sp.n_xnodes() + a;
                    let ui = u.component(c)[xd];
                    for iv in 0..sp.n_vcells() {
                        for b in 0..sp.n_vnodes() {
                            let w = sp.x_node_weight(a) * sp.v_node_weight(b);
                            let vi = sp.v_node_coord(iv, b)[c];
                            rhs += w * f.get(ix, iv, a, b) * (ui - vi);
                        }
                    }
                }
            }
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn v_transport_energy_duality() {
        // ⟨v-rate, |v|²/2⟩ = ∫ (u − v)·v f for interior-supported f, k ≥ 2.
        let sp = space(2, 4, 1, 2);
        let mut rng = Rng::new(29);
        let f = interior_field(&sp, &mut rng);
        let u = random_velocity(&sp, &mut rng);
        let r = apply_v_transport(&u, &f);
        let lhs = weighted_integral(&r, |_, v| 0.5 * (v[0] * v[0] + v[1] * v[1]));
        let mut rhs = 0.0;
        for ix in 0..sp.n_xcells() {
            for a in 0..sp.n_xnodes() {
                let xd = ix * sp.n_xnodes() + a;
                let uc = [u.component(0)[xd], u.component(1)[xd]];
                for iv in 0..sp.n_vcells() {
                    for b in 0..sp.n_vnodes() {
                        let w = sp.x_node_weight(a) * sp.v_node_weight(b);
                        let v = sp.v_node_coord(iv, b);
                        rhs += w
                            * f.get(ix, iv, a, b)
                            * ((uc[0] - v[0]) * v[0] + (uc[1] - v[1]) * v[1]);
                    }
                }
            }
        }
        let scale = 1.0 + lhs.abs();
        assert!((lhs - rhs).abs() <= 1e-10 * scale);
    }

    #[test]
    fn semi_discrete_is_sum_of_split_operators() {
        let sp = space(2, 2, 1, 1);
        let mut rng = Rng::new(31);
        let f = random_field(&sp, &mut rng);
        let u = random_velocity(&sp, &mut rng);
        let total = apply_semi_discrete(&u, &f);
        let mut sum = apply_x_transport(&f);
        sum.axpy(1.0, &apply_v_transport(&u, &f));
        for (t, s) in total.data().iter().zip(sum.data()) {
            assert_eq!(t, s);
        }
    }

    #[test]
    fn semi_discrete_mass_duality_interior_support() {
        let sp = space(2, 4, 1, 1);
        let mut rng = Rng::new(37);
        let f = interior_field(&sp, &mut rng);
        let u = random_velocity(&sp, &mut rng);
        let r = apply_semi_discrete(&u, &f);
        assert_abs_diff_eq!(integral(&r), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn transport_is_linear_and_homogeneous() {
        let sp = space(2, 2, 1, 1);
        let mut rng = Rng::new(41);
        let f = random_field(&sp, &mut rng);
        let g = random_field(&sp, &mut rng);
        let u = random_velocity(&sp, &mut rng);
        let mut combo = f.clone();
        combo.axpy(-1.75, &g);
        let rc = apply_semi_discrete(&u, &combo);
        let mut want = apply_semi_discrete(&u, &f);
        want.axpy(-1.75, &apply_semi_discrete(&u, &g));
        for (a, b) in rc.data().iter().zip(want.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn l2_dissipation_identity() {
        // ⟨rate, f⟩ = ‖f‖² − Σ |a_n|/2 [[f]]² over all edges (zero exterior
        // trace at ∂Ω_v), the discrete energy balance behind the e^T bound.
        let sp = space(2, 2, 1, 1);
        let mut rng = Rng::new(43);
        let f = random_field(&sp, &mut rng);
        let u = random_velocity(&sp, &mut rng);
        let r = apply_semi_discrete(&u, &f);

        let npx = sp.xbasis().num_nodes();
        let npv = sp.vbasis().num_nodes();
        let [nx0, nx1] = sp.xmesh().cells_per_axis();
        let [nv0, nv1] = sp.vmesh().cells_per_axis();
        let [hx0, hx1] = sp.xmesh().cell_width();
        let [hv0, hv1] = sp.vmesh().cell_width();
        let tl_x = sp.xbasis().trace_lo().to_vec();
        let th_x = sp.xbasis().trace_hi().to_vec();
        let tl_v = sp.vbasis().trace_lo().to_vec();
        let th_v = sp.vbasis().trace_hi().to_vec();
        let wx = sp.xbasis().node_weights().to_vec();
        let wv = sp.vbasis().node_weights().to_vec();

        let lhs: f64 = {
            let mut acc = 0.0;
            for ix in 0..sp.n_xcells() {
                for iv in 0..sp.n_vcells() {
                    for a in 0..sp.n_xnodes() {
                        for b in 0..sp.n_vnodes() {
                            acc += sp.x_node_weight(a)
                                * sp.v_node_weight(b)
                                * r.get(ix, iv, a, b)
                                * f.get(ix, iv, a, b);
                        }
                    }
                }
            }
            acc
        };

        let norm2 = f.l2_norm().powi(2);

        // x-edge dissipation: per v dof, per periodic x edge.
        let mut diss = 0.0;
        for iv in 0..sp.n_vcells() {
            for b in 0..sp.n_vnodes() {
                let v = sp.v_node_coord(iv, b);
                let wvb = sp.v_node_weight(b);
                // axis 0 edges
                for i2 in 0..nx1 {
                    for e in 0..nx0 {
                        let lc = (e + nx0 - 1) % nx0;
                        let rc = e;
                        for a2 in 0..npx {
                            let mut fm = 0.0;
                            let mut fp = 0.0;
                            for j in 0..npx {
                                fm += f.get(i2 * nx0 + lc, iv, a2 * npx + j, b) * th_x[j];
                                fp += f.get(i2 * nx0 + rc, iv, a2 * npx + j, b) * tl_x[j];
                            }
                            let wedge = wx[a2] * 0.5 * hx1;
                            diss += wvb * wedge * 0.5 * v[0].abs() * (fm - fp) * (fm - fp);
                        }
                    }
                }
                // axis 1 edges
                for i1 in 0..nx0 {
                    for e in 0..nx1 {
                        let lc = (e + nx1 - 1) % nx1;
                        let rc = e;
                        for a1 in 0..npx {
                            let mut fm = 0.0;
                            let mut fp = 0.0;
                            for j in 0..npx {
                                fm += f.get(lc * nx0 + i1, iv, j * npx + a1, b) * th_x[j];
                                fp += f.get(rc * nx0 + i1, iv, j * npx + a1, b) * tl_x[j];
                            }
                            let wedge = wx[a1] * 0.5 * hx0;
                            diss += wvb * wedge * 0.5 * v[1].abs() * (fm - fp) * (fm - fp);
                        }
                    }
                }
            }
        }
        // v-edge dissipation (boundary edges use a zero exterior trace).
        for ix in 0..sp.n_xcells() {
            for a in 0..sp.n_xnodes() {
                let xd = ix * sp.n_xnodes() + a;
                let uc = [u.component(0)[xd], u.component(1)[xd]];
                let wxa = sp.x_node_weight(a);
                for j2 in 0..nv1 {
                    for e in 0..=nv0 {
                        let s = sp.vedge_coords[0][e];
                        let an = uc[0] - s;
                        for b2 in 0..npv {
                            let mut fm = 0.0;
                            let mut fp = 0.0;
                            if e > 0 {
                                for j in 0..npv {
                                    fm += f.get(ix, j2 * nv0 + e - 1, a, b2 * npv + j) * th_v[j];
                                }
                            }
                            if e < nv0 {
                                for j in 0..npv {
                                    fp += f.get(ix, j2 * nv0 + e, a, b2 * npv + j) * tl_v[j];
                                }
                            }
                            let wedge = wv[b2] * 0.5 * hv1;
                            diss += wxa * wedge * 0.5 * an.abs() * (fm - fp) * (fm - fp);
                        }
                    }
                }
                for j1 in 0..nv0 {
                    for e in 0..=nv1 {
                        let s = sp.vedge_coords[1][e];
                        let an = uc[1] - s;
                        for b1 in 0..npv {
                            let mut fm = 0.0;
                            let mut fp = 0.0;
                            if e > 0 {
                                for j in 0..npv {
                                    fm += f.get(ix, (e - 1) * nv0 + j1, a, j * npv + b1) * th_v[j];
                                }
                            }
                            if e < nv1 {
                                for j in 0..npv {
                                    fp += f.get(ix, e * nv0 + j1, a, j * npv + b1) * tl_v[j];
                                }
                            }
                            let wedge = wv[b1] * 0.5 * hv0;
                            diss += wxa * wedge * 0.5 * an.abs() * (fm - fp) * (fm - fp);
                        }
                    }
                }
            }
        }

        let rhs = norm2 - diss;
        let scale = norm2.max(1.0);
        assert!(
            (lhs - rhs).abs() <= 1e-10 * scale,
            "dissipation identity violated: lhs={lhs}, rhs={rhs}"
        );
        assert!(lhs <= norm2 + 1e-10 * scale);
    }
}
