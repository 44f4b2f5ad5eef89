//! Discrete generalized Stokes system on the periodic x mesh: SIP Laplacian,
//! velocity–pressure coupling, pressure-jump stabilization, density reaction,
//! and the saddle-point solve with a zero-mean pressure constraint.
//!
//! All forms are assembled with a tensor Gauss rule of `⌈(3k+2)/2⌉` points
//! per direction, exact for the degree-`3k` reaction and source products.
//! On the torus every edge is interior, so only interior-edge formulas
//! appear; edge sums skip boundary edges so the same assembly routines serve
//! the non-periodic test meshes.

use std::sync::Arc;

use crate::basis::{gauss_rule, NodalBasis1D, QuadratureRule};
use crate::linalg::{factor_solve, norm2, SparseOperator};
use crate::mesh::CartesianMesh2D;
use crate::{Error, Result};

/// Scalar dG field on the x mesh, nodal layout `cell * (k+1)² + node`.
#[derive(Debug, Clone)]
pub struct XScalarField {
    mesh: Arc<CartesianMesh2D>,
    basis: Arc<NodalBasis1D>,
    data: Vec<f64>,
}

impl XScalarField {
    pub fn zeros(mesh: Arc<CartesianMesh2D>, basis: Arc<NodalBasis1D>) -> Self {
        let n = mesh.num_cells() * basis.num_nodes() * basis.num_nodes();
        Self {
            mesh,
            basis,
            data: vec![0.0; n],
        }
    }

    pub fn from_data(
        mesh: Arc<CartesianMesh2D>,
        basis: Arc<NodalBasis1D>,
        data: Vec<f64>,
    ) -> Self {
        assert_eq!(
            data.len(),
            mesh.num_cells() * basis.num_nodes() * basis.num_nodes()
        );
        Self { mesh, basis, data }
    }

    pub fn mesh(&self) -> &Arc<CartesianMesh2D> {
        &self.mesh
    }

    pub fn basis(&self) -> &Arc<NodalBasis1D> {
        &self.basis
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dofs(&self) -> usize {
        self.data.len()
    }

    /// Evaluate at a reference point of a cell via tensor basis products.
    pub fn eval_in_cell(&self, cell: usize, xi: [f64; 2]) -> f64 {
        let np = self.basis.num_nodes();
        let b1 = self.basis.eval_all(xi[0]);
        let b2 = self.basis.eval_all(xi[1]);
        let base = cell * np * np;
        let mut acc = 0.0;
        for a2 in 0..np {
            for a1 in 0..np {
                acc += self.data[base + a2 * np + a1] * b1[a1] * b2[a2];
            }
        }
        acc
    }

    /// Exact integral over the domain (diagonal mass, partition of unity).
    pub fn integral(&self) -> f64 {
        let np = self.basis.num_nodes();
        let w = self.basis.node_weights();
        let j = 0.25 * self.mesh.cell_width()[0] * self.mesh.cell_width()[1];
        let mut acc = 0.0;
        for (dof, &v) in self.data.iter().enumerate() {
            let a = dof % (np * np);
            acc += w[a % np] * w[a / np] * j * v;
        }
        acc
    }

    /// Smallest nodal value (observability for the density-sign question).
    pub fn min_nodal(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Exact L² norm of the represented polynomial field.
    pub fn l2_norm(&self) -> f64 {
        let np = self.basis.num_nodes();
        let w = self.basis.node_weights();
        let j = 0.25 * self.mesh.cell_width()[0] * self.mesh.cell_width()[1];
        let mut acc = 0.0;
        for (dof, &v) in self.data.iter().enumerate() {
            let a = dof % (np * np);
            acc += w[a % np] * w[a / np] * j * v * v;
        }
        acc.sqrt()
    }
}

/// Two-component velocity field in `U_h`.
#[derive(Debug, Clone)]
pub struct VelocityField {
    mesh: Arc<CartesianMesh2D>,
    basis: Arc<NodalBasis1D>,
    comps: [Vec<f64>; 2],
}

impl VelocityField {
    pub fn zeros(mesh: Arc<CartesianMesh2D>, basis: Arc<NodalBasis1D>) -> Self {
        let n = mesh.num_cells() * basis.num_nodes() * basis.num_nodes();
        Self {
            mesh,
            basis,
            comps: [vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn mesh(&self) -> &Arc<CartesianMesh2D> {
        &self.mesh
    }

    pub fn basis(&self) -> &Arc<NodalBasis1D> {
        &self.basis
    }

    pub fn dofs(&self) -> usize {
        self.comps[0].len()
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.comps[c]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.comps[c]
    }

    /// Largest nodal speed `|u|` (an estimate of the sup norm).
    pub fn max_nodal_speed(&self) -> f64 {
        self.comps[0]
            .iter()
            .zip(&self.comps[1])
            .map(|(&a, &b)| (a * a + b * b).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn eval_in_cell(&self, c: usize, cell: usize, xi: [f64; 2]) -> f64 {
        let np = self.basis.num_nodes();
        let b1 = self.basis.eval_all(xi[0]);
        let b2 = self.basis.eval_all(xi[1]);
        let base = cell * np * np;
        let mut acc = 0.0;
        for a2 in 0..np {
            for a1 in 0..np {
                acc += self.comps[c][base + a2 * np + a1] * b1[a1] * b2[a2];
            }
        }
        acc
    }
}

/// Zero-mean pressure field in `P_h`.
#[derive(Debug, Clone)]
pub struct PressureField {
    field: XScalarField,
}

impl PressureField {
    pub fn new(field: XScalarField) -> Self {
        Self { field }
    }

    pub fn data(&self) -> &[f64] {
        self.field.data()
    }

    pub fn as_scalar(&self) -> &XScalarField {
        &self.field
    }

    /// Mean value over the domain; zero up to solver tolerance.
    pub fn mean(&self) -> f64 {
        let d = self.field.mesh().domain();
        let area = (d[0][1] - d[0][0]) * (d[1][1] - d[1][0]);
        self.field.integral() / area
    }

    pub fn eval_in_cell(&self, cell: usize, xi: [f64; 2]) -> f64 {
        self.field.eval_in_cell(cell, xi)
    }
}

/// Quadrature size exact for triple products of degree-`k` factors.
pub fn volume_quadrature(basis: &NodalBasis1D) -> Result<QuadratureRule> {
    gauss_rule((3 * basis.degree() + 2).div_ceil(2).max(basis.num_nodes()))
}

/// 1D basis values/derivatives tabulated at quadrature points.
struct BasisAtQuad {
    nq: usize,
    val: Vec<f64>,   // [a * nq + q]
    deriv: Vec<f64>, // [a * nq + q]
}

fn tabulate(basis: &NodalBasis1D, quad: &QuadratureRule) -> BasisAtQuad {
    let np = basis.num_nodes();
    let nq = quad.len();
    let mut val = vec![0.0; np * nq];
    let mut deriv = vec![0.0; np * nq];
    for q in 0..nq {
        let v = basis.eval_all(quad.points[q]);
        let d = basis.deriv_all(quad.points[q]);
        for a in 0..np {
            val[a * nq + q] = v[a];
            deriv[a * nq + q] = d[a];
        }
    }
    BasisAtQuad { nq, val, deriv }
}

/// Symmetric interior penalty Laplacian for one velocity component:
/// volume `∇u·∇φ`, penalty `(ϑ/h_x)[[u]]·[[φ]]`, and the symmetric
/// consistency terms over interior edges.
pub fn assemble_sip(
    mesh: &CartesianMesh2D,
    basis: &NodalBasis1D,
    penalty: f64,
) -> Result<SparseOperator> {
    if penalty <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "SIP penalty must be positive, got {penalty}"
        )));
    }
    let quad = volume_quadrature(basis)?;
    let tab = tabulate(basis, &quad);
    let np = basis.num_nodes();
    let nn = np * np;
    let n_s = mesh.num_cells() * nn;
    let [h1, h2] = mesh.cell_width();
    let jac = 0.25 * h1 * h2;
    let hx = mesh.mesh_size();

    // Element stiffness, identical on every cell of the uniform mesh.
    let mut k_local = vec![0.0; nn * nn];
    for q2 in 0..tab.nq {
        for q1 in 0..tab.nq {
            let w = quad.weights[q1] * quad.weights[q2] * jac;
            for a2 in 0..np {
                for a1 in 0..np {
                    let a = a2 * np + a1;
                    let ga = [
                        tab.deriv[a1 * tab.nq + q1] * tab.val[a2 * tab.nq + q2] * 2.0 / h1,
                        tab.val[a1 * tab.nq + q1] * tab.deriv[a2 * tab.nq + q2] * 2.0 / h2,
                    ];
                    for b2 in 0..np {
                        for b1 in 0..np {
                            let b = b2 * np + b1;
                            let gb = [
                                tab.deriv[b1 * tab.nq + q1] * tab.val[b2 * tab.nq + q2] * 2.0 / h1,
                                tab.val[b1 * tab.nq + q1] * tab.deriv[b2 * tab.nq + q2] * 2.0 / h2,
                            ];
                            k_local[a * nn + b] += w * (ga[0] * gb[0] + ga[1] * gb[1]);
                        }
                    }
                }
            }
        }
    }

    let mut triplets = Vec::new();
    for cell in 0..mesh.num_cells() {
        let base = cell * nn;
        for a in 0..nn {
            for b in 0..nn {
                let v = k_local[a * nn + b];
                if v != 0.0 {
                    triplets.push((base + a, base + b, v));
                }
            }
        }
    }

    // Edge blocks depend only on the edge axis on a uniform mesh.
    for axis in 0..2 {
        let blocks = sip_edge_blocks(basis, mesh, axis, penalty, hx);
        for edge in mesh.edges().iter().filter(|e| e.axis == axis) {
            let Some(plus) = edge.plus_cell else { continue };
            let cells = [edge.minus_cell, plus];
            for (si, &rc) in cells.iter().enumerate() {
                for (sj, &cc) in cells.iter().enumerate() {
                    let blk = &blocks[si * 2 + sj];
                    for a in 0..nn {
                        for b in 0..nn {
                            let v = blk[a * nn + b];
                            if v != 0.0 {
                                triplets.push((rc * nn + a, cc * nn + b, v));
                            }
                        }
                    }
                }
            }
        }
    }
    SparseOperator::from_triplets(n_s, n_s, &triplets)
}

/// The four `(test side, trial side)` blocks of the SIP edge terms for an
/// edge of the given normal axis: penalty minus symmetric consistency.
fn sip_edge_blocks(
    basis: &NodalBasis1D,
    mesh: &CartesianMesh2D,
    axis: usize,
    penalty: f64,
    hx: f64,
) -> [Vec<f64>; 4] {
    let np = basis.num_nodes();
    let nn = np * np;
    let equad = gauss_rule(np).expect("edge quadrature");
    let etab = tabulate(basis, &equad);
    let h_norm = mesh.cell_width()[axis];
    let h_tan = mesh.cell_width()[1 - axis];
    let tr = [basis.trace_hi().to_vec(), basis.trace_lo().to_vec()];
    let dtr = [basis.deriv_all(1.0), basis.deriv_all(-1.0)];
    // side 0 = minus cell (trace at +1), side 1 = plus cell (trace at -1).
    let jump_sign = [1.0, -1.0];

    let node_split = |a: usize| -> (usize, usize) {
        // (index along the normal axis, index along the tangent axis)
        let a1 = a % np;
        let a2 = a / np;
        if axis == 0 {
            (a1, a2)
        } else {
            (a2, a1)
        }
    };

    let mut blocks = [
        vec![0.0; nn * nn],
        vec![0.0; nn * nn],
        vec![0.0; nn * nn],
        vec![0.0; nn * nn],
    ];
    for q in 0..etab.nq {
        let w = equad.weights[q] * 0.5 * h_tan;
        for side_a in 0..2 {
            for side_b in 0..2 {
                let blk = &mut blocks[side_a * 2 + side_b];
                for a in 0..nn {
                    let (an, at) = node_split(a);
                    let tva = tr[side_a][an] * etab.val[at * etab.nq + q];
                    let dva = dtr[side_a][an] * etab.val[at * etab.nq + q] * 2.0 / h_norm;
                    for b in 0..nn {
                        let (bn, bt) = node_split(b);
                        let tvb = tr[side_b][bn] * etab.val[bt * etab.nq + q];
                        let dvb = dtr[side_b][bn] * etab.val[bt * etab.nq + q] * 2.0 / h_norm;
                        // penalty (ϑ/h_x) [[u]]·[[φ]]
                        let mut val =
                            penalty / hx * jump_sign[side_b] * tvb * jump_sign[side_a] * tva;
                        // -({∇u}·[[φ]] + [[u]]·{∇φ})
                        val -= 0.5 * dvb * jump_sign[side_a] * tva;
                        val -= jump_sign[side_b] * tvb * 0.5 * dva;
                        blk[a * nn + b] += w * val;
                    }
                }
            }
        }
    }
    blocks
}

/// Velocity–pressure coupling `b_h(u, q) = -Σ ∫ q ∇·u + Σ ∫ [[u]]{q}` as one
/// matrix per velocity component, rows indexed by pressure test functions.
pub fn assemble_coupling(
    mesh: &CartesianMesh2D,
    basis: &NodalBasis1D,
) -> Result<[SparseOperator; 2]> {
    let quad = volume_quadrature(basis)?;
    let tab = tabulate(basis, &quad);
    let np = basis.num_nodes();
    let nn = np * np;
    let n_s = mesh.num_cells() * nn;
    let [h1, h2] = mesh.cell_width();
    let jac = 0.25 * h1 * h2;

    let mut out = Vec::new();
    for comp in 0..2 {
        // Volume block -∫ q ∂_comp u, identical per cell.
        let mut vol = vec![0.0; nn * nn];
        let hc = if comp == 0 { h1 } else { h2 };
        for q2 in 0..tab.nq {
            for q1 in 0..tab.nq {
                let w = quad.weights[q1] * quad.weights[q2] * jac;
                for a2 in 0..np {
                    for a1 in 0..np {
                        let a = a2 * np + a1;
                        let qa = tab.val[a1 * tab.nq + q1] * tab.val[a2 * tab.nq + q2];
                        for b2 in 0..np {
                            for b1 in 0..np {
                                let b = b2 * np + b1;
                                let du = if comp == 0 {
                                    tab.deriv[b1 * tab.nq + q1] * tab.val[b2 * tab.nq + q2]
                                } else {
                                    tab.val[b1 * tab.nq + q1] * tab.deriv[b2 * tab.nq + q2]
                                } * 2.0
                                    / hc;
                                vol[a * nn + b] -= w * qa * du;
                            }
                        }
                    }
                }
            }
        }
        let mut triplets = Vec::new();
        for cell in 0..mesh.num_cells() {
            let base = cell * nn;
            for a in 0..nn {
                for b in 0..nn {
                    let v = vol[a * nn + b];
                    if v != 0.0 {
                        triplets.push((base + a, base + b, v));
                    }
                }
            }
        }
        // Edge terms: [[u]]{q} only on edges with normal along `comp`.
        let equad = gauss_rule(np)?;
        let etab = tabulate(basis, &equad);
        let h_tan = mesh.cell_width()[1 - comp];
        let tr = [basis.trace_hi().to_vec(), basis.trace_lo().to_vec()];
        let jump_sign = [1.0, -1.0];
        let node_split = |a: usize| -> (usize, usize) {
            let a1 = a % np;
            let a2 = a / np;
            if comp == 0 {
                (a1, a2)
            } else {
                (a2, a1)
            }
        };
        let mut blocks = [
            vec![0.0; nn * nn],
            vec![0.0; nn * nn],
            vec![0.0; nn * nn],
            vec![0.0; nn * nn],
        ];
        for q in 0..etab.nq {
            let w = equad.weights[q] * 0.5 * h_tan;
            for side_q in 0..2 {
                for side_u in 0..2 {
                    let blk = &mut blocks[side_q * 2 + side_u];
                    for a in 0..nn {
                        let (an, at) = node_split(a);
                        let qa = tr[side_q][an] * etab.val[at * etab.nq + q];
                        for b in 0..nn {
                            let (bn, bt) = node_split(b);
                            let ub = tr[side_u][bn] * etab.val[bt * etab.nq + q];
                            blk[a * nn + b] += w * 0.5 * qa * jump_sign[side_u] * ub;
                        }
                    }
                }
            }
        }
        for edge in mesh.edges().iter().filter(|e| e.axis == comp) {
            let Some(plus) = edge.plus_cell else { continue };
            let cells = [edge.minus_cell, plus];
            for (si, &rc) in cells.iter().enumerate() {
                for (sj, &cc) in cells.iter().enumerate() {
                    let blk = &blocks[si * 2 + sj];
                    for a in 0..nn {
                        for b in 0..nn {
                            let v = blk[a * nn + b];
                            if v != 0.0 {
                                triplets.push((rc * nn + a, cc * nn + b, v));
                            }
                        }
                    }
                }
            }
        }
        out.push(SparseOperator::from_triplets(n_s, n_s, &triplets)?);
    }
    Ok([out.remove(0), out.remove(0)])
}

/// Pressure-jump stabilization `s_h(p, q) = Σ h_x ∫ [[p]]·[[q]]`.
pub fn assemble_pressure_stab(
    mesh: &CartesianMesh2D,
    basis: &NodalBasis1D,
) -> Result<SparseOperator> {
    let np = basis.num_nodes();
    let nn = np * np;
    let n_s = mesh.num_cells() * nn;
    let hx = mesh.mesh_size();
    let equad = gauss_rule(np)?;
    let etab = tabulate(basis, &equad);
    let tr = [basis.trace_hi().to_vec(), basis.trace_lo().to_vec()];
    let jump_sign = [1.0, -1.0];

    let mut triplets = Vec::new();
    for axis in 0..2 {
        let h_tan = mesh.cell_width()[1 - axis];
        let node_split = |a: usize| -> (usize, usize) {
            let a1 = a % np;
            let a2 = a / np;
            if axis == 0 {
                (a1, a2)
            } else {
                (a2, a1)
            }
        };
        let mut blocks = [
            vec![0.0; nn * nn],
            vec![0.0; nn * nn],
            vec![0.0; nn * nn],
            vec![0.0; nn * nn],
        ];
        for q in 0..etab.nq {
            let w = equad.weights[q] * 0.5 * h_tan * hx;
            for side_a in 0..2 {
                for side_b in 0..2 {
                    let blk = &mut blocks[side_a * 2 + side_b];
                    for a in 0..nn {
                        let (an, at) = node_split(a);
                        let pa = jump_sign[side_a] * tr[side_a][an] * etab.val[at * etab.nq + q];
                        for b in 0..nn {
                            let (bn, bt) = node_split(b);
                            let pb =
                                jump_sign[side_b] * tr[side_b][bn] * etab.val[bt * etab.nq + q];
                            blk[a * nn + b] += w * pa * pb;
                        }
                    }
                }
            }
        }
        for edge in mesh.edges().iter().filter(|e| e.axis == axis) {
            let Some(plus) = edge.plus_cell else { continue };
            let cells = [edge.minus_cell, plus];
            for (si, &rc) in cells.iter().enumerate() {
                for (sj, &cc) in cells.iter().enumerate() {
                    let blk = &blocks[si * 2 + sj];
                    for a in 0..nn {
                        for b in 0..nn {
                            let v = blk[a * nn + b];
                            if v != 0.0 {
                                triplets.push((rc * nn + a, cc * nn + b, v));
                            }
                        }
                    }
                }
            }
        }
    }
    SparseOperator::from_triplets(n_s, n_s, &triplets)
}

/// Density-weighted mass matrix `(ρ_h u, φ)`, block diagonal per cell.
/// Symmetric but not assumed definite: `ρ_h` may dip negative.
pub fn assemble_reaction(rho: &XScalarField) -> Result<SparseOperator> {
    let mesh = rho.mesh();
    let basis = rho.basis();
    let quad = volume_quadrature(basis)?;
    let tab = tabulate(basis, &quad);
    let np = basis.num_nodes();
    let nn = np * np;
    let n_s = mesh.num_cells() * nn;
    let jac = 0.25 * mesh.cell_width()[0] * mesh.cell_width()[1];

    let mut triplets = Vec::with_capacity(mesh.num_cells() * nn * nn);
    let mut local = vec![0.0; nn * nn];
    for cell in 0..mesh.num_cells() {
        local.fill(0.0);
        let base = cell * nn;
        for q2 in 0..tab.nq {
            for q1 in 0..tab.nq {
                let w = quad.weights[q1] * quad.weights[q2] * jac;
                let mut rho_q = 0.0;
                for c2 in 0..np {
                    for c1 in 0..np {
                        rho_q += rho.data()[base + c2 * np + c1]
                            * tab.val[c1 * tab.nq + q1]
                            * tab.val[c2 * tab.nq + q2];
                    }
                }
                let wr = w * rho_q;
                if wr == 0.0 {
                    continue;
                }
                for a2 in 0..np {
                    for a1 in 0..np {
                        let a = a2 * np + a1;
                        let va = tab.val[a1 * tab.nq + q1] * tab.val[a2 * tab.nq + q2];
                        for b2 in 0..np {
                            for b1 in 0..np {
                                let b = b2 * np + b1;
                                let vb = tab.val[b1 * tab.nq + q1] * tab.val[b2 * tab.nq + q2];
                                local[a * nn + b] += wr * va * vb;
                            }
                        }
                    }
                }
            }
        }
        for a in 0..nn {
            for b in 0..nn {
                let v = local[a * nn + b];
                if v != 0.0 {
                    triplets.push((base + a, base + b, v));
                }
            }
        }
    }
    SparseOperator::from_triplets(n_s, n_s, &triplets)
}

/// The time-independent blocks of the saddle system, assembled once per
/// mesh/degree; the reaction block is assembled per solve.
#[derive(Debug)]
pub struct StokesOperators {
    mesh: Arc<CartesianMesh2D>,
    basis: Arc<NodalBasis1D>,
    pub sip: SparseOperator,
    pub coupling: [SparseOperator; 2],
    pub stab: SparseOperator,
    /// Exact integrals of the pressure basis functions (mean constraint row).
    pub mean: Vec<f64>,
    penalty: f64,
}

impl StokesOperators {
    pub fn new(
        mesh: Arc<CartesianMesh2D>,
        basis: Arc<NodalBasis1D>,
        penalty: f64,
    ) -> Result<Self> {
        let sip = assemble_sip(&mesh, &basis, penalty)?;
        let coupling = assemble_coupling(&mesh, &basis)?;
        let stab = assemble_pressure_stab(&mesh, &basis)?;
        let np = basis.num_nodes();
        let j = 0.25 * mesh.cell_width()[0] * mesh.cell_width()[1];
        let n_s = mesh.num_cells() * np * np;
        let w = basis.node_weights();
        let mean = (0..n_s)
            .map(|dof| {
                let a = dof % (np * np);
                w[a % np] * w[a / np] * j
            })
            .collect();
        Ok(Self {
            mesh,
            basis,
            sip,
            coupling,
            stab,
            mean,
            penalty,
        })
    }

    pub fn mesh(&self) -> &Arc<CartesianMesh2D> {
        &self.mesh
    }

    pub fn basis(&self) -> &Arc<NodalBasis1D> {
        &self.basis
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn n_scalar_dofs(&self) -> usize {
        self.mean.len()
    }

    /// `a_h(u, u)` for the vector field (sum over components).
    pub fn sip_energy(&self, u: &VelocityField) -> f64 {
        (0..2)
            .map(|c| self.sip.bilinear(u.component(c), u.component(c)).unwrap())
            .sum()
    }

    /// `s_h(p, p)`.
    pub fn stab_energy(&self, p: &PressureField) -> f64 {
        self.stab.bilinear(p.data(), p.data()).unwrap()
    }
}

/// Right-hand side functional `(ρ_h V_h + G, φ)` per component, by
/// quadrature over each cell.
pub fn assemble_momentum_source<G>(
    ops: &StokesOperators,
    rho_v: &[XScalarField; 2],
    g: G,
) -> Result<[Vec<f64>; 2]>
where
    G: Fn([f64; 2]) -> [f64; 2],
{
    let mesh = &ops.mesh;
    let basis = &ops.basis;
    let quad = volume_quadrature(basis)?;
    let tab = tabulate(basis, &quad);
    let np = basis.num_nodes();
    let nn = np * np;
    let jac = 0.25 * mesh.cell_width()[0] * mesh.cell_width()[1];
    let n_s = ops.n_scalar_dofs();
    let mut rhs = [vec![0.0; n_s], vec![0.0; n_s]];
    for cell in 0..mesh.num_cells() {
        let base = cell * nn;
        for q2 in 0..tab.nq {
            for q1 in 0..tab.nq {
                let w = quad.weights[q1] * quad.weights[q2] * jac;
                let xq = mesh.map_to_physical(cell, [quad.points[q1], quad.points[q2]]);
                let gq = g(xq);
                for comp in 0..2 {
                    let mut mv = 0.0;
                    for c2 in 0..np {
                        for c1 in 0..np {
                            mv += rho_v[comp].data()[base + c2 * np + c1]
                                * tab.val[c1 * tab.nq + q1]
                                * tab.val[c2 * tab.nq + q2];
                        }
                    }
                    let total = mv + gq[comp];
                    for a2 in 0..np {
                        for a1 in 0..np {
                            let a = a2 * np + a1;
                            rhs[comp][base + a] += w
                                * total
                                * tab.val[a1 * tab.nq + q1]
                                * tab.val[a2 * tab.nq + q2];
                        }
                    }
                }
            }
        }
    }
    Ok(rhs)
}

/// Solve the discrete generalized Stokes system with reaction density `rho`
/// and momentum source `(ρV)_h + G`. Zero-mean pressure is enforced through
/// one Lagrange multiplier; when the reaction vanishes identically the
/// velocity constants are pinned the same way (the operator kernel on the
/// torus contains them in that degenerate case).
pub fn solve_stokes<G>(
    ops: &StokesOperators,
    rho: &XScalarField,
    rho_v: &[XScalarField; 2],
    g: G,
) -> Result<(VelocityField, PressureField)>
where
    G: Fn([f64; 2]) -> [f64; 2],
{
    let n_s = ops.n_scalar_dofs();
    if rho.dofs() != n_s {
        return Err(Error::DimensionMismatch(
            "reaction density lives on a different discretization".into(),
        ));
    }
    let reaction = assemble_reaction(rho)?;
    let rhs_uv = assemble_momentum_source(ops, rho_v, g)?;
    let pin_velocity_means = rho.data().iter().all(|&r| r == 0.0);
    let n_constraints = if pin_velocity_means { 3 } else { 1 };
    let n = 3 * n_s + n_constraints;

    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (r, c, v) in ops.sip.entries() {
        triplets.push((r, c, v));
        triplets.push((n_s + r, n_s + c, v));
    }
    for (r, c, v) in reaction.entries() {
        triplets.push((r, c, v));
        triplets.push((n_s + r, n_s + c, v));
    }
    for comp in 0..2 {
        for (r, c, v) in ops.coupling[comp].entries() {
            // +b_h(φ, p) in the momentum rows, -b_h(u, q) in the mass rows.
            triplets.push((comp * n_s + c, 2 * n_s + r, v));
            triplets.push((2 * n_s + r, comp * n_s + c, -v));
        }
    }
    for (r, c, v) in ops.stab.entries() {
        triplets.push((2 * n_s + r, 2 * n_s + c, v));
    }
    for (i, &m) in ops.mean.iter().enumerate() {
        triplets.push((2 * n_s + i, 3 * n_s, m));
        triplets.push((3 * n_s, 2 * n_s + i, m));
    }
    if pin_velocity_means {
        for comp in 0..2 {
            for (i, &m) in ops.mean.iter().enumerate() {
                triplets.push((comp * n_s + i, 3 * n_s + 1 + comp, m));
                triplets.push((3 * n_s + 1 + comp, comp * n_s + i, m));
            }
        }
    }

    let a = SparseOperator::from_triplets(n, n, &triplets)?;
    let mut b = vec![0.0; n];
    b[..n_s].copy_from_slice(&rhs_uv[0]);
    b[n_s..2 * n_s].copy_from_slice(&rhs_uv[1]);

    let x = factor_solve(&a, &b).map_err(|e| match e {
        Error::SingularSystem(msg) => Error::SingularSystem(format!(
            "indefinite reaction made the Stokes system singular ({msg})"
        )),
        other => other,
    })?;

    let mut u = VelocityField::zeros(ops.mesh.clone(), ops.basis.clone());
    u.component_mut(0).copy_from_slice(&x[..n_s]);
    u.component_mut(1).copy_from_slice(&x[n_s..2 * n_s]);
    let p = PressureField::new(XScalarField::from_data(
        ops.mesh.clone(),
        ops.basis.clone(),
        x[2 * n_s..3 * n_s].to_vec(),
    ));
    Ok((u, p))
}

/// `(ρ u, w)` with the assembly quadrature: the discrete pairing used in the
/// momentum-compatibility and energy identities.
pub fn reaction_pairing(rho: &XScalarField, u: &VelocityField, w: &VelocityField) -> Result<f64> {
    let r = assemble_reaction(rho)?;
    let mut acc = 0.0;
    for c in 0..2 {
        acc += r.bilinear(w.component(c), u.component(c))?;
    }
    Ok(acc)
}

pub fn source_pairing<G>(
    ops: &StokesOperators,
    rho_v: &[XScalarField; 2],
    g: G,
    w: &VelocityField,
) -> Result<f64>
where
    G: Fn([f64; 2]) -> [f64; 2],
{
    let rhs = assemble_momentum_source(ops, rho_v, g)?;
    Ok(crate::linalg::dot(&rhs[0], w.component(0)) + crate::linalg::dot(&rhs[1], w.component(1)))
}

/// Relative residual of the assembled first-block equations for a candidate
/// solution; diagnostic used by tests.
pub fn momentum_residual(
    ops: &StokesOperators,
    rho: &XScalarField,
    u: &VelocityField,
    p: &PressureField,
    rhs: &[Vec<f64>; 2],
) -> Result<f64> {
    let reaction = assemble_reaction(rho)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for comp in 0..2 {
        let mut r = ops.sip.spmv(u.component(comp))?;
        let rr = reaction.spmv(u.component(comp))?;
        let bp = transpose_spmv(&ops.coupling[comp], p.data())?;
        for i in 0..r.len() {
            r[i] += rr[i] + bp[i] - rhs[comp][i];
        }
        num += norm2(&r).powi(2);
        den += norm2(&rhs[comp]).powi(2);
    }
    Ok((num.sqrt()) / den.sqrt().max(1e-300))
}

fn transpose_spmv(a: &SparseOperator, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != a.nrows() {
        return Err(Error::DimensionMismatch("transpose_spmv".into()));
    }
    let mut y = vec![0.0; a.ncols()];
    for (r, c, v) in a.entries() {
        y[c] += v * x[r];
    }
    Ok(y)
}
