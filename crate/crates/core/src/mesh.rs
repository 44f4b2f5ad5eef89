//! Uniform Cartesian tensor-product meshes: the periodic torus in `x` and the
//! non-periodic velocity box in `v`, with edge/neighbor topology.
//!
//! Cell and edge indexing is lexicographic with axis 0 fastest, so test
//! oracles can address entities deterministically: cell `(i, j)` has index
//! `j * n0 + i`.

use crate::{Error, Result};

/// One mesh edge. `normal_sign` is the sign of the minus-side unit normal
/// `n⁻` along `axis`; the plus-side normal is its negation. Interior edges
/// (including periodic wraps) store the lower-coordinate cell as the minus
/// cell with `normal_sign = +1`. Boundary edges store the single incident
/// cell as the minus cell with the outward normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub axis: usize,
    pub minus_cell: usize,
    pub plus_cell: Option<usize>,
    pub normal_sign: i8,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.plus_cell.is_none()
    }
}

/// Axis-aligned uniform rectangle mesh on `[a0,b0] × [a1,b1]`.
#[derive(Debug, Clone)]
pub struct CartesianMesh2D {
    domain: [[f64; 2]; 2],
    cells_per_axis: [usize; 2],
    periodic: [bool; 2],
    cell_width: [f64; 2],
    edges: Vec<Edge>,
}

/// Build a uniform Cartesian mesh with the requested periodicity.
pub fn build_mesh(
    domain: [[f64; 2]; 2],
    cells: [usize; 2],
    periodic: [bool; 2],
) -> Result<CartesianMesh2D> {
    for ax in 0..2 {
        if cells[ax] == 0 {
            return Err(Error::InvalidMesh(format!(
                "axis {ax}: cell count must be positive"
            )));
        }
        if !(domain[ax][1] - domain[ax][0]).is_finite() || domain[ax][1] <= domain[ax][0] {
            return Err(Error::InvalidMesh(format!(
                "axis {ax}: degenerate domain [{}, {}]",
                domain[ax][0], domain[ax][1]
            )));
        }
    }
    let cell_width = [
        (domain[0][1] - domain[0][0]) / cells[0] as f64,
        (domain[1][1] - domain[1][0]) / cells[1] as f64,
    ];
    let mut mesh = CartesianMesh2D {
        domain,
        cells_per_axis: cells,
        periodic,
        cell_width,
        edges: Vec::new(),
    };
    mesh.edges = mesh.build_edges();
    Ok(mesh)
}

impl CartesianMesh2D {
    pub fn domain(&self) -> [[f64; 2]; 2] {
        self.domain
    }

    pub fn cells_per_axis(&self) -> [usize; 2] {
        self.cells_per_axis
    }

    pub fn periodic(&self) -> [bool; 2] {
        self.periodic
    }

    pub fn cell_width(&self) -> [f64; 2] {
        self.cell_width
    }

    pub fn num_cells(&self) -> usize {
        self.cells_per_axis[0] * self.cells_per_axis[1]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Largest cell width over both axes.
    pub fn mesh_size(&self) -> f64 {
        self.cell_width[0].max(self.cell_width[1])
    }

    pub fn cell_index(&self, i: [usize; 2]) -> usize {
        i[1] * self.cells_per_axis[0] + i[0]
    }

    pub fn cell_coords(&self, index: usize) -> [usize; 2] {
        let n0 = self.cells_per_axis[0];
        [index % n0, index / n0]
    }

    /// Lower-left corner of a cell.
    pub fn cell_origin(&self, index: usize) -> [f64; 2] {
        let ij = self.cell_coords(index);
        [
            self.domain[0][0] + ij[0] as f64 * self.cell_width[0],
            self.domain[1][0] + ij[1] as f64 * self.cell_width[1],
        ]
    }

    /// Map a reference point `(-1,1)^2` into physical coordinates of a cell.
    pub fn map_to_physical(&self, cell: usize, xi: [f64; 2]) -> [f64; 2] {
        let o = self.cell_origin(cell);
        [
            o[0] + 0.5 * (xi[0] + 1.0) * self.cell_width[0],
            o[1] + 0.5 * (xi[1] + 1.0) * self.cell_width[1],
        ]
    }

    fn build_edges(&self) -> Vec<Edge> {
        let [n0, n1] = self.cells_per_axis;
        let mut edges = Vec::new();
        // Edges with normal along `axis`, iterated over transverse rows.
        for axis in 0..2 {
            let (n_along, n_trans) = if axis == 0 { (n0, n1) } else { (n1, n0) };
            let cell_at = |along: usize, trans: usize| -> usize {
                if axis == 0 {
                    self.cell_index([along, trans])
                } else {
                    self.cell_index([trans, along])
                }
            };
            for trans in 0..n_trans {
                for along in 0..n_along.saturating_sub(1) {
                    edges.push(Edge {
                        axis,
                        minus_cell: cell_at(along, trans),
                        plus_cell: Some(cell_at(along + 1, trans)),
                        normal_sign: 1,
                    });
                }
                if self.periodic[axis] {
                    edges.push(Edge {
                        axis,
                        minus_cell: cell_at(n_along - 1, trans),
                        plus_cell: Some(cell_at(0, trans)),
                        normal_sign: 1,
                    });
                } else {
                    edges.push(Edge {
                        axis,
                        minus_cell: cell_at(0, trans),
                        plus_cell: None,
                        normal_sign: -1,
                    });
                    edges.push(Edge {
                        axis,
                        minus_cell: cell_at(n_along - 1, trans),
                        plus_cell: None,
                        normal_sign: 1,
                    });
                }
            }
        }
        edges
    }
}

/// Product mesh `T_h = {T^x × T^v}` for the phase space.
#[derive(Debug, Clone)]
pub struct PhaseMesh {
    pub xmesh: CartesianMesh2D,
    pub vmesh: CartesianMesh2D,
    mesh_size: f64,
}

/// Combine a fully periodic `x`-mesh with a non-periodic `v`-mesh whose cell
/// counts are even, so that `v_i = 0` lies on a mesh line and no velocity
/// component changes sign inside an element.
pub fn build_phase_mesh(xmesh: CartesianMesh2D, vmesh: CartesianMesh2D) -> Result<PhaseMesh> {
    if !(xmesh.periodic[0] && xmesh.periodic[1]) {
        return Err(Error::InvalidMesh(
            "x-mesh must be periodic on both axes".into(),
        ));
    }
    if vmesh.periodic[0] || vmesh.periodic[1] {
        return Err(Error::InvalidMesh("v-mesh must be non-periodic".into()));
    }
    for ax in 0..2 {
        if vmesh.cells_per_axis[ax] % 2 != 0 {
            return Err(Error::InvalidMesh(format!(
                "v-mesh axis {ax}: cell count {} is odd; \
                 a mesh line must pass through v = 0",
                vmesh.cells_per_axis[ax]
            )));
        }
        let [a, b] = vmesh.domain[ax];
        let h = vmesh.cell_width[ax];
        let j = (-a / h).round();
        if (a + j * h).abs() > 1e-12 * (b - a) {
            return Err(Error::InvalidMesh(format!(
                "v-mesh axis {ax}: no mesh line at v = 0 for domain [{a}, {b}]"
            )));
        }
    }
    let mesh_size = xmesh.mesh_size().max(vmesh.mesh_size());
    Ok(PhaseMesh {
        xmesh,
        vmesh,
        mesh_size,
    })
}

impl PhaseMesh {
    /// `h := max(h_x, h_v)`.
    pub fn mesh_size(&self) -> f64 {
        self.mesh_size
    }

    pub fn num_elements(&self) -> usize {
        self.xmesh.num_cells() * self.vmesh.num_cells()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus(n: usize) -> CartesianMesh2D {
        build_mesh([[0.0, 1.0], [0.0, 1.0]], [n, n], [true, true]).unwrap()
    }

    fn vbox(n: usize) -> CartesianMesh2D {
        build_mesh([[-1.0, 1.0], [-1.0, 1.0]], [n, n], [false, false]).unwrap()
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_mesh([[0.0, 1.0], [0.0, 1.0]], [0, 2], [true, true]).is_err());
        assert!(build_mesh([[0.0, 0.0], [0.0, 1.0]], [2, 2], [true, true]).is_err());
        assert!(build_mesh([[1.0, 0.0], [0.0, 1.0]], [2, 2], [true, true]).is_err());
    }

    #[test]
    fn one_cell_torus_has_two_self_wrap_edges() {
        let m = torus(1);
        assert_eq!(m.num_cells(), 1);
        assert_eq!(m.edges().len(), 2);
        for e in m.edges() {
            assert_eq!(e.minus_cell, 0);
            assert_eq!(e.plus_cell, Some(0));
        }
    }

    #[test]
    fn torus_edge_count_is_2n_squared() {
        for n in [2usize, 3, 4, 8] {
            let m = torus(n);
            assert_eq!(m.edges().len(), 2 * n * n);
            assert!(m.edges().iter().all(|e| !e.is_boundary()));
        }
    }

    #[test]
    fn nonperiodic_box_has_boundary_edges() {
        let m = vbox(4);
        let boundary = m.edges().iter().filter(|e| e.is_boundary()).count();
        let interior = m.edges().iter().filter(|e| !e.is_boundary()).count();
        assert_eq!(boundary, 2 * 2 * 4);
        assert_eq!(interior, 2 * 3 * 4);
    }

    #[test]
    fn cell_areas_sum_to_domain_area() {
        let m = build_mesh([[0.0, 2.5], [-1.0, 1.0]], [7, 3], [true, true]).unwrap();
        let area: f64 = (0..m.num_cells())
            .map(|_| m.cell_width()[0] * m.cell_width()[1])
            .sum();
        let exact = 2.5 * 2.0;
        assert!((area - exact).abs() <= 1e-14 * exact);
    }

    #[test]
    fn uniform_spacing_is_exact() {
        let m = build_mesh([[0.0, 1.0], [0.0, 1.0]], [3, 7], [true, true]).unwrap();
        assert_eq!(m.cell_width()[0], 1.0 / 3.0);
        assert_eq!(m.cell_width()[1], 1.0 / 7.0);
    }

    #[test]
    fn lexicographic_indexing_axis0_fastest() {
        let m = torus(4);
        assert_eq!(m.cell_index([1, 0]), 1);
        assert_eq!(m.cell_index([0, 1]), 4);
        assert_eq!(m.cell_coords(9), [1, 2]);
    }

    #[test]
    fn phase_mesh_element_count_and_size() {
        let pm = build_phase_mesh(torus(4), vbox(4)).unwrap();
        assert_eq!(pm.num_elements(), 256);
        // h_x = 1/8, h_v = 1/4 -> h = 1/4
        let pm = build_phase_mesh(
            build_mesh([[0.0, 1.0], [0.0, 1.0]], [8, 8], [true, true]).unwrap(),
            build_mesh([[-1.0, 1.0], [-1.0, 1.0]], [8, 8], [false, false]).unwrap(),
        )
        .unwrap();
        assert_eq!(pm.mesh_size(), 0.25);
    }

    #[test]
    fn phase_mesh_rejects_odd_v_cells() {
        let v = build_mesh([[-1.0, 1.0], [-1.0, 1.0]], [3, 3], [false, false]).unwrap();
        assert!(build_phase_mesh(torus(4), v).is_err());
    }

    #[test]
    fn phase_mesh_rejects_wrong_periodicity() {
        let x_bad = build_mesh([[0.0, 1.0], [0.0, 1.0]], [4, 4], [true, false]).unwrap();
        assert!(build_phase_mesh(x_bad, vbox(4)).is_err());
        let v_bad = build_mesh([[-1.0, 1.0], [-1.0, 1.0]], [4, 4], [true, false]).unwrap();
        assert!(build_phase_mesh(torus(4), v_bad).is_err());
    }

    #[test]
    fn v_mesh_line_passes_through_zero() {
        let pm = build_phase_mesh(torus(4), vbox(6)).unwrap();
        for ax in 0..2 {
            let [a, _] = pm.vmesh.domain()[ax];
            let h = pm.vmesh.cell_width()[ax];
            let j = (-a / h).round();
            assert!((a + j * h).abs() <= 1e-14);
        }
        // Asymmetric box without a line through zero is rejected.
        let v = build_mesh([[-0.7, 1.0], [-1.0, 1.0]], [4, 4], [false, false]).unwrap();
        assert!(build_phase_mesh(torus(4), v).is_err());
    }

    #[test]
    fn interior_edges_pair_adjacent_cells() {
        let m = torus(4);
        for e in m.edges() {
            let minus = m.cell_coords(e.minus_cell);
            let plus = m.cell_coords(e.plus_cell.unwrap());
            let n = m.cells_per_axis()[e.axis];
            let d = (plus[e.axis] + n - minus[e.axis]) % n;
            assert_eq!(d, 1, "plus cell is one step along the edge axis");
            assert_eq!(minus[1 - e.axis], plus[1 - e.axis]);
        }
    }
}
