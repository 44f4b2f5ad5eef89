//! Nodal Lagrange bases and Gauss–Legendre quadrature on the reference
//! interval `[-1, 1]`.
//!
//! Basis nodes are Gauss–Legendre points, so the element mass matrix under
//! the collocated `(k+1)`-point rule is diagonal and exact for degree-`2k`
//! integrands. Tensor-product 2D values are products of 1D values.

use crate::{Error, Result};

/// Gauss–Legendre rule on `[-1, 1]`: integrates polynomials of degree
/// `2n - 1` exactly with `n` points.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss–Legendre rule with `n` points, computed by Newton iteration on the
/// Legendre recurrence and symmetrized so that `x[i] = -x[n-1-i]` exactly.
pub fn gauss_rule(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::InvalidBasis(
            "quadrature rule needs at least one point".into(),
        ));
    }
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th root (descending order).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_deriv(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Roots come out in descending order; store ascending and mirrored.
        points[n - 1 - i] = x;
        points[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.0;
    }
    Ok(QuadratureRule { points, weights })
}

/// Legendre polynomial `P_n` and its derivative at `x` via the three-term
/// recurrence.
fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Nodal Lagrange basis of degree `k` on `[-1, 1]` with Gauss–Legendre nodes.
#[derive(Debug, Clone)]
pub struct NodalBasis1D {
    degree: usize,
    nodes: Vec<f64>,
    /// Barycentric weights `1 / prod_{m != j} (x_j - x_m)`.
    bary: Vec<f64>,
    /// Gauss weights at the nodes: the diagonal of the reference mass matrix.
    node_weights: Vec<f64>,
    /// Differentiation matrix `D[q][j] = l_j'(x_q)`, row-major.
    diff: Vec<f64>,
    /// Traces `l_j(-1)` and `l_j(+1)`.
    trace_lo: Vec<f64>,
    trace_hi: Vec<f64>,
}

impl NodalBasis1D {
    pub fn new(degree: usize) -> Result<Self> {
        let rule = gauss_rule(degree + 1)?;
        let nodes = rule.points;
        let node_weights = rule.weights;
        let np = degree + 1;
        let mut bary = vec![0.0; np];
        for j in 0..np {
            let mut prod = 1.0;
            for m in 0..np {
                if m != j {
                    prod *= nodes[j] - nodes[m];
                }
            }
            bary[j] = 1.0 / prod;
        }
        let mut basis = Self {
            degree,
            nodes,
            bary,
            node_weights,
            diff: Vec::new(),
            trace_lo: Vec::new(),
            trace_hi: Vec::new(),
        };
        let mut diff = vec![0.0; np * np];
        for q in 0..np {
            let row = basis.deriv_all(basis.nodes[q]);
            diff[q * np..(q + 1) * np].copy_from_slice(&row);
        }
        basis.diff = diff;
        basis.trace_lo = basis.eval_all(-1.0);
        basis.trace_hi = basis.eval_all(1.0);
        Ok(basis)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_nodes(&self) -> usize {
        self.degree + 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Diagonal of the reference mass matrix (Gauss weights at the nodes).
    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    /// `l_j'(x_q)` for nodes `q`, row-major `[q][j]`.
    pub fn diff_matrix(&self) -> &[f64] {
        &self.diff
    }

    pub fn trace_lo(&self) -> &[f64] {
        &self.trace_lo
    }

    pub fn trace_hi(&self) -> &[f64] {
        &self.trace_hi
    }

    /// Values of all `k+1` basis functions at `xi` (Lagrange product form,
    /// exact 0/1 at the nodes).
    pub fn eval_all(&self, xi: f64) -> Vec<f64> {
        let np = self.num_nodes();
        let mut out = vec![0.0; np];
        for j in 0..np {
            let mut prod = self.bary[j];
            for m in 0..np {
                if m != j {
                    prod *= xi - self.nodes[m];
                }
            }
            out[j] = prod;
        }
        out
    }

    /// Derivatives of all basis functions at `xi`:
    /// `l_j'(xi) = sum_{m != j} prod_{n != j, n != m} (xi - x_n) * bary_j`.
    pub fn deriv_all(&self, xi: f64) -> Vec<f64> {
        let np = self.num_nodes();
        let mut out = vec![0.0; np];
        for j in 0..np {
            let mut sum = 0.0;
            for m in 0..np {
                if m == j {
                    continue;
                }
                let mut prod = 1.0;
                for n in 0..np {
                    if n != j && n != m {
                        prod *= xi - self.nodes[n];
                    }
                }
                sum += prod;
            }
            out[j] = sum * self.bary[j];
        }
        out
    }
}

/// Values of all basis functions of `basis` at `xi`.
pub fn eval_basis(basis: &NodalBasis1D, xi: f64) -> Vec<f64> {
    basis.eval_all(xi)
}

/// Derivative values of all basis functions of `basis` at `xi`.
pub fn eval_basis_deriv(basis: &NodalBasis1D, xi: f64) -> Vec<f64> {
    basis.deriv_all(xi)
}

/// L² projection of `target` onto span of the 1D basis on the reference
/// interval, using `quad` for all integrals. Solves the (small) normal
/// equations; with `quad.len() >= k+1` Gauss points the mass matrix is the
/// exact (diagonal) one.
pub fn l2_project_1d<F: Fn(f64) -> f64>(
    target: F,
    basis: &NodalBasis1D,
    quad: &QuadratureRule,
) -> Vec<f64> {
    let np = basis.num_nodes();
    let nq = quad.len();
    let mut vals = vec![0.0; nq * np];
    for q in 0..nq {
        let row = basis.eval_all(quad.points[q]);
        vals[q * np..(q + 1) * np].copy_from_slice(&row);
    }
    let mut mass = vec![0.0; np * np];
    let mut rhs = vec![0.0; np];
    for q in 0..nq {
        let w = quad.weights[q];
        let fq = target(quad.points[q]);
        for i in 0..np {
            let vi = vals[q * np + i];
            rhs[i] += w * fq * vi;
            for j in 0..np {
                mass[i * np + j] += w * vi * vals[q * np + j];
            }
        }
    }
    solve_small(np, &mut mass, &mut rhs);
    rhs
}

/// Tensor-product L² projection on the reference square, node index
/// `a = a2 * (k+1) + a1` (axis 1 fastest).
pub fn l2_project_2d<F: Fn(f64, f64) -> f64>(
    target: F,
    basis: &NodalBasis1D,
    quad: &QuadratureRule,
) -> Vec<f64> {
    let np = basis.num_nodes();
    let nq = quad.len();
    let mut vals = vec![0.0; nq * np];
    for q in 0..nq {
        let row = basis.eval_all(quad.points[q]);
        vals[q * np..(q + 1) * np].copy_from_slice(&row);
    }
    let n2 = np * np;
    let mut mass = vec![0.0; n2 * n2];
    let mut rhs = vec![0.0; n2];
    for q2 in 0..nq {
        for q1 in 0..nq {
            let w = quad.weights[q1] * quad.weights[q2];
            let fq = target(quad.points[q1], quad.points[q2]);
            for a2 in 0..np {
                for a1 in 0..np {
                    let a = a2 * np + a1;
                    let va = vals[q1 * np + a1] * vals[q2 * np + a2];
                    rhs[a] += w * fq * va;
                    for b2 in 0..np {
                        for b1 in 0..np {
                            let b = b2 * np + b1;
                            let vb = vals[q1 * np + b1] * vals[q2 * np + b2];
                            mass[a * n2 + b] += w * va * vb;
                        }
                    }
                }
            }
        }
    }
    solve_small(n2, &mut mass, &mut rhs);
    rhs
}

/// In-place dense solve with partial pivoting for the small local systems.
/// A singular local mass matrix cannot occur with Gauss nodes and enough
/// quadrature points; treat it as a logic error.
fn solve_small(n: usize, a: &mut [f64], b: &mut [f64]) {
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        assert!(
            a[piv * n + col].abs() > 1e-300,
            "singular local mass matrix"
        );
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let factor = a[r * n + col] / d;
            if factor != 0.0 {
                for c in col..n {
                    a[r * n + c] -= factor * a[col * n + c];
                }
                b[r] -= factor * b[col];
            }
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for c in col + 1..n {
            s -= a[col * n + c] * b[c];
        }
        b[col] = s / a[col * n + col];
    }
}
