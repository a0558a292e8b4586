//! Hierarchic shape functions of total degree `p` on the reference triangle.
//!
//! Reference vertices are `v0 = (0,0)`, `v1 = (1,0)`, `v2 = (0,1)` with
//! barycentric coordinates `l0 = 1 - x - y`, `l1 = x`, `l2 = y`. Local edge
//! `j` runs from vertex `j` to vertex `(j + 1) % 3`.
//!
//! * vertex modes: `l_i`
//! * edge modes of order `r = 2..=p` on edge `(a, b)`: `l_a l_b k_{r-2}(l_b - l_a)`,
//!   whose trace is the Lobatto function of order `r`
//! * interior modes `(n1, n2)`, `n1, n2 >= 1`, `n1 + n2 <= p - 1`:
//!   `l0 l1 l2 k_{n1-1}(l1 - l0) k_{n2-1}(l2 - l1)`
//!
//! Modes are ordered by polynomial degree, so the table for `p - 1` is a
//! prefix of the table for `p`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BasisError {
    #[error("polynomial degree must be at least 1, got {0}")]
    DegreeTooLow(usize),
    #[error("point ({0}, {1}) lies outside the reference triangle")]
    PointOutside(f64, f64),
}

/// Local edges as (start vertex, end vertex).
pub const LOCAL_EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeKind {
    Vertex(usize),
    Edge { edge: usize, order: usize },
    Interior { n1: usize, n2: usize },
}

impl ModeKind {
    pub fn is_interior(&self) -> bool {
        matches!(self, ModeKind::Interior { .. })
    }

    /// Polynomial degree of the mode.
    pub fn degree(&self) -> usize {
        match *self {
            ModeKind::Vertex(_) => 1,
            ModeKind::Edge { order, .. } => order,
            ModeKind::Interior { n1, n2 } => n1 + n2 + 1,
        }
    }
}

/// Values and reference gradients of all modes at one point.
#[derive(Debug, Clone)]
pub struct BasisValues {
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
}

/// Values and gradients of all modes at a set of points, row-major
/// `[point][mode]`.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub n_points: usize,
    pub n_modes: usize,
    pub values: Vec<f64>,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl Tabulation {
    #[inline]
    pub fn value_row(&self, point: usize) -> &[f64] {
        &self.values[point * self.n_modes..(point + 1) * self.n_modes]
    }
    #[inline]
    pub fn dx_row(&self, point: usize) -> &[f64] {
        &self.dx[point * self.n_modes..(point + 1) * self.n_modes]
    }
    #[inline]
    pub fn dy_row(&self, point: usize) -> &[f64] {
        &self.dy[point * self.n_modes..(point + 1) * self.n_modes]
    }
}

#[derive(Debug, Clone)]
pub struct ShapeTable {
    degree: usize,
    modes: Vec<ModeKind>,
}

/// Number of modes of each kind for degree `p`: (vertex, edge, interior).
pub fn mode_counts(p: usize) -> (usize, usize, usize) {
    let edge = 3 * (p - 1);
    let interior = if p >= 3 { (p - 1) * (p - 2) / 2 } else { 0 };
    (3, edge, interior)
}

/// Builds the hierarchic shape table of total degree `p`.
pub fn build_shape_table(p: usize) -> Result<ShapeTable, BasisError> {
    if p < 1 {
        return Err(BasisError::DegreeTooLow(p));
    }
    let mut modes = vec![
        ModeKind::Vertex(0),
        ModeKind::Vertex(1),
        ModeKind::Vertex(2),
    ];
    for d in 2..=p {
        for edge in 0..3 {
            modes.push(ModeKind::Edge { edge, order: d });
        }
        // interior modes of degree d have n1 + n2 = d - 1
        for n1 in (1..d.saturating_sub(1)).rev() {
            let n2 = d - 1 - n1;
            modes.push(ModeKind::Interior { n1, n2 });
        }
    }
    debug_assert_eq!(modes.len(), (p + 1) * (p + 2) / 2);
    Ok(ShapeTable { degree: p, modes })
}

/// Coefficient sign that maps a local edge mode of order `r` onto the global
/// edge function when the local edge direction is `reversed` relative to the
/// global one. Lobatto functions satisfy `l_r(-s) = (-1)^r l_r(s)`.
pub fn edge_orientation_sign(r: usize, reversed: bool) -> f64 {
    if reversed && r % 2 == 1 {
        -1.0
    } else {
        1.0
    }
}

/// Lobatto kernels `k_j(s)` and derivatives for `j = 0..count`.
///
/// `k_j = -4 sqrt((2r-1)/2) / (r (r-1)) * P'_{r-1}(s)` with `r = j + 2`.
fn kernels(s: f64, count: usize, k: &mut [f64], dk: &mut [f64]) {
    if count == 0 {
        return;
    }
    // Legendre P_n, P'_n, P''_n for n = 0..=count
    let n_max = count;
    let mut p_prev = 1.0;
    let mut p_cur = s;
    let mut d_prev = 0.0;
    let mut d_cur = 1.0;
    let mut dd_prev = 0.0;
    let mut dd_cur = 0.0;
    for n in 1..=n_max {
        // (p_cur, d_cur, dd_cur) hold P_n and its derivatives
        let r = (n + 1) as f64;
        let c = -4.0 * ((2.0 * r - 1.0) / 2.0).sqrt() / (r * (r - 1.0));
        k[n - 1] = c * d_cur;
        dk[n - 1] = c * dd_cur;
        if n == n_max {
            break;
        }
        let nf = n as f64;
        let p_next = ((2.0 * nf + 1.0) * s * p_cur - nf * p_prev) / (nf + 1.0);
        let d_next = d_prev + (2.0 * nf + 1.0) * p_cur;
        let dd_next = dd_prev + (2.0 * nf + 1.0) * d_cur;
        p_prev = p_cur;
        p_cur = p_next;
        d_prev = d_cur;
        d_cur = d_next;
        dd_prev = dd_cur;
        dd_cur = dd_next;
    }
}

const GRAD_LAMBDA: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

impl ShapeTable {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn modes(&self) -> &[ModeKind] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Evaluates all modes at `point`; fails if it lies outside the closed
    /// reference triangle by more than `1e-12`.
    pub fn eval_basis(&self, point: [f64; 2]) -> Result<BasisValues, BasisError> {
        let [x, y] = point;
        let tol = 1e-12;
        if x < -tol || y < -tol || x + y > 1.0 + tol {
            return Err(BasisError::PointOutside(x, y));
        }
        let n = self.len();
        let mut values = vec![0.0; n];
        let mut grads = vec![[0.0; 2]; n];
        self.eval_into(point, &mut values, &mut grads);
        Ok(BasisValues { values, grads })
    }

    /// Evaluates without the domain check. Used on quadrature points and in
    /// inner loops; callers guarantee the point is admissible.
    pub fn eval_into(&self, point: [f64; 2], values: &mut [f64], grads: &mut [[f64; 2]]) {
        let p = self.degree;
        let [x, y] = point;
        let lam = [1.0 - x - y, x, y];
        let nk = p.saturating_sub(1);
        // kernels along the three edge arguments l_b - l_a
        let mut k = [[0.0; 32]; 3];
        let mut dk = [[0.0; 32]; 3];
        assert!(nk <= 32, "degree too large for kernel buffer");
        for (e, &(a, b)) in LOCAL_EDGES.iter().enumerate() {
            kernels(lam[b] - lam[a], nk, &mut k[e], &mut dk[e]);
        }
        let grad_arg = |a: usize, b: usize| {
            [
                GRAD_LAMBDA[b][0] - GRAD_LAMBDA[a][0],
                GRAD_LAMBDA[b][1] - GRAD_LAMBDA[a][1],
            ]
        };
        let bubble = lam[0] * lam[1] * lam[2];
        let grad_bubble = [
            GRAD_LAMBDA[0][0] * lam[1] * lam[2]
                + lam[0] * GRAD_LAMBDA[1][0] * lam[2]
                + lam[0] * lam[1] * GRAD_LAMBDA[2][0],
            GRAD_LAMBDA[0][1] * lam[1] * lam[2]
                + lam[0] * GRAD_LAMBDA[1][1] * lam[2]
                + lam[0] * lam[1] * GRAD_LAMBDA[2][1],
        ];
        for (i, mode) in self.modes.iter().enumerate() {
            match *mode {
                ModeKind::Vertex(v) => {
                    values[i] = lam[v];
                    grads[i] = GRAD_LAMBDA[v];
                }
                ModeKind::Edge { edge, order } => {
                    let (a, b) = LOCAL_EDGES[edge];
                    let j = order - 2;
                    let prod = lam[a] * lam[b];
                    let gprod = [
                        GRAD_LAMBDA[a][0] * lam[b] + lam[a] * GRAD_LAMBDA[b][0],
                        GRAD_LAMBDA[a][1] * lam[b] + lam[a] * GRAD_LAMBDA[b][1],
                    ];
                    let ga = grad_arg(a, b);
                    let kv = k[edge][j];
                    let dkv = dk[edge][j];
                    values[i] = prod * kv;
                    grads[i] = [
                        gprod[0] * kv + prod * dkv * ga[0],
                        gprod[1] * kv + prod * dkv * ga[1],
                    ];
                }
                ModeKind::Interior { n1, n2 } => {
                    // arguments l1 - l0 (edge 0) and l2 - l1 (edge 1)
                    let k1 = k[0][n1 - 1];
                    let dk1 = dk[0][n1 - 1];
                    let k2 = k[1][n2 - 1];
                    let dk2 = dk[1][n2 - 1];
                    let g1 = grad_arg(0, 1);
                    let g2 = grad_arg(1, 2);
                    values[i] = bubble * k1 * k2;
                    grads[i] = [
                        grad_bubble[0] * k1 * k2
                            + bubble * (dk1 * g1[0] * k2 + k1 * dk2 * g2[0]),
                        grad_bubble[1] * k1 * k2
                            + bubble * (dk1 * g1[1] * k2 + k1 * dk2 * g2[1]),
                    ];
                }
            }
        }
    }

    /// Values and gradients at every point of `points`.
    pub fn tabulate(&self, points: &[[f64; 2]]) -> Tabulation {
        let n = self.len();
        let mut tab = Tabulation {
            n_points: points.len(),
            n_modes: n,
            values: vec![0.0; n * points.len()],
            dx: vec![0.0; n * points.len()],
            dy: vec![0.0; n * points.len()],
        };
        let mut grads = vec![[0.0; 2]; n];
        for (q, &pt) in points.iter().enumerate() {
            self.eval_into(pt, &mut tab.values[q * n..(q + 1) * n], &mut grads);
            for (i, g) in grads.iter().enumerate() {
                tab.dx[q * n + i] = g[0];
                tab.dy[q * n + i] = g[1];
            }
        }
        tab
    }

    /// Indices of the vertex and edge (skeleton) modes, in table order.
    pub fn skeleton_modes(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| !self.modes[i].is_interior())
            .collect()
    }

    /// Indices of the interior modes, in table order.
    pub fn interior_modes(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.modes[i].is_interior())
            .collect()
    }
}
