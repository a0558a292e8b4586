//! Degrees of freedom, Dirichlet elimination, and assembly of the stiffness
//! matrix, the load vector and the reaction term `lambda * int u^(2q+1) v`.
//!
//! Global numbering: vertex DOFs, then edge DOFs (`p - 1` per edge, orders
//! `2..=p`), then interior DOFs (per triangle). Free DOFs keep that order, so
//! the first [`HpSpace::n_skeleton`] free indices are vertex/edge DOFs and
//! the rest are interior DOFs.

use std::io::Write;
use std::sync::Arc;

use crate::basis::{build_shape_table, edge_orientation_sign, BasisError, ModeKind, ShapeTable, Tabulation};
use crate::dense::{backward_substitution, cholesky_in_place, forward_substitution};
use crate::flops::{FlopMeter, Phase};
use crate::geometry::Point;
use crate::mesh::{EdgeKind, EdgeTag, HpMesh};
use crate::poly::Poly2;
use crate::quadrature::{triangle_rule, TriangleRule};

/// Continuous piecewise polynomials of uniform degree `p` vanishing on the
/// Dirichlet boundary.
#[derive(Debug, Clone)]
pub struct HpSpace {
    mesh: Arc<HpMesh>,
    table: ShapeTable,
    n_global: usize,
    /// `[t * n_modes + i]`: global index of local mode `i` on triangle `t`
    local_to_global: Vec<usize>,
    /// orientation sign per local mode
    signs: Vec<f64>,
    /// free index per global DOF
    free_of_global: Vec<Option<usize>>,
    n_free: usize,
    n_skeleton: usize,
}

impl HpSpace {
    pub fn build(mesh: Arc<HpMesh>, p: usize) -> Result<Self, BasisError> {
        let table = build_shape_table(p)?;
        let nv = mesh.vertices().len();
        let ne = mesh.edges().len();
        let nt = mesh.num_triangles();
        let per_edge = p - 1;
        let n_int = table.interior_modes().len();
        let edge_base = nv;
        let int_base = nv + ne * per_edge;
        let n_global = int_base + nt * n_int;

        let mut constrained = vec![false; n_global];
        for (v, &d) in mesh.dirichlet_vertices().iter().enumerate() {
            constrained[v] = d;
        }
        for (e, edge) in mesh.edges().iter().enumerate() {
            if let EdgeTag::Boundary {
                kind: EdgeKind::Dirichlet,
                ..
            } = edge.tag
            {
                for k in 0..per_edge {
                    constrained[edge_base + e * per_edge + k] = true;
                }
            }
        }
        let mut free_of_global = vec![None; n_global];
        let mut n_free = 0;
        let mut n_skeleton = 0;
        for g in 0..n_global {
            if !constrained[g] {
                free_of_global[g] = Some(n_free);
                n_free += 1;
                if g < int_base {
                    n_skeleton += 1;
                }
            }
        }

        let nm = table.len();
        let mut local_to_global = vec![0; nt * nm];
        let mut signs = vec![1.0; nt * nm];
        for t in 0..nt {
            let tri = mesh.triangles()[t];
            let tedges = mesh.triangle_edges(t);
            let mut interior = 0;
            for (i, mode) in table.modes().iter().enumerate() {
                let (g, s) = match *mode {
                    ModeKind::Vertex(v) => (tri[v], 1.0),
                    ModeKind::Edge { edge, order } => {
                        let reversed = tri[edge] > tri[(edge + 1) % 3];
                        (
                            edge_base + tedges[edge] * per_edge + order - 2,
                            edge_orientation_sign(order, reversed),
                        )
                    }
                    ModeKind::Interior { .. } => {
                        interior += 1;
                        (int_base + t * n_int + interior - 1, 1.0)
                    }
                };
                local_to_global[t * nm + i] = g;
                signs[t * nm + i] = s;
            }
        }
        Ok(Self {
            mesh,
            table,
            n_global,
            local_to_global,
            signs,
            free_of_global,
            n_free,
            n_skeleton,
        })
    }

    pub fn mesh(&self) -> &HpMesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<HpMesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.table.degree()
    }

    pub fn table(&self) -> &ShapeTable {
        &self.table
    }

    pub fn n_modes(&self) -> usize {
        self.table.len()
    }

    /// Number of global DOFs before Dirichlet elimination.
    pub fn n_global(&self) -> usize {
        self.n_global
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    /// Free vertex and edge DOFs; these are free indices `0..n_skeleton`.
    pub fn n_skeleton(&self) -> usize {
        self.n_skeleton
    }

    pub fn global_dofs(&self, t: usize) -> &[usize] {
        let nm = self.n_modes();
        &self.local_to_global[t * nm..(t + 1) * nm]
    }

    pub fn signs(&self, t: usize) -> &[f64] {
        let nm = self.n_modes();
        &self.signs[t * nm..(t + 1) * nm]
    }

    pub fn free_index(&self, global: usize) -> Option<usize> {
        self.free_of_global[global]
    }

    /// Free index of every local mode on triangle `t` (`None` if constrained).
    pub fn free_dofs(&self, t: usize) -> Vec<Option<usize>> {
        self.global_dofs(t)
            .iter()
            .map(|&g| self.free_of_global[g])
            .collect()
    }

    /// Signed local coefficients of a free coefficient vector on triangle `t`.
    pub fn gather(&self, t: usize, u: &[f64], out: &mut [f64]) {
        for ((o, &g), &s) in out.iter_mut().zip(self.global_dofs(t)).zip(self.signs(t)) {
            *o = match self.free_of_global[g] {
                Some(f) => s * u[f],
                None => 0.0,
            };
        }
    }

    /// Signed local coefficients of a global (unconstrained) vector.
    pub fn gather_global(&self, t: usize, u: &[f64], out: &mut [f64]) {
        for ((o, &g), &s) in out.iter_mut().zip(self.global_dofs(t)).zip(self.signs(t)) {
            *o = s * u[g];
        }
    }

    /// Restricts a global coefficient vector to the free DOFs.
    pub fn restrict(&self, global: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (g, f) in self.free_of_global.iter().enumerate() {
            if let Some(f) = f {
                out[*f] = global[g];
            }
        }
        out
    }

    /// Extends a free coefficient vector by zeros on constrained DOFs.
    pub fn extend(&self, free: &[f64]) -> Vec<f64> {
        self.free_of_global
            .iter()
            .map(|f| f.map_or(0.0, |f| free[f]))
            .collect()
    }

    /// Value and physical gradient of the discrete function `u` (free
    /// coefficients) at reference point `xi` of triangle `t`.
    pub fn eval(&self, u: &[f64], t: usize, xi: [f64; 2]) -> (f64, [f64; 2]) {
        let nm = self.n_modes();
        let mut c = vec![0.0; nm];
        self.gather(t, u, &mut c);
        self.eval_local(&c, t, xi)
    }

    pub(crate) fn eval_local(&self, c: &[f64], t: usize, xi: [f64; 2]) -> (f64, [f64; 2]) {
        let nm = self.n_modes();
        let mut vals = vec![0.0; nm];
        let mut grads = vec![[0.0; 2]; nm];
        self.table.eval_into(xi, &mut vals, &mut grads);
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for i in 0..nm {
            v += c[i] * vals[i];
            g[0] += c[i] * grads[i][0];
            g[1] += c[i] * grads[i][1];
        }
        let map = self.mesh.affine_map(t);
        let inv = map.inverse_matrix();
        (v, map.push_gradient(&inv, g))
    }
}

/// Element matrix with orientation signs applied, row-major `n_modes^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatrix {
    pub dofs: Vec<Option<usize>>,
    pub values: Vec<f64>,
}

/// Lower-triangular packed symmetric matrix; row `i` holds `(i, 0..=i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedLower {
    n: usize,
    data: Vec<f64>,
}

impl PackedLower {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(i: usize, j: usize) -> usize {
        i * (i + 1) / 2 + j
    }

    /// Entry `(i, j)` in either triangle.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.data[Self::offset(i, j)]
    }

    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i);
        self.data[Self::offset(i, j)] += v;
    }

    /// Full row-major copy of the lower triangle (upper part zero).
    pub fn to_row_major_lower(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            out[i * n..i * n + i + 1]
                .copy_from_slice(&self.data[Self::offset(i, 0)..Self::offset(i, 0) + i + 1]);
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = &self.data[Self::offset(i, 0)..Self::offset(i, 0) + i + 1];
            let mut s = 0.0;
            for j in 0..i {
                s += row[j] * x[j];
                y[j] += row[j] * x[i];
            }
            y[i] += s + row[i] * x[i];
        }
        y
    }

    /// Plain-text dump: dimension, then one line per row of the lower triangle.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.n)?;
        for i in 0..self.n {
            let row: Vec<String> = (0..=i).map(|j| format!("{:.16e}", self.get(i, j))).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Plain-text vector dump: length, then one entry per line.
pub fn write_vector_text<W: Write>(v: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", v.len())?;
    for x in v {
        writeln!(w, "{x:.16e}")?;
    }
    Ok(())
}

/// Symmetric system over the free DOFs, stored as element blocks.
#[derive(Debug, Clone)]
pub struct SymmetricSystem {
    n: usize,
    n_skeleton: usize,
    blocks: Vec<ElementMatrix>,
}

impl SymmetricSystem {
    pub fn new(n: usize, n_skeleton: usize, blocks: Vec<ElementMatrix>) -> Self {
        Self {
            n,
            n_skeleton,
            blocks,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_skeleton(&self) -> usize {
        self.n_skeleton
    }

    pub fn blocks(&self) -> &[ElementMatrix] {
        &self.blocks
    }

    /// Global matrix, summing element contributions in element order into
    /// the lower triangle only.
    pub fn to_packed(&self) -> PackedLower {
        let mut m = PackedLower::zeros(self.n);
        for b in &self.blocks {
            let nm = b.dofs.len();
            for (i, di) in b.dofs.iter().enumerate() {
                let Some(gi) = *di else { continue };
                for (j, dj) in b.dofs.iter().enumerate() {
                    let Some(gj) = *dj else { continue };
                    if gj <= gi {
                        m.add_lower(gi, gj, b.values[i * nm + j]);
                    }
                }
            }
        }
        m
    }

    /// `A x` computed element by element.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for b in &self.blocks {
            let nm = b.dofs.len();
            for (i, di) in b.dofs.iter().enumerate() {
                let Some(gi) = *di else { continue };
                let mut s = 0.0;
                for (j, dj) in b.dofs.iter().enumerate() {
                    if let Some(gj) = *dj {
                        s += b.values[i * nm + j] * x[gj];
                    }
                }
                y[gi] += s;
            }
        }
        y
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reference-element derivative products `int d_a phi_i d_b phi_j`.
fn reference_stiffness(table: &ShapeTable, rule: &TriangleRule) -> [Vec<f64>; 3] {
    let tab = table.tabulate(&rule.points);
    let n = table.len();
    let mut sxx = vec![0.0; n * n];
    let mut sxy = vec![0.0; n * n];
    let mut syy = vec![0.0; n * n];
    for q in 0..tab.n_points {
        let w = rule.weights[q];
        let dx = tab.dx_row(q);
        let dy = tab.dy_row(q);
        for i in 0..n {
            let (wx, wy) = (w * dx[i], w * dy[i]);
            for j in 0..n {
                sxx[i * n + j] += wx * dx[j];
                sxy[i * n + j] += wx * dy[j];
                syy[i * n + j] += wy * dy[j];
            }
        }
    }
    [sxx, sxy, syy]
}

/// Stiffness matrix of `a(v, w) = int grad v . grad w`, integrated with the
/// degree-`2p` rule.
pub fn assemble_stiffness(space: &HpSpace, meter: &FlopMeter) -> SymmetricSystem {
    assemble_stiffness_with_degree(space, 2 * space.degree(), meter)
}

pub fn assemble_stiffness_with_degree(space: &HpSpace, degree: usize, meter: &FlopMeter) -> SymmetricSystem {
    let rule = triangle_rule(degree);
    let [sxx, sxy, syy] = reference_stiffness(space.table(), &rule);
    let n = space.n_modes();
    let mesh = space.mesh();
    let mut blocks = Vec::with_capacity(mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let map = mesh.affine_map(t);
        let inv = map.inverse_matrix();
        let det = map.det().abs();
        let g00 = det * (inv[0][0] * inv[0][0] + inv[0][1] * inv[0][1]);
        let g01 = det * (inv[0][0] * inv[1][0] + inv[0][1] * inv[1][1]);
        let g11 = det * (inv[1][0] * inv[1][0] + inv[1][1] * inv[1][1]);
        let s = space.signs(t);
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = g00 * sxx[i * n + j]
                    + g01 * (sxy[i * n + j] + sxy[j * n + i])
                    + g11 * syy[i * n + j];
                let v = s[i] * s[j] * v;
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        blocks.push(ElementMatrix {
            dofs: space.free_dofs(t),
            values,
        });
    }
    let reference = 6 * (rule.len() * n * n) as u64;
    let per_element = 8 * (n * (n + 1) / 2) as u64;
    meter.add(Phase::Setup, reference + per_element * mesh.num_triangles() as u64);
    SymmetricSystem::new(space.n_free(), space.n_skeleton(), blocks)
}

/// Mass matrix `int v w`, from the reference mass matrix scaled by `|det B|`.
pub fn assemble_mass(space: &HpSpace) -> SymmetricSystem {
    let rule = triangle_rule(2 * space.degree());
    let tab = space.table().tabulate(&rule.points);
    let n = space.n_modes();
    let mut reference = vec![0.0; n * n];
    for q in 0..tab.n_points {
        let v = tab.value_row(q);
        for i in 0..n {
            for j in 0..n {
                reference[i * n + j] += rule.weights[q] * v[i] * v[j];
            }
        }
    }
    let mesh = space.mesh();
    let blocks = (0..mesh.num_triangles())
        .map(|t| {
            let det = mesh.affine_map(t).det().abs();
            let s = space.signs(t);
            let mut values = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    values[i * n + j] = det * s[i] * s[j] * reference[i * n + j];
                }
            }
            ElementMatrix {
                dofs: space.free_dofs(t),
                values,
            }
        })
        .collect();
    SymmetricSystem::new(space.n_free(), space.n_skeleton(), blocks)
}

/// Polynomial surrogate of the source term `f`.
#[derive(Debug, Clone)]
pub enum DataSurrogate {
    /// `f` is a global polynomial and is used exactly.
    Polynomial(Poly2),
    /// Element-wise L2 projection onto polynomials of degree `degree`,
    /// coefficients in the hierarchic basis of that degree.
    Projected {
        degree: usize,
        table: ShapeTable,
        coeffs: Vec<Vec<f64>>,
    },
}

impl DataSurrogate {
    pub fn constant(c: f64) -> Self {
        DataSurrogate::Polynomial(Poly2::constant(c))
    }

    /// Element-wise L2 projection of `f` onto `P^degree(T)`, computed with a
    /// degree `2 degree + 2` rule.
    pub fn project(mesh: &HpMesh, f: impl Fn(Point) -> f64, degree: usize) -> Result<Self, BasisError> {
        let table = build_shape_table(degree.max(1))?;
        let rule = triangle_rule(2 * degree.max(1) + 2);
        let tab = table.tabulate(&rule.points);
        let n = table.len();
        let mut mass = vec![0.0; n * n];
        for q in 0..tab.n_points {
            let v = tab.value_row(q);
            for i in 0..n {
                for j in 0..n {
                    mass[i * n + j] += rule.weights[q] * v[i] * v[j];
                }
            }
        }
        cholesky_in_place(&mut mass, n, 1e-14).expect("reference mass matrix is SPD");
        let coeffs = (0..mesh.num_triangles())
            .map(|t| {
                let map = mesh.affine_map(t);
                let mut rhs = vec![0.0; n];
                for q in 0..tab.n_points {
                    let fx = f(map.forward(rule.points[q]));
                    let v = tab.value_row(q);
                    for i in 0..n {
                        rhs[i] += rule.weights[q] * fx * v[i];
                    }
                }
                forward_substitution(&mass, n, &mut rhs);
                backward_substitution(&mass, n, &mut rhs);
                rhs
            })
            .collect();
        Ok(DataSurrogate::Projected {
            degree,
            table,
            coeffs,
        })
    }

    /// Polynomial degree of the surrogate.
    pub fn degree(&self) -> usize {
        match self {
            DataSurrogate::Polynomial(p) => p.degree(),
            DataSurrogate::Projected { degree, .. } => *degree,
        }
    }

    /// Values at the mapped quadrature points of triangle `t`.
    fn values_on(&self, mesh: &HpMesh, t: usize, rule: &TriangleRule) -> Vec<f64> {
        match self {
            DataSurrogate::Polynomial(p) => {
                let map = mesh.affine_map(t);
                rule.points
                    .iter()
                    .map(|&xi| {
                        let x = map.forward(xi);
                        p.eval(x.x, x.y)
                    })
                    .collect()
            }
            DataSurrogate::Projected { table, coeffs, .. } => {
                let c = &coeffs[t];
                let n = table.len();
                let mut vals = vec![0.0; n];
                let mut grads = vec![[0.0; 2]; n];
                rule.points
                    .iter()
                    .map(|&xi| {
                        table.eval_into(xi, &mut vals, &mut grads);
                        dot(c, &vals)
                    })
                    .collect()
            }
        }
    }
}

/// Load vector `int Pi(f) phi_i` over the free DOFs, exact for the surrogate.
pub fn assemble_load(space: &HpSpace, f: &DataSurrogate, meter: &FlopMeter) -> Vec<f64> {
    let p = space.degree();
    let rule = triangle_rule((f.degree() + p).max(2 * p));
    let tab = space.table().tabulate(&rule.points);
    let n = space.n_modes();
    let mesh = space.mesh();
    let mut load = vec![0.0; space.n_free()];
    let mut local = vec![0.0; n];
    for t in 0..mesh.num_triangles() {
        let det = mesh.affine_map(t).det().abs();
        let fv = f.values_on(mesh, t, &rule);
        local.iter_mut().for_each(|v| *v = 0.0);
        for q in 0..tab.n_points {
            let g = rule.weights[q] * det * fv[q];
            for (l, v) in local.iter_mut().zip(tab.value_row(q)) {
                *l += g * v;
            }
        }
        for ((&g, &s), &l) in space.global_dofs(t).iter().zip(space.signs(t)).zip(&local) {
            if let Some(fi) = space.free_index(g) {
                load[fi] += s * l;
            }
        }
    }
    meter.add(
        Phase::Setup,
        (mesh.num_triangles() * tab.n_points * (2 * n + 2)) as u64,
    );
    load
}

/// The reaction term `lambda * int u^(2q+1) phi_i`, integrated exactly.
#[derive(Debug, Clone)]
pub struct NonlinearForm {
    lambda: f64,
    q: usize,
    rule: TriangleRule,
    tab: Tabulation,
    dets: Vec<f64>,
}

impl NonlinearForm {
    pub fn new(space: &HpSpace, lambda: f64, q: usize) -> Self {
        let p = space.degree();
        let rule = triangle_rule((2 * p * (q + 1)).max(2 * p));
        let tab = space.table().tabulate(&rule.points);
        let mesh = space.mesh();
        let dets = (0..mesh.num_triangles())
            .map(|t| mesh.affine_map(t).det().abs())
            .collect();
        Self {
            lambda,
            q,
            rule,
            tab,
            dets,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn exponent(&self) -> usize {
        2 * self.q + 1
    }

    /// Evaluates the reaction vector at the free coefficient vector `u`.
    pub fn apply(&self, space: &HpSpace, u: &[f64], meter: &FlopMeter) -> Vec<f64> {
        let n = space.n_modes();
        let npts = self.tab.n_points;
        let power = self.exponent() as i32;
        let mut out = vec![0.0; space.n_free()];
        let mut c = vec![0.0; n];
        let mut g = vec![0.0; npts];
        let mut local = vec![0.0; n];
        for (t, &det) in self.dets.iter().enumerate() {
            space.gather(t, u, &mut c);
            for q in 0..npts {
                let uq = dot(self.tab.value_row(q), &c);
                g[q] = self.rule.weights[q] * det * self.lambda * uq.powi(power);
            }
            local.iter_mut().for_each(|v| *v = 0.0);
            for q in 0..npts {
                let gq = g[q];
                for (l, v) in local.iter_mut().zip(self.tab.value_row(q)) {
                    *l += gq * v;
                }
            }
            for ((&gi, &s), &l) in space.global_dofs(t).iter().zip(space.signs(t)).zip(&local) {
                if let Some(fi) = space.free_index(gi) {
                    out[fi] += s * l;
                }
            }
        }
        let per_point = 4 * n as u64 + 2 * self.q as u64 + 3;
        meter.add(
            Phase::NonlinearEval,
            self.dets.len() as u64 * npts as u64 * per_point,
        );
        out
    }
}

/// One-shot evaluation of `lambda * int u^(2q+1) phi_i`.
pub fn assemble_nonlinear(space: &HpSpace, u: &[f64], lambda: f64, q: usize, meter: &FlopMeter) -> Vec<f64> {
    NonlinearForm::new(space, lambda, q).apply(space, u, meter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_initial_mesh, InitialMesh, PolygonDomain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square32() -> Arc<HpMesh> {
        Arc::new(build_initial_mesh(&PolygonDomain::unit_square(), &InitialMesh::Square32).unwrap())
    }

    fn two_triangles() -> Arc<HpMesh> {
        Arc::new(
            build_initial_mesh(
                &PolygonDomain::unit_square(),
                &InitialMesh::Explicit {
                    vertices: vec![
                        Point::new(0.0, 0.0),
                        Point::new(1.0, 0.0),
                        Point::new(1.0, 1.0),
                        Point::new(0.0, 1.0),
                    ],
                    triangles: vec![[0, 1, 2], [0, 2, 3]],
                },
            )
            .unwrap(),
        )
    }

    /// Unit square with only the bottom edge Dirichlet.
    fn square32_mostly_neumann() -> Arc<HpMesh> {
        let d = PolygonDomain::new(PolygonDomain::unit_square().corners().to_vec(), &[0]).unwrap();
        Arc::new(build_initial_mesh(&d, &InitialMesh::Square32).unwrap())
    }

    #[test]
    fn free_dof_counts() {
        let s = HpSpace::build(two_triangles(), 1).unwrap();
        assert_eq!(s.n_free(), 0);
        let m = square32();
        let s1 = HpSpace::build(m.clone(), 1).unwrap();
        assert_eq!(s1.n_free(), 9);
        let interior_edges = m.edges().iter().filter(|e| e.tag == EdgeTag::Interior).count();
        // Euler: E = V + F - 1 = 56, 16 boundary edges
        assert_eq!(interior_edges, 56 - 16);
        let s2 = HpSpace::build(m.clone(), 2).unwrap();
        assert_eq!(s2.n_free(), 9 + interior_edges);
        let s5 = HpSpace::build(m.clone(), 5).unwrap();
        assert_eq!(s5.n_free(), 9 + 4 * interior_edges + 6 * 32);
        assert_eq!(s5.n_skeleton(), 9 + 4 * interior_edges);
        let full = m.vertices().len() + m.edges().len() * 4 + 32 * 6;
        assert_eq!(s5.n_global(), full);
    }

    #[test]
    fn neumann_edges_keep_their_dofs() {
        let s = HpSpace::build(square32_mostly_neumann(), 3).unwrap();
        // only the 5 bottom vertices and the 4 bottom edges are constrained
        assert_eq!(s.n_free(), s.n_global() - 5 - 4 * 2);
    }

    #[test]
    fn five_point_stencil_diagonal() {
        let m = square32();
        let s = HpSpace::build(m.clone(), 1).unwrap();
        let a = assemble_stiffness(&s, &FlopMeter::new()).to_packed();
        // interior vertex (0.5, 0.5) has a complete patch of 6 or 8 right triangles
        let centre = m
            .vertices()
            .iter()
            .position(|v| *v == Point::new(0.5, 0.5))
            .unwrap();
        let f = s.free_index(centre).unwrap();
        assert!((a.get(f, f) - 4.0).abs() < 1e-13);
    }

    #[test]
    fn affine_energy_matches_closed_form() {
        // u = 2x + 3y, v = x - y on the free-boundary-free space: use global
        // coefficients directly through element matrices
        let m = square32();
        let s = HpSpace::build(m.clone(), 2).unwrap();
        let sys = assemble_stiffness_with_degree(&s, 4, &FlopMeter::new());
        let nodal = |f: &dyn Fn(Point) -> f64| -> Vec<f64> {
            let mut g = vec![0.0; s.n_global()];
            for (v, p) in m.vertices().iter().enumerate() {
                g[v] = f(*p);
            }
            g
        };
        let u = nodal(&|p| 2.0 * p.x + 3.0 * p.y);
        let v = nodal(&|p| p.x - p.y);
        let mut total = 0.0;
        let n = s.n_modes();
        let (mut cu, mut cv) = (vec![0.0; n], vec![0.0; n]);
        for (t, b) in sys.blocks().iter().enumerate() {
            s.gather_global(t, &u, &mut cu);
            s.gather_global(t, &v, &mut cv);
            // element matrices carry signs already; undo them on both sides
            let sg = s.signs(t);
            for i in 0..n {
                for j in 0..n {
                    total += cu[i] * sg[i] * b.values[i * n + j] * sg[j] * cv[j];
                }
            }
        }
        // grad u . grad v = 2 - 3 = -1 over unit area
        assert!((total + 1.0).abs() < 1e-13);
    }

    #[test]
    fn stiffness_is_spd_and_symmetric() {
        let s = HpSpace::build(square32(), 4).unwrap();
        let sys = assemble_stiffness(&s, &FlopMeter::new());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..s.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(sys.quadratic_form(&x) > 0.0);
        }
        let packed = sys.to_packed();
        let x: Vec<f64> = (0..s.n_free()).map(|i| (i as f64 * 0.37).cos()).collect();
        let y1 = packed.matvec(&x);
        let y2 = sys.matvec(&x);
        for i in 0..x.len() {
            assert!((y1[i] - y2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn over_integration_does_not_change_stiffness() {
        let s = HpSpace::build(square32(), 5).unwrap();
        let a = assemble_stiffness(&s, &FlopMeter::new());
        let b = assemble_stiffness_with_degree(&s, 16, &FlopMeter::new());
        for (ea, eb) in a.blocks().iter().zip(b.blocks()) {
            let scale = ea.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (x, y) in ea.values.iter().zip(&eb.values) {
                assert!((x - y).abs() <= 1e-13 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn assembly_is_deterministic() {
        let s = HpSpace::build(square32(), 3).unwrap();
        let a = assemble_stiffness(&s, &FlopMeter::new()).to_packed();
        let b = assemble_stiffness(&s, &FlopMeter::new()).to_packed();
        assert_eq!(a, b);
    }

    #[test]
    fn hat_function_load() {
        let m = square32();
        let s = HpSpace::build(m.clone(), 1).unwrap();
        let load = assemble_load(&s, &DataSurrogate::constant(1.0), &FlopMeter::new());
        for (v, p) in m.vertices().iter().enumerate() {
            let Some(f) = s.free_index(v) else { continue };
            let patch: f64 = (0..m.num_triangles())
                .filter(|&t| m.triangles()[t].contains(&v))
                .map(|t| m.area(t))
                .sum();
            assert!((load[f] - patch / 3.0).abs() < 1e-15, "{p:?}");
        }
        let zero = assemble_load(&s, &DataSurrogate::constant(0.0), &FlopMeter::new());
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn partition_of_unity_load() {
        // all-Neumann is not admissible, so integrate against the global
        // interpolant of 1 using constrained DOFs as well
        let m = square32();
        let s = HpSpace::build(m.clone(), 3).unwrap();
        let f = DataSurrogate::Polynomial(Poly2::x());
        let rule = triangle_rule(4);
        let tab = s.table().tabulate(&rule.points);
        let mut total = 0.0;
        for t in 0..m.num_triangles() {
            let det = m.affine_map(t).det().abs();
            let vals = f.values_on(&m, t, &rule);
            for q in 0..tab.n_points {
                // sum of the vertex modes is 1
                let one: f64 = tab.value_row(q)[..3].iter().sum();
                total += rule.weights[q] * det * vals[q] * one;
            }
        }
        assert!((total - 0.5).abs() < 1e-13);
    }

    #[test]
    fn projected_surrogate_reproduces_polynomials() {
        let m = square32();
        let poly = &(&Poly2::x() * &Poly2::y()) + &Poly2::constant(2.0);
        let proj = DataSurrogate::project(&m, |p| poly.eval(p.x, p.y), 3).unwrap();
        let exact = DataSurrogate::Polynomial(poly.clone());
        let s = HpSpace::build(m.clone(), 2).unwrap();
        let a = assemble_load(&s, &proj, &FlopMeter::new());
        let b = assemble_load(&s, &exact, &FlopMeter::new());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn nonlinear_zero_and_linear_case() {
        let s = HpSpace::build(square32(), 3).unwrap();
        let meter = FlopMeter::new();
        let zero = assemble_nonlinear(&s, &vec![0.0; s.n_free()], 2.0, 1, &meter);
        assert!(zero.iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..s.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lambda = 1.7;
        let b = assemble_nonlinear(&s, &u, lambda, 0, &meter);
        let mu = assemble_mass(&s).matvec(&u);
        for (x, y) in b.iter().zip(&mu) {
            assert!((x - lambda * y).abs() < 1e-13);
        }
        assert!(meter.get(Phase::NonlinearEval) > 0);
    }

    #[test]
    fn nonlinear_form_is_monotone() {
        let s = HpSpace::build(square32(), 4).unwrap();
        let form = NonlinearForm::new(&s, 1.0, 1);
        let meter = FlopMeter::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let u: Vec<f64> = (0..s.n_free()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..s.n_free()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let bu = form.apply(&s, &u, &meter);
            let bv = form.apply(&s, &v, &meter);
            let pairing: f64 = (0..u.len()).map(|i| (bu[i] - bv[i]) * (u[i] - v[i])).sum();
            assert!(pairing >= -1e-12);
        }
    }

    #[test]
    fn text_dumps() {
        let s = HpSpace::build(square32(), 1).unwrap();
        let a = assemble_stiffness(&s, &FlopMeter::new()).to_packed();
        let mut buf = Vec::new();
        a.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert_eq!(text.lines().next().unwrap(), "9");
        let mut vbuf = Vec::new();
        write_vector_text(&[1.0, 0.1], &mut vbuf).unwrap();
        let v = String::from_utf8(vbuf).unwrap();
        let parsed: f64 = v.lines().nth(2).unwrap().parse().unwrap();
        assert_eq!(parsed, 0.1);
    }
}
