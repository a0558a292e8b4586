//! Polygonal domains and conforming triangulations with geometric refinement
//! towards the domain corners.
//!
//! Refinement keeps a red-refined "permanent" triangulation that may carry
//! hanging nodes; the conforming mesh is obtained from it by green bisection
//! of every triangle with one hanging node. Green closures are rebuilt from
//! scratch on every refinement pass.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::geometry::{
    point_segment_distance, point_triangle_distance, signed_area, AffineMap, Point,
};

/// Grading factor produced by midpoint (red) subdivision.
pub const SIGMA: f64 = 0.5;

/// Refinement is refused if it would create an angle below this (degrees).
pub const MIN_ANGLE_DEGREES: f64 = 10.0;

/// Mesh-family constant in the graded-mesh bounds
/// `sigma / C <= diam(T) / dist(T, corners) <= C / sigma`.
pub const GEO_FAMILY_CONSTANT: f64 = 2.0;

const GEOM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonConforming(usize, usize),
    #[error("triangle list does not tile the polygon: {0}")]
    NotTiling(String),
    #[error("domain corner {0} is not a mesh vertex")]
    CornerNotResolved(usize),
    #[error("triangle {0} has non-positive signed area")]
    NonPositiveArea(usize),
    #[error("refinement would create triangle {triangle} with minimum angle {degrees:.3} deg")]
    AngleTooSmall { triangle: usize, degrees: f64 },
    #[error("point ({0}, {1}) lies outside the domain")]
    OutsideDomain(f64, f64),
    #[error("malformed mesh file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Dirichlet,
    Neumann,
}

/// A simple polygon with counterclockwise corners; edge `i` joins corner `i`
/// to corner `i + 1` (cyclically).
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonDomain {
    corners: Vec<Point>,
    kinds: Vec<EdgeKind>,
}

impl PolygonDomain {
    /// `dirichlet_edges` holds 0-based edge indices; every other edge is Neumann.
    pub fn new(corners: Vec<Point>, dirichlet_edges: &[usize]) -> Result<Self, MeshError> {
        let m = corners.len();
        if m < 3 {
            return Err(MeshError::InvalidDomain(format!("{m} corners")));
        }
        if dirichlet_edges.is_empty() {
            return Err(MeshError::InvalidDomain(
                "the Dirichlet edge set must not be empty".into(),
            ));
        }
        let mut kinds = vec![EdgeKind::Neumann; m];
        for &e in dirichlet_edges {
            if e >= m {
                return Err(MeshError::InvalidDomain(format!("edge index {e} out of range")));
            }
            kinds[e] = EdgeKind::Dirichlet;
        }
        let domain = Self { corners, kinds };
        if domain.signed_area() <= 0.0 {
            return Err(MeshError::InvalidDomain(
                "corners must be ordered counterclockwise".into(),
            ));
        }
        for i in 0..m {
            let (a, b) = domain.edge(i);
            if a.dist(b) == 0.0 {
                return Err(MeshError::InvalidDomain(format!("edge {i} is degenerate")));
            }
            for j in i + 1..m {
                if j == i + 1 || (i == 0 && j == m - 1) {
                    continue;
                }
                let (c, d) = domain.edge(j);
                if segments_intersect(a, b, c, d) {
                    return Err(MeshError::InvalidDomain(format!(
                        "edges {i} and {j} intersect"
                    )));
                }
            }
        }
        for i in 0..m {
            let w = domain.interior_angle(i);
            if !(w > 0.0 && w < 2.0 * PI) || (w - PI).abs() < 1e-12 {
                return Err(MeshError::InvalidDomain(format!(
                    "corner {i} has interior angle {w}"
                )));
            }
        }
        Ok(domain)
    }

    pub fn all_dirichlet(corners: Vec<Point>) -> Result<Self, MeshError> {
        let d: Vec<usize> = (0..corners.len()).collect();
        Self::new(corners, &d)
    }

    /// `(0,1)^2` with homogeneous Dirichlet conditions on every edge.
    pub fn unit_square() -> Self {
        Self::all_dirichlet(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ])
        .expect("unit square is valid")
    }

    /// `(-1,1)^2 \ [0,1) x (-1,0]` with Dirichlet conditions on every edge.
    pub fn l_shape() -> Self {
        Self::all_dirichlet(vec![
            Point::new(-1.0, -1.0),
            Point::new(0.0, -1.0),
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(-1.0, 1.0),
        ])
        .expect("L-shape is valid")
    }

    pub fn corners(&self) -> &[Point] {
        &self.corners
    }

    pub fn num_edges(&self) -> usize {
        self.corners.len()
    }

    pub fn edge(&self, i: usize) -> (Point, Point) {
        let m = self.corners.len();
        (self.corners[i], self.corners[(i + 1) % m])
    }

    pub fn edge_kind(&self, i: usize) -> EdgeKind {
        self.kinds[i]
    }

    pub fn dirichlet_edges(&self) -> Vec<usize> {
        (0..self.kinds.len())
            .filter(|&i| self.kinds[i] == EdgeKind::Dirichlet)
            .collect()
    }

    pub fn signed_area(&self) -> f64 {
        let m = self.corners.len();
        0.5 * (0..m)
            .map(|i| self.corners[i].cross(self.corners[(i + 1) % m]))
            .sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Interior angle at corner `i`, in `(0, 2 pi)`.
    pub fn interior_angle(&self, i: usize) -> f64 {
        let m = self.corners.len();
        let prev = self.corners[(i + m - 1) % m];
        let cur = self.corners[i];
        let next = self.corners[(i + 1) % m];
        let a = prev - cur;
        let b = next - cur;
        // angle swept counterclockwise from b to a
        let mut w = b.cross(a).atan2(b.dot(a));
        if w <= 0.0 {
            w += 2.0 * PI;
        }
        w
    }

    /// Index of the domain edge containing segment `[a, b]`, if any.
    pub fn edge_containing(&self, a: Point, b: Point) -> Option<usize> {
        (0..self.num_edges()).find(|&i| {
            let (c, d) = self.edge(i);
            let scale = c.dist(d).max(1.0);
            point_segment_distance(a, c, d) <= GEOM_TOL * scale
                && point_segment_distance(b, c, d) <= GEOM_TOL * scale
        })
    }

    /// Whether `p` lies in the closed polygon, up to `tol`.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        let m = self.corners.len();
        for i in 0..m {
            let (a, b) = self.edge(i);
            if point_segment_distance(p, a, b) <= tol {
                return true;
            }
        }
        // even-odd ray cast
        let mut inside = false;
        for i in 0..m {
            let (a, b) = self.edge(i);
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = signed_area(a, b, c);
    let o2 = signed_area(a, b, d);
    let o3 = signed_area(c, d, a);
    let o4 = signed_area(c, d, b);
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    let on = |p: Point, q: Point, r: Point| point_segment_distance(r, p, q) <= GEOM_TOL;
    on(a, b, c) || on(a, b, d) || on(c, d, a) || on(c, d, b)
}

/// Boundary classification of a mesh edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeTag {
    Interior,
    Boundary { domain_edge: usize, kind: EdgeKind },
    /// Owned by a single triangle but not lying on the domain boundary.
    Unmatched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshEdge {
    /// Endpoints, lower global index first; this is the global edge direction.
    pub vertices: [usize; 2],
    pub triangles: [Option<usize>; 2],
    pub tag: EdgeTag,
}

/// Built-in initial meshes.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialMesh {
    /// 4x4 grid of squares on the unit square, each split into two triangles.
    Square32,
    /// 12 squares of side 1/2 covering the L-shape, each split into two triangles.
    LShape24,
    /// User-supplied vertex and triangle lists.
    Explicit {
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
    },
}

/// Triangulated structured grid of squares of side `h`, starting at `origin`,
/// keeping cells for which `keep(i, j)` holds. Cells touching a domain corner
/// are split along the diagonal that avoids the corner, so each corner is
/// touched by as few triangles as possible.
fn grid_mesh(
    origin: Point,
    h: f64,
    nx: usize,
    ny: usize,
    keep: impl Fn(usize, usize) -> bool,
    corners: &[Point],
) -> (Vec<Point>, Vec<[usize; 3]>) {
    let mut index = vec![usize::MAX; (nx + 1) * (ny + 1)];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let is_corner = |p: Point| corners.iter().any(|c| c.dist(p) < 1e-12);
    for j in 0..ny {
        for i in 0..nx {
            if !keep(i, j) {
                continue;
            }
            let mut id = [0usize; 4];
            for (k, (di, dj)) in [(0, 0), (1, 0), (1, 1), (0, 1)].into_iter().enumerate() {
                let gi = (j + dj) * (nx + 1) + i + di;
                if index[gi] == usize::MAX {
                    index[gi] = vertices.len();
                    vertices.push(Point::new(
                        origin.x + (i + di) as f64 * h,
                        origin.y + (j + dj) as f64 * h,
                    ));
                }
                id[k] = index[gi];
            }
            let [v00, v10, v11, v01] = id;
            let anti = is_corner(vertices[v00]) || is_corner(vertices[v11]);
            if anti {
                triangles.push([v00, v10, v01]);
                triangles.push([v10, v11, v01]);
            } else {
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
    }
    (vertices, triangles)
}

/// Geometric quantities gathered by [`HpMesh::validate_geometric`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Edge shared by more than two triangles.
    NonConformingEdge { vertices: [usize; 2] },
    /// Single-owner edge that is not on the domain boundary (hanging node or gap).
    UnmatchedEdge { vertices: [usize; 2], triangle: usize },
    Orientation { triangle: usize, signed_area: f64 },
    GradingRatio { triangle: usize, ratio: f64 },
    CornerDiameter { triangle: usize, diameter: f64, bound: f64 },
    MinAngle { triangle: usize, degrees: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricReport {
    pub violations: Vec<Violation>,
    /// Extremes of `diam(T) / dist(T, corners)` over non-corner triangles.
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Measured `max diam(T) / sigma^k` over corner triangles.
    pub corner_constant: f64,
    pub min_angle_degrees: f64,
}

impl GeometricReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Uniform bucket grid for point location.
#[derive(Debug, Clone)]
struct Locator {
    min: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn new(vertices: &[Point], triangles: &[[usize; 3]]) -> Self {
        let (mut lo, mut hi) = (
            Point::new(f64::INFINITY, f64::INFINITY),
            Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for v in vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        if vertices.is_empty() {
            lo = Point::default();
            hi = Point::new(1.0, 1.0);
        }
        let side = ((triangles.len() as f64).sqrt().ceil() as usize).max(1);
        let extent = (hi.x - lo.x).max(hi.y - lo.y).max(1e-300);
        let cell = extent / side as f64;
        let nx = (((hi.x - lo.x) / cell).ceil() as usize).max(1);
        let ny = (((hi.y - lo.y) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let pad = 1e-9 * extent;
        for (t, tri) in triangles.iter().enumerate() {
            let pts = tri.map(|v| vertices[v]);
            let bx0 = pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) - pad;
            let bx1 = pts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max) + pad;
            let by0 = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) - pad;
            let by1 = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) + pad;
            let (i0, j0) = Self::cell_of(lo, cell, nx, ny, Point::new(bx0, by0));
            let (i1, j1) = Self::cell_of(lo, cell, nx, ny, Point::new(bx1, by1));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t);
                }
            }
        }
        Self {
            min: lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    fn cell_of(lo: Point, cell: f64, nx: usize, ny: usize, p: Point) -> (usize, usize) {
        let i = ((p.x - lo.x) / cell).floor().max(0.0) as usize;
        let j = ((p.y - lo.y) / cell).floor().max(0.0) as usize;
        (i.min(nx - 1), j.min(ny - 1))
    }

    fn candidates(&self, p: Point) -> &[usize] {
        let (i, j) = Self::cell_of(self.min, self.cell, self.nx, self.ny, p);
        &self.buckets[j * self.nx + i]
    }
}

/// Conforming triangulation with corner-refinement history.
#[derive(Debug, Clone)]
pub struct HpMesh {
    domain: PolygonDomain,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<MeshEdge>,
    triangle_edges: Vec<[usize; 3]>,
    corner_flags: Vec<u64>,
    corner_vertices: Vec<Option<usize>>,
    layer_count: usize,
    initial_corner_diameter: f64,
    // refinement state: red-refined triangles (possibly with hanging nodes)
    // and every edge midpoint created so far
    permanent: Vec<[usize; 3]>,
    midpoints: BTreeMap<(usize, usize), usize>,
    locator: Locator,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn triangle_diameter(p: [Point; 3]) -> f64 {
    p[0].dist(p[1]).max(p[1].dist(p[2])).max(p[2].dist(p[0]))
}

fn triangle_min_angle(p: [Point; 3]) -> f64 {
    let mut min = f64::INFINITY;
    for k in 0..3 {
        let a = p[(k + 1) % 3] - p[k];
        let b = p[(k + 2) % 3] - p[k];
        let ang = a.cross(b).abs().atan2(a.dot(b));
        min = min.min(ang);
    }
    min.to_degrees()
}

impl HpMesh {
    /// Builds a mesh from raw lists without rejecting defects. Derived edge
    /// data is computed; problems surface through [`Self::validate_geometric`].
    pub fn from_parts_unchecked(
        domain: PolygonDomain,
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
    ) -> Self {
        let corner_vertices: Vec<Option<usize>> = domain
            .corners()
            .iter()
            .map(|c| vertices.iter().position(|v| v.dist(*c) <= GEOM_TOL))
            .collect();
        let mut mesh = Self {
            domain,
            locator: Locator::new(&vertices, &triangles),
            vertices,
            permanent: triangles.clone(),
            triangles,
            edges: Vec::new(),
            triangle_edges: Vec::new(),
            corner_flags: Vec::new(),
            corner_vertices,
            layer_count: 1,
            initial_corner_diameter: 0.0,
            midpoints: BTreeMap::new(),
        };
        mesh.rebuild_topology();
        mesh.initial_corner_diameter = mesh.max_corner_diameter();
        mesh
    }

    fn rebuild_topology(&mut self) {
        let mut owners: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for j in 0..3 {
                owners
                    .entry(edge_key(tri[j], tri[(j + 1) % 3]))
                    .or_default()
                    .push(t);
            }
        }
        let mut edge_index = BTreeMap::new();
        self.edges = owners
            .iter()
            .enumerate()
            .map(|(e, (&(a, b), tris))| {
                edge_index.insert((a, b), e);
                let tag = if tris.len() >= 2 {
                    EdgeTag::Interior
                } else {
                    match self
                        .domain
                        .edge_containing(self.vertices[a], self.vertices[b])
                    {
                        Some(d) => EdgeTag::Boundary {
                            domain_edge: d,
                            kind: self.domain.edge_kind(d),
                        },
                        None => EdgeTag::Unmatched,
                    }
                };
                MeshEdge {
                    vertices: [a, b],
                    triangles: [tris.first().copied(), tris.get(1).copied()],
                    tag,
                }
            })
            .collect();
        self.triangle_edges = self
            .triangles
            .iter()
            .map(|tri| {
                [0, 1, 2].map(|j| edge_index[&edge_key(tri[j], tri[(j + 1) % 3])])
            })
            .collect();
        self.corner_flags = self
            .triangles
            .iter()
            .map(|tri| {
                let mut flags = 0u64;
                for (c, cv) in self.corner_vertices.iter().enumerate() {
                    if let Some(v) = cv {
                        if tri.contains(v) {
                            flags |= 1 << c;
                        }
                    }
                }
                flags
            })
            .collect();
        self.locator = Locator::new(&self.vertices, &self.triangles);
    }

    fn max_corner_diameter(&self) -> f64 {
        (0..self.triangles.len())
            .filter(|&t| self.corner_flags[t] != 0)
            .map(|t| triangle_diameter(self.triangle_points(t)))
            .fold(0.0, f64::max)
    }

    pub fn domain(&self) -> &PolygonDomain {
        &self.domain
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn edges(&self) -> &[MeshEdge] {
        &self.edges
    }

    /// Global edge indices of the local edges of triangle `t`; local edge
    /// `j` joins local vertices `j` and `(j + 1) % 3`.
    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.triangle_edges[t]
    }

    /// Bit `i` is set when domain corner `i` is a vertex of triangle `t`.
    pub fn corner_flags(&self, t: usize) -> u64 {
        self.corner_flags[t]
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn sigma(&self) -> f64 {
        SIGMA
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn affine_map(&self, t: usize) -> AffineMap {
        AffineMap::from_triangle(self.triangle_points(t))
    }

    pub fn area(&self, t: usize) -> f64 {
        let p = self.triangle_points(t);
        signed_area(p[0], p[1], p[2])
    }

    pub fn diameter(&self, t: usize) -> f64 {
        triangle_diameter(self.triangle_points(t))
    }

    /// Number of triangles having domain corner `c` as a vertex.
    pub fn corner_incidence(&self, c: usize) -> usize {
        self.corner_flags.iter().filter(|&&f| f & (1 << c) != 0).count()
    }

    /// Whether vertex `v` lies on a Dirichlet boundary edge.
    pub fn dirichlet_vertices(&self) -> Vec<bool> {
        let mut flags = vec![false; self.vertices.len()];
        for e in &self.edges {
            if let EdgeTag::Boundary {
                kind: EdgeKind::Dirichlet,
                ..
            } = e.tag
            {
                flags[e.vertices[0]] = true;
                flags[e.vertices[1]] = true;
            }
        }
        flags
    }

    /// Distance from triangle `t` to the set of domain corners.
    pub fn corner_distance(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        self.domain
            .corners()
            .iter()
            .map(|&k| point_triangle_distance(k, a, b, c))
            .fold(f64::INFINITY, f64::min)
    }

    /// Diagnostic check of conformity, orientation, graded-mesh bounds and
    /// shape regularity. An empty violation list means the mesh is valid.
    pub fn validate_geometric(&self) -> GeometricReport {
        let mut violations = Vec::new();
        for e in &self.edges {
            if let Some(t) = e.triangles[0] {
                if e.tag == EdgeTag::Unmatched {
                    violations.push(Violation::UnmatchedEdge {
                        vertices: e.vertices,
                        triangle: t,
                    });
                }
            }
        }
        // edges with more than two owners are collapsed into one MeshEdge;
        // count owners directly
        let mut owners: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for tri in &self.triangles {
            for j in 0..3 {
                *owners.entry(edge_key(tri[j], tri[(j + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &owners {
            if n > 2 {
                violations.push(Violation::NonConformingEdge { vertices: [a, b] });
            }
        }
        let mut min_ratio = f64::INFINITY;
        let mut max_ratio: f64 = 0.0;
        let mut corner_constant: f64 = 0.0;
        let mut min_angle = f64::INFINITY;
        let sigma_k = SIGMA.powi(self.layer_count as i32);
        let corner_bound = self.initial_corner_diameter * SIGMA.powi(self.layer_count as i32 - 1);
        for t in 0..self.triangles.len() {
            let pts = self.triangle_points(t);
            let area = signed_area(pts[0], pts[1], pts[2]);
            if area <= 0.0 {
                violations.push(Violation::Orientation {
                    triangle: t,
                    signed_area: area,
                });
            }
            let angle = triangle_min_angle(pts);
            min_angle = min_angle.min(angle);
            if angle < MIN_ANGLE_DEGREES {
                violations.push(Violation::MinAngle {
                    triangle: t,
                    degrees: angle,
                });
            }
            let diam = triangle_diameter(pts);
            if self.corner_flags[t] != 0 {
                corner_constant = corner_constant.max(diam / sigma_k);
                if diam > corner_bound * (1.0 + 1e-12) {
                    violations.push(Violation::CornerDiameter {
                        triangle: t,
                        diameter: diam,
                        bound: corner_bound,
                    });
                }
            } else {
                let ratio = diam / self.corner_distance(t);
                min_ratio = min_ratio.min(ratio);
                max_ratio = max_ratio.max(ratio);
                let lo = SIGMA / GEO_FAMILY_CONSTANT;
                let hi = GEO_FAMILY_CONSTANT / SIGMA;
                if !(lo..=hi).contains(&ratio) {
                    violations.push(Violation::GradingRatio { triangle: t, ratio });
                }
            }
        }
        GeometricReport {
            violations,
            min_ratio,
            max_ratio,
            corner_constant,
            min_angle_degrees: min_angle,
        }
    }

    /// Adds one geometric layer: red-refines every permanent triangle touching
    /// a domain corner, then closes the mesh with temporary green bisections.
    pub fn refine_corner_layer(&self) -> Result<HpMesh, MeshError> {
        let mut vertices = self.vertices.clone();
        let mut midpoints = self.midpoints.clone();
        let corner_set: Vec<usize> = self.corner_vertices.iter().flatten().copied().collect();
        let mut permanent = self.permanent.clone();
        let mut marked: Vec<bool> = permanent
            .iter()
            .map(|tri| tri.iter().any(|v| corner_set.contains(v)))
            .collect();

        loop {
            let mut next = Vec::with_capacity(permanent.len() + 3 * marked.len());
            for (tri, &red) in permanent.iter().zip(&marked) {
                if !red {
                    next.push(*tri);
                    continue;
                }
                let mut mid = |a: usize, b: usize| -> usize {
                    *midpoints.entry(edge_key(a, b)).or_insert_with(|| {
                        vertices.push(vertices[a].midpoint(vertices[b]));
                        vertices.len() - 1
                    })
                };
                let [v0, v1, v2] = *tri;
                let m01 = mid(v0, v1);
                let m12 = mid(v1, v2);
                let m20 = mid(v2, v0);
                next.push([v0, m01, m20]);
                next.push([m01, v1, m12]);
                next.push([m20, m12, v2]);
                next.push([m01, m12, m20]);
            }
            permanent = next;
            // closure: a triangle with two or more hanging edges, or a hanging
            // edge whose halves are split again, is red-refined as well
            marked = permanent
                .iter()
                .map(|tri| {
                    let mut hanging = 0;
                    let mut deep = false;
                    for j in 0..3 {
                        let (a, b) = (tri[j], tri[(j + 1) % 3]);
                        if let Some(&m) = midpoints.get(&edge_key(a, b)) {
                            hanging += 1;
                            deep |= midpoints.contains_key(&edge_key(a, m))
                                || midpoints.contains_key(&edge_key(m, b));
                        }
                    }
                    hanging >= 2 || deep
                })
                .collect();
            if !marked.iter().any(|&m| m) {
                break;
            }
        }

        let triangles = green_closure(&permanent, &midpoints);
        for (t, tri) in triangles.iter().enumerate() {
            let angle = triangle_min_angle(tri.map(|v| vertices[v]));
            if angle < MIN_ANGLE_DEGREES {
                return Err(MeshError::AngleTooSmall {
                    triangle: t,
                    degrees: angle,
                });
            }
        }
        let mut mesh = Self {
            domain: self.domain.clone(),
            locator: Locator::new(&vertices, &triangles),
            vertices,
            triangles,
            edges: Vec::new(),
            triangle_edges: Vec::new(),
            corner_flags: Vec::new(),
            corner_vertices: self.corner_vertices.clone(),
            layer_count: self.layer_count + 1,
            initial_corner_diameter: self.initial_corner_diameter,
            permanent,
            midpoints,
        };
        mesh.rebuild_topology();
        Ok(mesh)
    }

    /// Applies [`Self::refine_corner_layer`] until the mesh has `k` layers.
    pub fn with_layers(&self, k: usize) -> Result<HpMesh, MeshError> {
        let mut mesh = self.clone();
        while mesh.layer_count < k {
            mesh = mesh.refine_corner_layer()?;
        }
        Ok(mesh)
    }

    /// Finds the triangle containing `x`. Ties on shared edges and vertices go
    /// to the lowest triangle index. Returns reference coordinates.
    pub fn locate_point(&self, x: Point) -> Result<(usize, [f64; 2]), MeshError> {
        let tol = 1e-12;
        for &t in self.locator.candidates(x) {
            let map = self.affine_map(t);
            let xi = map.inverse(x);
            if xi[0] >= -tol && xi[1] >= -tol && xi[0] + xi[1] <= 1.0 + tol {
                return Ok((t, xi));
            }
        }
        Err(MeshError::OutsideDomain(x.x, x.y))
    }

    /// Like [`Self::locate_point`], but points within `1e-8` of the mesh are
    /// clamped onto the nearest triangle instead of failing.
    pub fn locate_point_clamped(&self, x: Point) -> Result<(usize, [f64; 2]), MeshError> {
        if let Ok(hit) = self.locate_point(x) {
            return Ok(hit);
        }
        let mut best: Option<(f64, usize)> = None;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle_points(t);
            let d = point_triangle_distance(x, a, b, c);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, t));
            }
        }
        match best {
            Some((d, t)) if d <= 1e-8 => {
                let xi = self.affine_map(t).inverse(x);
                let mut l1 = xi[0].max(0.0);
                let mut l2 = xi[1].max(0.0);
                let s = l1 + l2;
                if s > 1.0 {
                    l1 /= s;
                    l2 /= s;
                }
                Ok((t, [l1, l2]))
            }
            _ => Err(MeshError::OutsideDomain(x.x, x.y)),
        }
    }

    /// Writes the plain-text mesh format: counts, then vertices (17
    /// significant digits), then triangles with their corner-flag bitmask.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<(), MeshError> {
        writeln!(w, "{}", self.vertices.len())?;
        writeln!(w, "{}", self.triangles.len())?;
        for v in &self.vertices {
            writeln!(w, "{:.16e} {:.16e}", v.x, v.y)?;
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            writeln!(w, "{} {} {} {}", tri[0], tri[1], tri[2], self.corner_flags[t])?;
        }
        Ok(())
    }
}

/// Parsed contents of the plain-text mesh format.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshText {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub corner_flags: Vec<u64>,
}

pub fn read_mesh_text<R: BufRead>(r: R) -> Result<MeshText, MeshError> {
    let mut tokens = Vec::new();
    for line in r.lines() {
        let line = line?;
        tokens.extend(line.split_whitespace().map(str::to_owned));
    }
    let mut it = tokens.into_iter();
    let mut next = |what: &str| {
        it.next()
            .ok_or_else(|| MeshError::Parse(format!("missing {what}")))
    };
    let parse_usize = |s: String| {
        s.parse::<usize>()
            .map_err(|e| MeshError::Parse(format!("{s}: {e}")))
    };
    let parse_f64 = |s: String| {
        s.parse::<f64>()
            .map_err(|e| MeshError::Parse(format!("{s}: {e}")))
    };
    let nv = parse_usize(next("vertex count")?)?;
    let nt = parse_usize(next("triangle count")?)?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let x = parse_f64(next("x")?)?;
        let y = parse_f64(next("y")?)?;
        vertices.push(Point::new(x, y));
    }
    let mut triangles = Vec::with_capacity(nt);
    let mut corner_flags = Vec::with_capacity(nt);
    for _ in 0..nt {
        let a = parse_usize(next("vertex index")?)?;
        let b = parse_usize(next("vertex index")?)?;
        let c = parse_usize(next("vertex index")?)?;
        if a.max(b).max(c) >= nv {
            return Err(MeshError::Parse(format!("vertex index out of range in ({a} {b} {c})")));
        }
        triangles.push([a, b, c]);
        let flags = next("corner flags")?;
        corner_flags.push(
            flags
                .parse::<u64>()
                .map_err(|e| MeshError::Parse(format!("{flags}: {e}")))?,
        );
    }
    Ok(MeshText {
        vertices,
        triangles,
        corner_flags,
    })
}

fn green_closure(
    permanent: &[[usize; 3]],
    midpoints: &BTreeMap<(usize, usize), usize>,
) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(permanent.len() * 2);
    for tri in permanent {
        let hanging = (0..3).find_map(|j| {
            midpoints
                .get(&edge_key(tri[j], tri[(j + 1) % 3]))
                .map(|&m| (j, m))
        });
        match hanging {
            Some((j, m)) => {
                let (a, b, c) = (tri[j], tri[(j + 1) % 3], tri[(j + 2) % 3]);
                out.push([a, m, c]);
                out.push([m, b, c]);
            }
            None => out.push(*tri),
        }
    }
    out
}

/// Builds the level-1 mesh. Explicit lists are checked for orientation,
/// conformity, exact tiling of the polygon and resolution of every corner.
pub fn build_initial_mesh(domain: &PolygonDomain, spec: &InitialMesh) -> Result<HpMesh, MeshError> {
    let (vertices, triangles) = match spec {
        InitialMesh::Square32 => {
            if *domain.corners() != *PolygonDomain::unit_square().corners() {
                return Err(MeshError::InvalidDomain(
                    "the 32-triangle mesh needs the unit square".into(),
                ));
            }
            grid_mesh(Point::new(0.0, 0.0), 0.25, 4, 4, |_, _| true, domain.corners())
        }
        InitialMesh::LShape24 => {
            if *domain.corners() != *PolygonDomain::l_shape().corners() {
                return Err(MeshError::InvalidDomain(
                    "the 24-triangle mesh needs the L-shaped domain".into(),
                ));
            }
            // drop the four cells in [0,1) x (-1,0]
            grid_mesh(
                Point::new(-1.0, -1.0),
                0.5,
                4,
                4,
                |i, j| !(i >= 2 && j < 2),
                domain.corners(),
            )
        }
        InitialMesh::Explicit {
            vertices,
            triangles,
        } => (vertices.clone(), triangles.clone()),
    };
    for (t, tri) in triangles.iter().enumerate() {
        if tri.iter().any(|&v| v >= vertices.len()) {
            return Err(MeshError::NotTiling(format!("triangle {t} has an invalid vertex")));
        }
        if signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]) <= 0.0 {
            return Err(MeshError::NonPositiveArea(t));
        }
    }
    let mesh = HpMesh::from_parts_unchecked(domain.clone(), vertices, triangles);
    let report = mesh.validate_geometric();
    for v in &report.violations {
        match v {
            Violation::NonConformingEdge { vertices } => {
                return Err(MeshError::NonConforming(vertices[0], vertices[1]))
            }
            Violation::UnmatchedEdge { vertices, .. } => {
                return Err(MeshError::NotTiling(format!(
                    "edge ({}, {}) is neither interior nor on the boundary",
                    vertices[0], vertices[1]
                )))
            }
            _ => {}
        }
    }
    let total: f64 = (0..mesh.num_triangles()).map(|t| mesh.area(t)).sum();
    if (total - domain.area()).abs() > 1e-12 * domain.area() {
        return Err(MeshError::NotTiling(format!(
            "triangle areas sum to {total}, polygon area is {}",
            domain.area()
        )));
    }
    if let Some(c) = mesh.corner_vertices.iter().position(Option::is_none) {
        return Err(MeshError::CornerNotResolved(c));
    }
    Ok(mesh)
}
