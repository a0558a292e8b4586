//! Planar points and affine maps from the reference triangle.

use std::ops::{Add, Mul, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn midpoint(self, o: Point) -> Point {
        Point::new(0.5 * (self.x + o.x), 0.5 * (self.y + o.y))
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<Point> for f64 {
    type Output = Point;
    fn mul(self, p: Point) -> Point {
        Point::new(self * p.x, self * p.y)
    }
}

/// Signed area of the triangle `(a, b, c)`; positive when counterclockwise.
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * (b - a).cross(c - a)
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + t * ab)
}

/// Distance from `p` to the closed triangle `(a, b, c)` (counterclockwise).
pub fn point_triangle_distance(p: Point, a: Point, b: Point, c: Point) -> f64 {
    let inside = signed_area(a, b, p) >= 0.0
        && signed_area(b, c, p) >= 0.0
        && signed_area(c, a, p) >= 0.0;
    if inside {
        return 0.0;
    }
    point_segment_distance(p, a, b)
        .min(point_segment_distance(p, b, c))
        .min(point_segment_distance(p, c, a))
}

/// Affine map `x = B xi + b` from the reference triangle onto a physical one.
///
/// Columns of `B` are `v1 - v0` and `v2 - v0`; `b = v0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub matrix: [[f64; 2]; 2],
    pub offset: Point,
}

impl AffineMap {
    pub fn from_triangle(v: [Point; 3]) -> Self {
        let e1 = v[1] - v[0];
        let e2 = v[2] - v[0];
        Self {
            matrix: [[e1.x, e2.x], [e1.y, e2.y]],
            offset: v[0],
        }
    }

    pub fn det(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn forward(&self, xi: [f64; 2]) -> Point {
        let m = &self.matrix;
        Point::new(
            m[0][0] * xi[0] + m[0][1] * xi[1] + self.offset.x,
            m[1][0] * xi[0] + m[1][1] * xi[1] + self.offset.y,
        )
    }

    /// `B^{-1}`.
    pub fn inverse_matrix(&self) -> [[f64; 2]; 2] {
        let m = &self.matrix;
        let d = self.det();
        [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
    }

    pub fn inverse(&self, x: Point) -> [f64; 2] {
        let inv = self.inverse_matrix();
        let r = x - self.offset;
        [
            inv[0][0] * r.x + inv[0][1] * r.y,
            inv[1][0] * r.x + inv[1][1] * r.y,
        ]
    }

    /// Maps a reference gradient to the physical gradient, `B^{-T} g`.
    pub fn push_gradient(&self, inv: &[[f64; 2]; 2], g: [f64; 2]) -> [f64; 2] {
        [
            inv[0][0] * g[0] + inv[1][0] * g[1],
            inv[0][1] * g[0] + inv[1][1] * g[1],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_round_trip() {
        let map = AffineMap::from_triangle([
            Point::new(0.3, -0.2),
            Point::new(1.7, 0.1),
            Point::new(0.5, 2.2),
        ]);
        let area = signed_area(
            Point::new(0.3, -0.2),
            Point::new(1.7, 0.1),
            Point::new(0.5, 2.2),
        );
        assert!((map.det() - 2.0 * area).abs() < 1e-14);
        for xi in [[0.0, 0.0], [0.25, 0.5], [1.0, 0.0], [0.1, 0.8]] {
            let back = map.inverse(map.forward(xi));
            assert!((back[0] - xi[0]).abs() < 1e-13 && (back[1] - xi[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn triangle_distance() {
        let (a, b, c) = (Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0));
        assert_eq!(point_triangle_distance(Point::new(0.2, 0.2), a, b, c), 0.0);
        let d = point_triangle_distance(Point::new(1.0, 1.0), a, b, c);
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((point_triangle_distance(Point::new(-1.0, 0.0), a, b, c) - 1.0).abs() < 1e-15);
    }
}
