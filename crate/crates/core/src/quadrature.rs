//! Gauss rules on `[-1, 1]` and collapsed (Duffy) tensor rules on the
//! reference triangle `{(x, y) : x, y >= 0, x + y <= 1}`.

use std::f64::consts::PI;

/// Gauss-Legendre points and weights on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule1d {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss-Legendre rule with `n` points, exact for polynomials of degree `2n - 1`.
///
/// Roots are found by Newton iteration on the three-term recurrence, starting
/// from the Tricomi approximation. Points are returned in increasing order.
pub fn gauss_1d(n: usize) -> GaussRule1d {
    assert!(n >= 1, "a Gauss rule needs at least one point");
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[i] = -x;
        points[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        // the middle root is exactly zero
        points[n / 2] = 0.0;
    }
    GaussRule1d { points, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature rule on the reference triangle. Weights sum to `1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    pub degree: usize,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integrates `g` over the reference triangle.
    pub fn integrate(&self, mut g: impl FnMut([f64; 2]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&pt, &w)| w * g(pt))
            .sum()
    }
}

/// Collapsed Gauss rule exact for all polynomials of total degree `<= d`.
///
/// Uses the map `x = s, y = t (1 - s)` on `[0, 1]^2` with Jacobian `1 - s`,
/// and `ceil((d + 2) / 2)` Gauss-Legendre points per direction.
pub fn triangle_rule(d: usize) -> TriangleRule {
    let n = (d + 2).div_ceil(2).max(1);
    let g = gauss_1d(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (&gs, &ws) in g.points.iter().zip(&g.weights) {
        let s = 0.5 * (gs + 1.0);
        for (&gt, &wt) in g.points.iter().zip(&g.weights) {
            let t = 0.5 * (gt + 1.0);
            points.push([s, t * (1.0 - s)]);
            weights.push(0.25 * ws * wt * (1.0 - s));
        }
    }
    TriangleRule {
        degree: d,
        points,
        weights,
    }
}

/// Quadrature degree needed for exact evaluation of the stiffness matrix,
/// the reaction term `u^(2q+1) v` and a load term with a degree-`data_degree`
/// surrogate of `f`, for trial/test functions of degree `p`.
pub fn required_degree(p: usize, q: usize, data_degree: usize) -> usize {
    (2 * p * (q + 1)).max(data_degree + p).max(2 * p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn one_and_two_point_rules() {
        let g1 = gauss_1d(1);
        assert_eq!(g1.points, vec![0.0]);
        assert_eq!(g1.weights, vec![2.0]);

        let g2 = gauss_1d(2);
        let r = 1.0 / 3f64.sqrt();
        assert!((g2.points[0] + r).abs() < 1e-15);
        assert!((g2.points[1] - r).abs() < 1e-15);
        assert!((g2.weights[0] - 1.0).abs() < 1e-15);
        assert!((g2.weights[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sixteen_points_integrate_x30() {
        let g = gauss_1d(16);
        let s: f64 = g
            .points
            .iter()
            .zip(&g.weights)
            .map(|(x, w)| w * x.powi(30))
            .sum();
        let exact = 2.0 / 31.0;
        assert!(((s - exact) / exact).abs() < 1e-14, "{s} vs {exact}");
    }

    #[test]
    fn gauss_exactness_up_to_2n_minus_1() {
        for n in 1..=30 {
            let g = gauss_1d(n);
            for k in 0..2 * n {
                let s: f64 = g
                    .points
                    .iter()
                    .zip(&g.weights)
                    .map(|(x, w)| w * x.powi(k as i32))
                    .sum();
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!((s - exact).abs() < 1e-14, "n={n} k={k}: {s} vs {exact}");
            }
        }
    }

    #[test]
    fn triangle_low_degrees() {
        let r0 = triangle_rule(0);
        assert!((r0.weights.iter().sum::<f64>() - 0.5).abs() < 1e-15);
        let r2 = triangle_rule(2);
        let xy = r2.integrate(|[x, y]| x * y);
        assert!((xy - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_degree_8_all_monomials() {
        let rule = triangle_rule(8);
        let mut count = 0;
        for a in 0..=8u32 {
            for b in 0..=(8 - a) {
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                let s = rule.integrate(|[x, y]| x.powi(a as i32) * y.powi(b as i32));
                assert!(((s - exact) / exact).abs() < 1e-13);
                count += 1;
            }
        }
        assert_eq!(count, 45);
    }

    #[test]
    fn points_interior_and_weights_positive() {
        for d in 0..=40 {
            let rule = triangle_rule(d);
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                assert!(*w > 0.0);
                assert!(p[0] > 0.0 && p[1] > 0.0 && p[0] + p[1] < 1.0);
            }
            let n = (d + 2).div_ceil(2);
            assert_eq!(rule.len(), n * n);
        }
    }

    #[test]
    fn required_degree_examples() {
        assert_eq!(required_degree(3, 1, 0), 12);
        assert_eq!(required_degree(1, 0, 0), 2);
        assert_eq!(required_degree(5, 2, 20), 30);
    }
}
