//! Bivariate polynomials in monomial form, used for polynomial data `f` and
//! manufactured solutions.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly2 {
    /// `(a, b) -> c` for the term `c x^a y^b`.
    terms: BTreeMap<(u32, u32), f64>,
}

impl Poly2 {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::from_terms([((0, 0), c)])
    }

    pub fn x() -> Self {
        Self::from_terms([((1, 0), 1.0)])
    }

    pub fn y() -> Self {
        Self::from_terms([((0, 1), 1.0)])
    }

    pub fn from_terms(terms: impl IntoIterator<Item = ((u32, u32), f64)>) -> Self {
        let mut p = Self::zero();
        for (k, c) in terms {
            *p.terms.entry(k).or_insert(0.0) += c;
        }
        p.prune();
        p
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| *c != 0.0);
    }

    pub fn terms(&self) -> impl Iterator<Item = ((u32, u32), f64)> + '_ {
        self.terms.iter().map(|(&k, &c)| (k, c))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; `0` for the zero polynomial.
    pub fn degree(&self) -> usize {
        self.terms
            .keys()
            .map(|&(a, b)| (a + b) as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|(&(a, b), &c)| c * x.powi(a as i32) * y.powi(b as i32))
            .sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_terms(self.terms().map(|(k, c)| (k, s * c)))
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut out = Self::constant(1.0);
        for _ in 0..n {
            out = &out * self;
        }
        out
    }

    pub fn dx(&self) -> Self {
        Self::from_terms(
            self.terms()
                .filter(|((a, _), _)| *a > 0)
                .map(|((a, b), c)| ((a - 1, b), c * a as f64)),
        )
    }

    pub fn dy(&self) -> Self {
        Self::from_terms(
            self.terms()
                .filter(|((_, b), _)| *b > 0)
                .map(|((a, b), c)| ((a, b - 1), c * b as f64)),
        )
    }

    pub fn laplacian(&self) -> Self {
        &self.dx().dx() + &self.dy().dy()
    }
}

impl Add for &Poly2 {
    type Output = Poly2;
    fn add(self, o: &Poly2) -> Poly2 {
        Poly2::from_terms(self.terms().chain(o.terms()))
    }
}

impl Sub for &Poly2 {
    type Output = Poly2;
    fn sub(self, o: &Poly2) -> Poly2 {
        Poly2::from_terms(self.terms().chain(o.terms().map(|(k, c)| (k, -c))))
    }
}

impl Neg for &Poly2 {
    type Output = Poly2;
    fn neg(self) -> Poly2 {
        self.scale(-1.0)
    }
}

impl Mul for &Poly2 {
    type Output = Poly2;
    fn mul(self, o: &Poly2) -> Poly2 {
        let mut out = BTreeMap::new();
        for ((a1, b1), c1) in self.terms() {
            for ((a2, b2), c2) in o.terms() {
                *out.entry((a1 + a2, b1 + b2)).or_insert(0.0) += c1 * c2;
            }
        }
        Poly2::from_terms(out)
    }
}
