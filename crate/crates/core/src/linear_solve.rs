//! Direct solvers for the symmetric positive definite systems produced by
//! [`crate::assembly`]: a dense Cholesky factorization of the whole matrix,
//! and static condensation of the interior DOFs followed by a dense Cholesky
//! factorization of the skeleton Schur complement.

use thiserror::Error;

use crate::assembly::SymmetricSystem;
use crate::dense::{backward_substitution, cholesky_in_place, forward_substitution, forward_substitution_multi};
use crate::flops::{dense_solve_flops, FlopMeter, Phase};

/// Relative pivot floor used by both solvers.
pub const PIVOT_TOLERANCE: f64 = 1e-14;

/// Largest order accepted by the dense path (about 2 GB of storage).
pub const DENSE_MAX_DIM: usize = 16_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearSolveError {
    #[error("matrix is not positive definite: pivot {pivot} = {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dense factorization of order {0} exceeds the supported size")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverPath {
    Dense,
    #[default]
    Condensed,
}

impl SolverPath {
    pub fn name(self) -> &'static str {
        match self {
            SolverPath::Dense => "dense",
            SolverPath::Condensed => "condensed",
        }
    }
}

impl std::str::FromStr for SolverPath {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dense" => Ok(SolverPath::Dense),
            "condensed" => Ok(SolverPath::Condensed),
            _ => Err(format!("unknown solver path '{s}'")),
        }
    }
}

/// Dense lower-triangular Cholesky factor, row-major.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
}

/// Row-major copy of the lower triangle of the assembled matrix.
fn dense_lower(system: &SymmetricSystem) -> Vec<f64> {
    let n = system.dim();
    let mut a = vec![0.0; n * n];
    for b in system.blocks() {
        let nm = b.dofs.len();
        for (i, di) in b.dofs.iter().enumerate() {
            let Some(gi) = *di else { continue };
            for (j, dj) in b.dofs.iter().enumerate() {
                if let Some(gj) = *dj {
                    if gj <= gi {
                        a[gi * n + gj] += b.values[i * nm + j];
                    }
                }
            }
        }
    }
    a
}

pub fn factor_dense(system: &SymmetricSystem, meter: &FlopMeter) -> Result<CholeskyFactor, LinearSolveError> {
    let n = system.dim();
    if n > DENSE_MAX_DIM {
        return Err(LinearSolveError::TooLarge(n));
    }
    let mut l = dense_lower(system);
    let flops = cholesky_in_place(&mut l, n, PIVOT_TOLERANCE).map_err(|e| LinearSolveError::NotPositiveDefinite {
        pivot: e.index,
        value: e.value,
    })?;
    meter.add(Phase::Factor, flops);
    Ok(CholeskyFactor { n, l })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Lower factor in row-major storage (upper part zero).
    pub fn lower(&self) -> &[f64] {
        &self.l
    }

    pub fn solve(&self, b: &[f64], meter: &FlopMeter) -> Result<Vec<f64>, LinearSolveError> {
        check_len(self.n, b)?;
        let mut x = b.to_vec();
        forward_substitution(&self.l, self.n, &mut x);
        backward_substitution(&self.l, self.n, &mut x);
        meter.add(Phase::Backsolve, dense_solve_flops(self.n));
        Ok(x)
    }
}

fn check_len(n: usize, b: &[f64]) -> Result<(), LinearSolveError> {
    if b.len() != n {
        return Err(LinearSolveError::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    Ok(())
}

/// Per-element data kept by static condensation.
#[derive(Debug, Clone)]
struct CondensedElement {
    /// free skeleton indices of the local skeleton DOFs
    skeleton: Vec<usize>,
    /// free indices of the interior DOFs
    interior: Vec<usize>,
    /// Cholesky factor of `K_II`, row-major `ni x ni`
    l_ii: Vec<f64>,
    /// `W = L_II^{-1} K_IS`, row-major `ni x ns`
    w: Vec<f64>,
}

/// Factorization by static condensation: interiors are eliminated element by
/// element, the skeleton Schur complement is factored densely.
#[derive(Debug, Clone)]
pub struct CondensedSystem {
    n: usize,
    n_skeleton: usize,
    elements: Vec<CondensedElement>,
    skeleton: CholeskyFactor,
}

pub fn factor_condensed(system: &SymmetricSystem, meter: &FlopMeter) -> Result<CondensedSystem, LinearSolveError> {
    let n = system.dim();
    let ns_total = system.n_skeleton();
    let mut schur = vec![0.0; ns_total * ns_total];
    let mut elements = Vec::with_capacity(system.blocks().len());
    let mut flops = 0u64;
    for b in system.blocks() {
        let nm = b.dofs.len();
        let mut s_loc = Vec::new();
        let mut i_loc = Vec::new();
        for (k, d) in b.dofs.iter().enumerate() {
            match *d {
                Some(g) if g < ns_total => s_loc.push(k),
                Some(_) => i_loc.push(k),
                None => {}
            }
        }
        let (ns, ni) = (s_loc.len(), i_loc.len());
        let mut l_ii = vec![0.0; ni * ni];
        for (r, &i) in i_loc.iter().enumerate() {
            for (c, &j) in i_loc.iter().enumerate() {
                l_ii[r * ni + c] = b.values[i * nm + j];
            }
        }
        flops += cholesky_in_place(&mut l_ii, ni, PIVOT_TOLERANCE).map_err(|e| {
            LinearSolveError::NotPositiveDefinite {
                pivot: b.dofs[i_loc[e.index]].unwrap(),
                value: e.value,
            }
        })?;
        let mut w = vec![0.0; ni * ns];
        for (r, &i) in i_loc.iter().enumerate() {
            for (c, &j) in s_loc.iter().enumerate() {
                w[r * ns + c] = b.values[i * nm + j];
            }
        }
        forward_substitution_multi(&l_ii, ni, &mut w, ns);
        flops += (ns * ni * ni) as u64;
        let skeleton: Vec<usize> = s_loc.iter().map(|&k| b.dofs[k].unwrap()).collect();
        for (r, &i) in s_loc.iter().enumerate() {
            let gi = skeleton[r];
            for (c, &j) in s_loc.iter().enumerate().take(r + 1) {
                let mut v = b.values[i * nm + j];
                for k in 0..ni {
                    v -= w[k * ns + r] * w[k * ns + c];
                }
                let gj = skeleton[c];
                let (hi, lo) = if gi >= gj { (gi, gj) } else { (gj, gi) };
                schur[hi * ns_total + lo] += v;
            }
        }
        flops += (ns * (ns + 1) / 2) as u64 * (2 * ni as u64 + 1);
        let interior = i_loc.iter().map(|&k| b.dofs[k].unwrap()).collect();
        elements.push(CondensedElement {
            skeleton,
            interior,
            l_ii,
            w,
        });
    }
    flops += cholesky_in_place(&mut schur, ns_total, PIVOT_TOLERANCE).map_err(|e| {
        LinearSolveError::NotPositiveDefinite {
            pivot: e.index,
            value: e.value,
        }
    })?;
    meter.add(Phase::Factor, flops);
    Ok(CondensedSystem {
        n,
        n_skeleton: ns_total,
        elements,
        skeleton: CholeskyFactor {
            n: ns_total,
            l: schur,
        },
    })
}

impl CondensedSystem {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_skeleton(&self) -> usize {
        self.n_skeleton
    }

    pub fn solve(&self, b: &[f64], meter: &FlopMeter) -> Result<Vec<f64>, LinearSolveError> {
        check_len(self.n, b)?;
        let ns_total = self.n_skeleton;
        let mut g = b[..ns_total].to_vec();
        let mut y_all = Vec::with_capacity(self.elements.len());
        let mut flops = 0u64;
        for e in &self.elements {
            let (ns, ni) = (e.skeleton.len(), e.interior.len());
            let mut y: Vec<f64> = e.interior.iter().map(|&i| b[i]).collect();
            forward_substitution(&e.l_ii, ni, &mut y);
            for (c, &gs) in e.skeleton.iter().enumerate() {
                let mut s = 0.0;
                for k in 0..ni {
                    s += e.w[k * ns + c] * y[k];
                }
                g[gs] -= s;
            }
            flops += (ni * ni + 2 * ni * ns) as u64;
            y_all.push(y);
        }
        forward_substitution(&self.skeleton.l, ns_total, &mut g);
        backward_substitution(&self.skeleton.l, ns_total, &mut g);
        flops += dense_solve_flops(ns_total);
        let mut x = vec![0.0; self.n];
        x[..ns_total].copy_from_slice(&g);
        for (e, mut y) in self.elements.iter().zip(y_all) {
            let (ns, ni) = (e.skeleton.len(), e.interior.len());
            for k in 0..ni {
                let row = &e.w[k * ns..(k + 1) * ns];
                let mut s = 0.0;
                for (wv, &gs) in row.iter().zip(&e.skeleton) {
                    s += wv * g[gs];
                }
                y[k] -= s;
            }
            backward_substitution(&e.l_ii, ni, &mut y);
            for (&i, v) in e.interior.iter().zip(y) {
                x[i] = v;
            }
            flops += (ni * ni + 2 * ni * ns) as u64;
        }
        meter.add(Phase::Backsolve, flops);
        Ok(x)
    }
}

/// Either factorization behind one interface.
#[derive(Debug, Clone)]
pub enum LinearFactor {
    Dense(CholeskyFactor),
    Condensed(CondensedSystem),
}

impl LinearFactor {
    pub fn factor(system: &SymmetricSystem, path: SolverPath, meter: &FlopMeter) -> Result<Self, LinearSolveError> {
        Ok(match path {
            SolverPath::Dense => LinearFactor::Dense(factor_dense(system, meter)?),
            SolverPath::Condensed => LinearFactor::Condensed(factor_condensed(system, meter)?),
        })
    }

    pub fn solve(&self, b: &[f64], meter: &FlopMeter) -> Result<Vec<f64>, LinearSolveError> {
        match self {
            LinearFactor::Dense(f) => f.solve(b, meter),
            LinearFactor::Condensed(f) => f.solve(b, meter),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LinearFactor::Dense(f) => f.dim(),
            LinearFactor::Condensed(f) => f.dim(),
        }
    }

    pub fn path(&self) -> SolverPath {
        match self {
            LinearFactor::Dense(_) => SolverPath::Dense,
            LinearFactor::Condensed(_) => SolverPath::Condensed,
        }
    }
}
