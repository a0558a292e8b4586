//! Floating-point operation accounting.
//!
//! Flop model (version [`FLOP_MODEL_VERSION`]): a multiply-add counts as 2
//! flops, a division or square root as 1, comparisons and copies are free.
//! Counters are exact for the loops as written, not estimates.

use std::sync::atomic::{AtomicU64, Ordering};

pub const FLOP_MODEL_VERSION: &str = "1 (multiply-add = 2, div/sqrt = 1, copies free)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Assembly of the stiffness matrix and load vector.
    Setup,
    /// Cholesky factorization, including element-wise condensation.
    Factor,
    /// Triangular solves and interior recovery.
    Backsolve,
    /// Evaluation of the nonlinear reaction term.
    NonlinearEval,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::Setup,
        Phase::Factor,
        Phase::Backsolve,
        Phase::NonlinearEval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Setup => "setup",
            Phase::Factor => "factor",
            Phase::Backsolve => "backsolve",
            Phase::NonlinearEval => "nonlinear_eval",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Thread-safe per-phase flop counters.
#[derive(Debug, Default)]
pub struct FlopMeter {
    counts: [AtomicU64; 4],
}

impl FlopMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, phase: Phase, flops: u64) {
        self.counts[phase.index()].fetch_add(flops, Ordering::Relaxed);
    }

    pub fn get(&self, phase: Phase) -> u64 {
        self.counts[phase.index()].load(Ordering::Relaxed)
    }

    pub fn report(&self) -> FlopReport {
        FlopReport {
            setup: self.get(Phase::Setup),
            factor: self.get(Phase::Factor),
            backsolve: self.get(Phase::Backsolve),
            nonlinear_eval: self.get(Phase::NonlinearEval),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopReport {
    pub setup: u64,
    pub factor: u64,
    pub backsolve: u64,
    pub nonlinear_eval: u64,
}

impl FlopReport {
    pub fn get(&self, phase: Phase) -> u64 {
        match phase {
            Phase::Setup => self.setup,
            Phase::Factor => self.factor,
            Phase::Backsolve => self.backsolve,
            Phase::NonlinearEval => self.nonlinear_eval,
        }
    }

    pub fn total(&self) -> u64 {
        self.setup + self.factor + self.backsolve + self.nonlinear_eval
    }

    /// Counts accumulated since `earlier`.
    pub fn since(&self, earlier: &FlopReport) -> FlopReport {
        FlopReport {
            setup: self.setup - earlier.setup,
            factor: self.factor - earlier.factor,
            backsolve: self.backsolve - earlier.backsolve,
            nonlinear_eval: self.nonlinear_eval - earlier.nonlinear_eval,
        }
    }
}

/// Exact flop count of a dense Cholesky factorization of order `n`:
/// `(n^3 - n)/3` for the multiply-adds, `n(n-1)/2` divisions, `n` roots.
pub fn dense_cholesky_flops(n: usize) -> u64 {
    let n = n as u64;
    (n * n * n - n) / 3 + n * (n + 1) / 2
}

/// Exact flop count of one forward plus one backward triangular solve.
pub fn dense_solve_flops(n: usize) -> u64 {
    let n = n as u64;
    2 * n * n
}
