//! Damped Picard iteration for `-lap u + lambda u^(2q+1) = f` on a fixed hp
//! space: solve `a(eta_n, v) = (f, v) - lambda b(U_n; v)`, then
//! `U_{n+1} = (1 - alpha) U_n + alpha eta_n`. The stiffness matrix is
//! factored once per space.

use thiserror::Error;

use crate::assembly::{
    assemble_load, assemble_stiffness, DataSurrogate, HpSpace, NonlinearForm, SymmetricSystem,
};
use crate::flops::{FlopMeter, FlopReport, Phase};
use crate::geometry::Point;
use crate::linear_solve::{LinearFactor, LinearSolveError, SolverPath};
use crate::basis::ModeKind;
use crate::dense::{backward_substitution, cholesky_in_place, forward_substitution};
use crate::mesh::{HpMesh, MeshError};
use crate::quadrature::{gauss_1d, triangle_rule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stopping {
    /// Stop at the first `n >= 1` with `|U_{n+1} - U_n| <= theta |U_1 - U_0|`.
    RelativeReduction(f64),
    /// Exactly this many steps.
    FixedSteps(usize),
    /// Exactly `ceil(c p)` steps.
    Coupled { c: f64 },
}

impl Default for Stopping {
    fn default() -> Self {
        Stopping::RelativeReduction(1e-2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlgConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub q: usize,
    pub stopping: Stopping,
    pub max_iterations: usize,
    pub solver_path: SolverPath,
}

impl Default for IlgConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda: 1.0,
            q: 1,
            stopping: Stopping::default(),
            max_iterations: 500,
            solver_path: SolverPath::Condensed,
        }
    }
}

impl IlgConfig {
    pub fn validate(&self) -> Result<(), IlgError> {
        let bad = |m: &str| Err(IlgError::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and non-negative");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        match self.stopping {
            Stopping::RelativeReduction(t) if !(t > 0.0 && t < 1.0) => bad("theta must lie in (0, 1)"),
            Stopping::FixedSteps(0) => bad("fixed step count must be at least 1"),
            Stopping::Coupled { c } if !(c > 0.0) || !c.is_finite() => bad("coupling constant must be positive"),
            _ => Ok(()),
        }
    }

    /// Number of steps for the fixed-count rules at degree `p`.
    pub fn fixed_step_count(&self, p: usize) -> Option<usize> {
        match self.stopping {
            Stopping::RelativeReduction(_) => None,
            Stopping::FixedSteps(n) => Some(n),
            Stopping::Coupled { c } => Some(((c * p as f64).ceil() as usize).max(1)),
        }
    }
}

#[derive(Debug, Error)]
pub enum IlgError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no convergence after {iterations} steps; last difference ratio {ratio:e}")]
    NotConverged { iterations: usize, ratio: f64 },
    #[error("iteration diverged at step {step} (alpha = {alpha}, |U_n| = {norm:e}): {reason}")]
    Diverged {
        step: usize,
        alpha: f64,
        norm: f64,
        reason: String,
    },
    #[error(transparent)]
    Linear(#[from] LinearSolveError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Everything that stays fixed while iterating on one space.
#[derive(Debug)]
pub struct DiscreteProblem {
    pub space: HpSpace,
    pub stiffness: SymmetricSystem,
    pub load: Vec<f64>,
    pub factor: LinearFactor,
    pub nonlinear: NonlinearForm,
}

impl DiscreteProblem {
    /// Assembles and factors. Setup and factorization flops go to `meter`.
    pub fn new(
        space: HpSpace,
        f: &DataSurrogate,
        lambda: f64,
        q: usize,
        path: SolverPath,
        meter: &FlopMeter,
    ) -> Result<Self, IlgError> {
        let stiffness = assemble_stiffness(&space, meter);
        let load = assemble_load(&space, f, meter);
        let factor = LinearFactor::factor(&stiffness, path, meter)?;
        let nonlinear = NonlinearForm::new(&space, lambda, q);
        Ok(Self {
            space,
            stiffness,
            load,
            factor,
            nonlinear,
        })
    }

    pub fn n_free(&self) -> usize {
        self.space.n_free()
    }

    /// Energy seminorm `|grad v|_{L2}` of a free coefficient vector.
    pub fn energy_norm(&self, v: &[f64]) -> f64 {
        self.stiffness.quadratic_form(v).max(0.0).sqrt()
    }

    /// Residual `a(U, .) + lambda b(U; .) - (f, .)` over the free DOFs.
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        let au = self.stiffness.matvec(u);
        let bu = self.nonlinear.apply(&self.space, u, &FlopMeter::new());
        au.iter()
            .zip(&bu)
            .zip(&self.load)
            .map(|((a, b), f)| a + b - f)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRow {
    pub p: usize,
    pub step: usize,
    pub l2_diff: f64,
    pub energy_diff: f64,
    pub flops: u64,
}

#[derive(Debug, Clone)]
pub struct IlgState {
    pub u: Vec<f64>,
    pub eta: Vec<f64>,
    pub step: usize,
    pub log: Vec<IterationRow>,
}

impl IlgState {
    pub fn new(u0: Vec<f64>) -> Self {
        let n = u0.len();
        Self {
            u: u0,
            eta: vec![0.0; n],
            step: 0,
            log: Vec::new(),
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One Picard step; the factorization is reused.
pub fn picard_step(
    problem: &DiscreteProblem,
    state: &mut IlgState,
    alpha: f64,
    meter: &FlopMeter,
) -> Result<(), IlgError> {
    let before = meter.report();
    let b = problem.nonlinear.apply(&problem.space, &state.u, meter);
    let rhs: Vec<f64> = problem.load.iter().zip(&b).map(|(f, b)| f - b).collect();
    let eta = problem.factor.solve(&rhs, meter)?;
    let n = eta.len();
    let mut diff = vec![0.0; n];
    for i in 0..n {
        let next = (1.0 - alpha) * state.u[i] + alpha * eta[i];
        diff[i] = next - state.u[i];
        state.u[i] = next;
    }
    // one multiply and one multiply-add per entry
    meter.add(Phase::Backsolve, 3 * n as u64);
    state.eta = eta;
    let l2_diff = l2(&diff);
    if !state.u.iter().all(|v| v.is_finite()) || !l2_diff.is_finite() {
        return Err(IlgError::Diverged {
            step: state.step,
            alpha,
            norm: l2(&state.u),
            reason: "non-finite iterate".into(),
        });
    }
    let energy_diff = problem.energy_norm(&diff);
    state.log.push(IterationRow {
        p: problem.space.degree(),
        step: state.step,
        l2_diff,
        energy_diff,
        flops: meter.report().since(&before).total(),
    });
    state.step += 1;
    Ok(())
}

/// Outcome of an ILG run on one space.
#[derive(Debug, Clone)]
pub struct IlgRun {
    pub u: Vec<f64>,
    pub log: Vec<IterationRow>,
    /// Flops spent in the iteration only (solves and nonlinear evaluations).
    pub flops: FlopReport,
}

impl IlgRun {
    pub fn iterations(&self) -> usize {
        self.log.len()
    }
}

/// Iterates from `u_init` until the stopping rule fires.
pub fn run_ilg(
    problem: &DiscreteProblem,
    config: &IlgConfig,
    u_init: Vec<f64>,
    meter: &FlopMeter,
) -> Result<IlgRun, IlgError> {
    config.validate()?;
    if u_init.len() != problem.n_free() {
        return Err(LinearSolveError::DimensionMismatch {
            expected: problem.n_free(),
            got: u_init.len(),
        }
        .into());
    }
    let start = meter.report();
    let mut state = IlgState::new(u_init);
    let fixed = config.fixed_step_count(problem.space.degree());
    let mut growth_streak = 0;
    loop {
        picard_step(problem, &mut state, config.alpha, meter)?;
        let n = state.log.len();
        let d_n = state.log[n - 1].l2_diff;
        if n >= 2 {
            let ratio = d_n / state.log[n - 2].l2_diff;
            growth_streak = if ratio > 10.0 { growth_streak + 1 } else { 0 };
            if growth_streak >= 3 {
                return Err(IlgError::Diverged {
                    step: n,
                    alpha: config.alpha,
                    norm: l2(&state.u),
                    reason: "difference ratio above 10 for 3 consecutive steps".into(),
                });
            }
        }
        match (fixed, config.stopping) {
            (Some(k), _) if n >= k => break,
            (None, Stopping::RelativeReduction(theta)) if n >= 2 && d_n <= theta * state.log[0].l2_diff => break,
            _ => {}
        }
        if n >= config.max_iterations {
            if fixed.is_some() {
                break;
            }
            return Err(IlgError::NotConverged {
                iterations: n,
                ratio: d_n / state.log[0].l2_diff,
            });
        }
    }
    Ok(IlgRun {
        u: state.u,
        log: state.log,
        flops: meter.report().since(&start),
    })
}

/// Contraction diagnostics for a hypothesised Lipschitz constant `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionDiagnostics {
    /// Energy-norm ratios `|U_{n+1} - U_n| / |U_n - U_{n-1}|`.
    pub ratios: Vec<f64>,
    /// Geometric rate from a least-squares fit of `log |U_{n+1} - U_n|`.
    pub fitted_rate: f64,
    pub r_alpha: f64,
    pub alpha_star: f64,
    pub r_min: f64,
}

/// `sqrt((1 - alpha)^2 + alpha^2 L^2)`.
pub fn r_alpha(alpha: f64, l: f64) -> f64 {
    ((1.0 - alpha).powi(2) + alpha * alpha * l * l).sqrt()
}

pub fn alpha_star(l: f64) -> f64 {
    1.0 / (1.0 + l * l)
}

pub fn r_min(l: f64) -> f64 {
    l / (1.0 + l * l).sqrt()
}

pub fn contraction_report(log: &[IterationRow], alpha: f64, l_hypothesis: f64) -> Option<ContractionDiagnostics> {
    if log.len() < 3 {
        return None;
    }
    let ratios = log.windows(2).map(|w| w[1].energy_diff / w[0].energy_diff).collect();
    let ys: Vec<f64> = log.iter().map(|r| r.energy_diff.ln()).collect();
    let n = ys.len() as f64;
    let xbar = (n - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
    }
    Some(ContractionDiagnostics {
        ratios,
        fitted_rate: (sxy / sxx).exp(),
        r_alpha: r_alpha(alpha, l_hypothesis),
        alpha_star: alpha_star(l_hypothesis),
        r_min: r_min(l_hypothesis),
    })
}

/// Solves the small SPD normal equations `M c = r` in place of `r`.
fn solve_spd(mut m: Vec<f64>, n: usize, r: &mut [f64]) {
    if n == 0 {
        return;
    }
    cholesky_in_place(&mut m, n, 0.0).expect("projection mass matrix is SPD");
    forward_substitution(&m, n, r);
    backward_substitution(&m, n, r);
}

/// Projection-based interpolant of `g` onto `space`, as global (unconstrained)
/// coefficients: vertex values, then an L2 fit of the remaining trace on
/// each edge, then an L2 fit of the remainder on each element interior.
pub fn interpolate_global(space: &HpSpace, mut g: impl FnMut(Point) -> f64) -> Vec<f64> {
    let mesh = space.mesh();
    let p = space.degree();
    let table = space.table();
    let nm = table.len();
    let mut coeffs = vec![0.0; space.n_global()];
    for (v, x) in mesh.vertices().iter().enumerate() {
        coeffs[v] = g(*x);
    }
    let mut vals = vec![0.0; nm];
    let mut grads = vec![[0.0; 2]; nm];

    // edges, through the first owning triangle
    if p >= 2 {
        let gauss = gauss_1d(p + 2);
        let ref_vertices = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let mut done = vec![false; mesh.edges().len()];
        for t in 0..mesh.num_triangles() {
            let tedges = mesh.triangle_edges(t);
            let map = mesh.affine_map(t);
            for j in 0..3 {
                let e = tedges[j];
                if done[e] {
                    continue;
                }
                done[e] = true;
                let modes: Vec<usize> = table
                    .modes()
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| matches!(m, ModeKind::Edge { edge, .. } if *edge == j))
                    .map(|(i, _)| i)
                    .collect();
                let k = modes.len();
                let mut mass = vec![0.0; k * k];
                let mut rhs = vec![0.0; k];
                let (a, b) = (ref_vertices[j], ref_vertices[(j + 1) % 3]);
                let mut local = vec![0.0; nm];
                space.gather_global(t, &coeffs, &mut local);
                for (s, w) in gauss.points.iter().zip(&gauss.weights) {
                    let s = 0.5 * (s + 1.0);
                    let xi = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                    table.eval_into(xi, &mut vals, &mut grads);
                    let vertex_part: f64 = (0..3).map(|i| local[i] * vals[i]).sum();
                    let r = g(map.forward(xi)) - vertex_part;
                    for (ri, &mi) in modes.iter().enumerate() {
                        rhs[ri] += w * r * vals[mi];
                        for (ci, &mc) in modes.iter().enumerate() {
                            mass[ri * k + ci] += w * vals[mi] * vals[mc];
                        }
                    }
                }
                solve_spd(mass, k, &mut rhs);
                let dofs = space.global_dofs(t);
                let signs = space.signs(t);
                for (ri, &mi) in modes.iter().enumerate() {
                    coeffs[dofs[mi]] = signs[mi] * rhs[ri];
                }
            }
        }
    }

    // interiors
    let interior = table.interior_modes();
    let k = interior.len();
    if k > 0 {
        let rule = triangle_rule(2 * p);
        let tab = table.tabulate(&rule.points);
        let mut mass = vec![0.0; k * k];
        for q in 0..tab.n_points {
            let v = tab.value_row(q);
            for (ri, &mi) in interior.iter().enumerate() {
                for (ci, &mc) in interior.iter().enumerate() {
                    mass[ri * k + ci] += rule.weights[q] * v[mi] * v[mc];
                }
            }
        }
        let mut local = vec![0.0; nm];
        for t in 0..mesh.num_triangles() {
            let map = mesh.affine_map(t);
            space.gather_global(t, &coeffs, &mut local);
            let mut rhs = vec![0.0; k];
            for q in 0..tab.n_points {
                let v = tab.value_row(q);
                let skeleton: f64 = table
                    .modes()
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| !m.is_interior())
                    .map(|(i, _)| local[i] * v[i])
                    .sum();
                let r = g(map.forward(rule.points[q])) - skeleton;
                for (ri, &mi) in interior.iter().enumerate() {
                    rhs[ri] += rule.weights[q] * r * v[mi];
                }
            }
            solve_spd(mass.clone(), k, &mut rhs);
            let dofs = space.global_dofs(t);
            for (ri, &mi) in interior.iter().enumerate() {
                coeffs[dofs[mi]] = rhs[ri];
            }
        }
    }
    coeffs
}

/// Evaluates a discrete function at a physical point, locating it in its mesh.
pub fn eval_at(space: &HpSpace, u: &[f64], x: Point) -> Result<(f64, [f64; 2]), MeshError> {
    let (t, xi) = space.mesh().locate_point_clamped(x)?;
    Ok(space.eval(u, t, xi))
}

/// Interpolates the discrete function `u_prev` on `prev` into `next`;
/// returns free coefficients.
pub fn project_initial_guess(prev: &HpSpace, u_prev: &[f64], next: &HpSpace) -> Result<Vec<f64>, IlgError> {
    let mut failure = None;
    let global = interpolate_global(next, |x| match eval_at(prev, u_prev, x) {
        Ok((v, _)) => v,
        Err(e) => {
            failure.get_or_insert(e);
            0.0
        }
    });
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(next.restrict(&global))
}

/// `|grad (u_h - u_ref)|_{L2}` where `u_ref` lives on `reference` and the
/// integral runs over the reference mesh with a degree-`degree` rule.
pub fn compute_energy_error(
    space: &HpSpace,
    u: &[f64],
    reference: &HpSpace,
    u_ref: &[f64],
    degree: usize,
) -> Result<f64, MeshError> {
    energy_error_against(reference.mesh(), degree, |t, xi, x| {
        let (_, g_ref) = reference.eval(u_ref, t, xi);
        let (_, g) = eval_at(space, u, x)?;
        Ok([g[0] - g_ref[0], g[1] - g_ref[1]])
    })
}

/// `|grad (u_h - u)|_{L2}` for an exact gradient, integrated on the mesh of
/// `space` with a degree-`degree` rule.
pub fn compute_energy_error_exact(
    space: &HpSpace,
    u: &[f64],
    grad: impl Fn(Point) -> [f64; 2],
    degree: usize,
) -> f64 {
    energy_error_against(space.mesh(), degree, |t, xi, x| {
        let (_, g) = space.eval(u, t, xi);
        let ge = grad(x);
        Ok([g[0] - ge[0], g[1] - ge[1]])
    })
    .expect("evaluation on the own mesh cannot fail")
}

fn energy_error_against(
    mesh: &HpMesh,
    degree: usize,
    mut diff: impl FnMut(usize, [f64; 2], Point) -> Result<[f64; 2], MeshError>,
) -> Result<f64, MeshError> {
    let rule = triangle_rule(degree);
    let mut total = 0.0;
    for t in 0..mesh.num_triangles() {
        let map = mesh.affine_map(t);
        let det = map.det().abs();
        let mut s = 0.0;
        for (xi, w) in rule.points.iter().zip(&rule.weights) {
            let d = diff(t, *xi, map.forward(*xi))?;
            s += w * (d[0] * d[0] + d[1] * d[1]);
        }
        total += det * s;
    }
    Ok(total.sqrt())
}
