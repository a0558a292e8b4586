//! Self-checks with known answers, run by `hpilg verify`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble_stiffness, DataSurrogate, HpSpace, NonlinearForm};
use crate::bench::{manufactured_solution, manufactured_source};
use crate::flops::FlopMeter;
use crate::ilg::{compute_energy_error_exact, run_ilg, DiscreteProblem, IlgConfig, IlgState, Stopping};
use crate::linear_solve::{factor_condensed, factor_dense, SolverPath};
use crate::mesh::{build_initial_mesh, HpMesh, InitialMesh, PolygonDomain};
use crate::quadrature::triangle_rule;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn builtin(square: bool) -> Arc<HpMesh> {
    let (d, m) = if square {
        (PolygonDomain::unit_square(), InitialMesh::Square32)
    } else {
        (PolygonDomain::l_shape(), InitialMesh::LShape24)
    };
    Arc::new(build_initial_mesh(&d, &m).expect("builtin mesh"))
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Every monomial of degree `<= max_degree` against `a! b! / (a+b+2)!`.
pub fn quadrature_exactness(max_degree: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    for d in 0..=max_degree {
        let rule = triangle_rule(d);
        for a in 0..=d as u32 {
            for b in 0..=(d as u32 - a) {
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                let got = rule.integrate(|[x, y]| x.powi(a as i32) * y.powi(b as i32));
                worst = worst.max((got - exact).abs() / exact);
            }
        }
    }
    check(
        "quadrature exactness",
        worst <= 1e-13,
        format!("max relative error {worst:.2e} up to degree {max_degree}"),
    )
}

/// Manufactured bubble solution recovered to `1e-9` for each degree.
pub fn manufactured(degrees: &[usize]) -> CheckResult {
    let u = manufactured_solution();
    let f = DataSurrogate::Polynomial(manufactured_source(&u, 1.0, 1));
    let (ux, uy) = (u.dx(), u.dy());
    let config = IlgConfig {
        stopping: Stopping::RelativeReduction(1e-12),
        max_iterations: 1000,
        ..IlgConfig::default()
    };
    let mut worst: f64 = 0.0;
    for &p in degrees {
        let mesh = Arc::new(builtin(true).with_layers(p).expect("refinement"));
        let space = HpSpace::build(mesh, p).expect("degree");
        let meter = FlopMeter::new();
        let problem = DiscreteProblem::new(space, &f, 1.0, 1, SolverPath::Condensed, &meter).expect("setup");
        let run = run_ilg(&problem, &config, vec![0.0; problem.n_free()], &meter).expect("convergence");
        let err = compute_energy_error_exact(
            &problem.space,
            &run.u,
            |x| [ux.eval(x.x, x.y), uy.eval(x.x, x.y)],
            2 * p.max(4),
        );
        worst = worst.max(err);
    }
    check(
        "manufactured solution",
        worst <= 1e-9,
        format!("max energy error {worst:.2e} for p in {degrees:?}"),
    )
}

/// With `lambda = 0` and `alpha = 1/2` successive differences halve exactly.
pub fn linear_contraction(steps: usize) -> CheckResult {
    let space = HpSpace::build(builtin(true), 3).expect("degree");
    let meter = FlopMeter::new();
    let problem = DiscreteProblem::new(space, &DataSurrogate::constant(1.0), 0.0, 1, SolverPath::Condensed, &meter)
        .expect("setup");
    let mut state = IlgState::new(vec![0.0; problem.n_free()]);
    for _ in 0..=steps {
        crate::ilg::picard_step(&problem, &mut state, 0.5, &meter).expect("step");
    }
    let worst = state
        .log
        .windows(2)
        .map(|w| (w[1].l2_diff / w[0].l2_diff - 0.5).abs())
        .fold(0.0, f64::max);
    check(
        "linear contraction",
        worst <= 1e-12,
        format!("max |ratio - 1/2| = {worst:.2e} over {steps} steps"),
    )
}

/// Dense and condensed solutions agree on both builtin meshes.
pub fn condensation_equivalence(max_p: usize, rhs_count: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for square in [true, false] {
        for p in 1..=max_p {
            let space = HpSpace::build(builtin(square), p).expect("degree");
            let system = assemble_stiffness(&space, &FlopMeter::new());
            let meter = FlopMeter::new();
            let dense = factor_dense(&system, &meter).expect("dense factor");
            let cond = factor_condensed(&system, &meter).expect("condensed factor");
            for _ in 0..rhs_count {
                let b: Vec<f64> = (0..space.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let x = dense.solve(&b, &meter).expect("solve");
                let y = cond.solve(&b, &meter).expect("solve");
                let num = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let den = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                worst = worst.max(num / den);
            }
        }
    }
    check(
        "condensation equivalence",
        worst <= 1e-10,
        format!("max relative deviation {worst:.2e} for p <= {max_p}"),
    )
}

/// `(b(U) - b(V)) . (U - V) >= -1e-12` for random coefficient pairs.
pub fn monotonicity(pairs: usize, seed: u64) -> CheckResult {
    let space = HpSpace::build(builtin(true), 4).expect("degree");
    let form = NonlinearForm::new(&space, 1.0, 1);
    let meter = FlopMeter::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..pairs {
        let u: Vec<f64> = (0..space.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..space.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bu = form.apply(&space, &u, &meter);
        let bv = form.apply(&space, &v, &meter);
        let pairing: f64 = (0..u.len()).map(|i| (bu[i] - bv[i]) * (u[i] - v[i])).sum();
        worst = worst.min(pairing);
    }
    check(
        "monotonicity",
        worst >= -1e-12,
        format!("min pairing {worst:.3e} over {pairs} pairs"),
    )
}

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        quadrature_exactness(40),
        manufactured(&[4, 5, 6, 7, 8]),
        linear_contraction(10),
        condensation_equivalence(8, 5, seed),
        monotonicity(200, seed),
    ]
}
