//! Convergence experiments over the coupled sequence of spaces: degree `p`
//! on the mesh with `k = p` corner layers, `p = 1..=p_max`.

pub mod config;
pub mod records;

use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

pub use config::{ConfigError, DomainSpec, ExperimentConfig, MeshSpec, SourceSpec};
pub use records::{
    emit_records, fit_exponential, linear_fit, parse_records, ConvergenceRecord, ExponentialFit, RecordError,
    WorkKey,
};

use crate::assembly::{DataSurrogate, HpSpace};
use crate::flops::FlopMeter;
use crate::ilg::{
    compute_energy_error, compute_energy_error_exact, picard_step, project_initial_guess, run_ilg, DiscreteProblem,
    IlgConfig, IlgError, IlgRun, IlgState, IterationRow, Stopping,
};
use crate::linear_solve::SolverPath;
use crate::mesh::{build_initial_mesh, read_mesh_text, HpMesh, InitialMesh, MeshError, PolygonDomain};
use crate::poly::Poly2;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("level p = {p}")]
    Level { p: usize, source: IlgError },
    #[error("reference solve (p = {p})")]
    Reference { p: usize, source: IlgError },
    #[error("error evaluation at p = {p}")]
    ErrorEvaluation { p: usize, source: MeshError },
    #[error(transparent)]
    Records(#[from] RecordError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `x(1-x)y(1-y)`.
pub fn manufactured_solution() -> Poly2 {
    let one = Poly2::constant(1.0);
    let (x, y) = (Poly2::x(), Poly2::y());
    &(&x * &(&one - &x)) * &(&y * &(&one - &y))
}

/// `-lap u + lambda u^(2q+1)`.
pub fn manufactured_source(u: &Poly2, lambda: f64, q: usize) -> Poly2 {
    &(-&u.laplacian()) + &u.pow(2 * q as u32 + 1).scale(lambda)
}

pub fn build_domain(cfg: &ExperimentConfig) -> Result<PolygonDomain, MeshError> {
    let corners = match &cfg.domain {
        DomainSpec::Square => PolygonDomain::unit_square().corners().to_vec(),
        DomainSpec::LShape => PolygonDomain::l_shape().corners().to_vec(),
        DomainSpec::Polygon(c) => c.clone(),
    };
    match &cfg.dirichlet {
        None => PolygonDomain::all_dirichlet(corners),
        Some(d) => PolygonDomain::new(corners, d),
    }
}

pub fn build_first_mesh(cfg: &ExperimentConfig, domain: &PolygonDomain) -> Result<HpMesh, MeshError> {
    let spec = match (&cfg.initial_mesh, &cfg.domain) {
        (MeshSpec::Builtin, DomainSpec::Square) => InitialMesh::Square32,
        (MeshSpec::Builtin, DomainSpec::LShape) => InitialMesh::LShape24,
        (MeshSpec::Builtin, DomainSpec::Polygon(_)) => {
            return Err(MeshError::InvalidDomain("custom polygons need an explicit mesh".into()))
        }
        (MeshSpec::File(path), _) => {
            let text = read_mesh_text(BufReader::new(fs::File::open(path)?))?;
            InitialMesh::Explicit {
                vertices: text.vertices,
                triangles: text.triangles,
            }
        }
    };
    build_initial_mesh(domain, &spec)
}

pub fn source_surrogate(cfg: &ExperimentConfig) -> DataSurrogate {
    match &cfg.f {
        SourceSpec::Constant(c) => DataSurrogate::constant(*c),
        SourceSpec::Polynomial(p) => DataSurrogate::Polynomial(p.clone()),
        SourceSpec::Manufactured => {
            DataSurrogate::Polynomial(manufactured_source(&manufactured_solution(), cfg.lambda, cfg.q))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceInfo {
    pub p: usize,
    pub n_free: usize,
    pub iterations: usize,
    pub final_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<ConvergenceRecord>,
    pub iterations: Vec<IterationRow>,
    /// Measured wall time per level; also in the records unless deterministic.
    pub timings: Vec<(usize, f64)>,
    pub reference: Option<ReferenceInfo>,
}

struct Reference {
    space: HpSpace,
    u: Vec<f64>,
    info: ReferenceInfo,
}

/// Steps without a new smallest difference after which the reference
/// iteration is considered to have reached the roundoff floor.
pub const STAGNATION_WINDOW: usize = 20;

/// Picard iteration from zero until the difference ratio drops below
/// `reference_theta`, or until it stagnates at the roundoff floor.
fn reference_iteration(problem: &DiscreteProblem, cfg: &ExperimentConfig, meter: &FlopMeter) -> Result<IlgRun, IlgError> {
    let config = IlgConfig {
        stopping: Stopping::RelativeReduction(cfg.reference_theta),
        ..cfg.ilg_config()
    };
    config.validate()?;
    let mut state = IlgState::new(vec![0.0; problem.n_free()]);
    let mut best = (f64::INFINITY, 0, Vec::new());
    let start = meter.report();
    loop {
        picard_step(problem, &mut state, config.alpha, meter)?;
        let n = state.log.len();
        let d = state.log[n - 1].l2_diff;
        if d < best.0 {
            best = (d, n, state.u.clone());
        }
        let converged = n >= 2 && d <= cfg.reference_theta * state.log[0].l2_diff;
        if converged || n - best.1 >= STAGNATION_WINDOW || n >= REFERENCE_MAX_STEPS {
            break;
        }
    }
    let (_, n_best, u) = best;
    state.log.truncate(n_best);
    Ok(IlgRun {
        u,
        log: state.log,
        flops: meter.report().since(&start),
    })
}

const REFERENCE_MAX_STEPS: usize = 2000;

fn solve_reference(
    cfg: &ExperimentConfig,
    first: &HpMesh,
    f: &DataSurrogate,
    progress: &mut dyn FnMut(&str),
) -> Result<Reference, ExperimentError> {
    let p = cfg.p_ref();
    let wrap = |source| ExperimentError::Reference { p, source };
    let mesh = Arc::new(first.with_layers(p)?);
    let space = HpSpace::build(mesh, p).expect("degree >= 1");
    progress(&format!("reference: p = {p}, {} free DOFs", space.n_free()));
    let meter = FlopMeter::new();
    let problem = DiscreteProblem::new(space, f, cfg.lambda, cfg.q, SolverPath::Condensed, &meter).map_err(wrap)?;
    let run = reference_iteration(&problem, cfg, &meter).map_err(wrap)?;
    let info = ReferenceInfo {
        p,
        n_free: problem.n_free(),
        iterations: run.iterations(),
        final_ratio: run.log.last().unwrap().l2_diff / run.log[0].l2_diff,
    };
    progress(&format!(
        "reference: {} iterations, difference ratio {:.2e}",
        info.iterations, info.final_ratio
    ));
    Ok(Reference {
        space: problem.space,
        u: run.u,
        info,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    run_experiment_with_progress(cfg, &mut |_| {})
}

pub fn run_experiment_with_progress(
    cfg: &ExperimentConfig,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let domain = build_domain(cfg)?;
    let first = build_first_mesh(cfg, &domain)?;
    let f = source_surrogate(cfg);
    let reference = match cfg.f {
        SourceSpec::Manufactured => None,
        _ => Some(solve_reference(cfg, &first, &f, progress)?),
    };
    let exact = manufactured_solution();
    let (ux, uy) = (exact.dx(), exact.dy());

    let ilg = cfg.ilg_config();
    let mut records = Vec::with_capacity(cfg.p_max);
    let mut iterations = Vec::new();
    let mut timings = Vec::new();
    let mut previous: Option<(HpSpace, Vec<f64>)> = None;
    for p in 1..=cfg.p_max {
        let level = |source| ExperimentError::Level { p, source };
        let mesh = Arc::new(first.with_layers(p)?);
        let meter = FlopMeter::new();
        let clock = Instant::now();
        let space = HpSpace::build(mesh.clone(), p).expect("degree >= 1");
        let problem = DiscreteProblem::new(space, &f, cfg.lambda, cfg.q, cfg.solver, &meter).map_err(level)?;
        let u0 = match &previous {
            Some((prev, u)) => project_initial_guess(prev, u, &problem.space).map_err(level)?,
            None => vec![0.0; problem.n_free()],
        };
        let factor_flops = meter.report().factor;
        let run = run_ilg(&problem, &ilg, u0, &meter).map_err(level)?;
        let wall = clock.elapsed().as_secs_f64();
        let totals = meter.report();

        let error_energy = match &reference {
            Some(r) => compute_energy_error(&problem.space, &run.u, &r.space, &r.u, 2 * r.info.p)
                .map_err(|source| ExperimentError::ErrorEvaluation { p, source })?,
            None => compute_energy_error_exact(
                &problem.space,
                &run.u,
                |x| [ux.eval(x.x, x.y), uy.eval(x.x, x.y)],
                2 * p.max(exact.degree()),
            ),
        };
        let record = ConvergenceRecord {
            p,
            layers: mesh.layer_count(),
            elements: mesh.num_triangles(),
            n_free: problem.n_free(),
            iterations: run.iterations(),
            error_energy,
            flops_factor: factor_flops,
            flops_iterate_total: run.flops.total(),
            flops_total: totals.total(),
            wall_seconds: if cfg.deterministic { 0.0 } else { wall },
        };
        progress(&format!(
            "p = {p:2}: N = {:6}, iterations = {:3}, error = {:.3e}, flops = {:.3e}, {:.2} s",
            record.n_free, record.iterations, record.error_energy, record.flops_total as f64, wall
        ));
        records.push(record);
        timings.push((p, wall));
        iterations.extend(run.log.iter().copied());
        previous = Some((problem.space, run.u));
    }
    Ok(ExperimentOutput {
        records,
        iterations,
        timings,
        reference: reference.map(|r| r.info),
    })
}

/// Writes `records.csv` (+ `.meta`), `iterations.csv` and `timings.csv`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir)?;
    let mut echo = cfg.echo();
    if let Some(r) = &out.reference {
        echo.push_str(&format!(
            "# reference: p = {}, n_free = {}, iterations = {}, final ratio = {:e}\n",
            r.p, r.n_free, r.iterations, r.final_ratio
        ));
    }
    emit_records(&out.records, &dir.join("records.csv"), &echo)?;
    let mut it = fs::File::create(dir.join("iterations.csv"))?;
    writeln!(it, "p,step,l2_diff,energy_diff,flops")?;
    for r in &out.iterations {
        writeln!(it, "{},{},{:.16e},{:.16e},{}", r.p, r.step, r.l2_diff, r.energy_diff, r.flops)?;
    }
    let mut tm = fs::File::create(dir.join("timings.csv"))?;
    writeln!(tm, "p,wall_seconds")?;
    for (p, s) in &out.timings {
        writeln!(tm, "{p},{s:.6e}")?;
    }
    Ok(())
}
