use std::sync::Arc;

use proptest::prelude::*;

use hpilg::assembly::{HpSpace, NonlinearForm};
use hpilg::bench::records::{read_records, write_records};
use hpilg::bench::ConvergenceRecord;
use hpilg::flops::FlopMeter;
use hpilg::geometry::Point;
use hpilg::mesh::{build_initial_mesh, HpMesh, InitialMesh, PolygonDomain};
use hpilg::quadrature::triangle_rule;

fn square(k: usize) -> HpMesh {
    build_initial_mesh(&PolygonDomain::unit_square(), &InitialMesh::Square32)
        .unwrap()
        .with_layers(k)
        .unwrap()
}

fn lshape(k: usize) -> HpMesh {
    build_initial_mesh(&PolygonDomain::l_shape(), &InitialMesh::LShape24)
        .unwrap()
        .with_layers(k)
        .unwrap()
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn monomials_integrate_exactly(d in 0usize..=30, a in 0u32..=30, b in 0u32..=30) {
        prop_assume!((a + b) as usize <= d);
        let rule = triangle_rule(d);
        let got = rule.integrate(|[x, y]| x.powi(a as i32) * y.powi(b as i32));
        let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
        prop_assert!((got - exact).abs() <= 1e-13 * exact);
    }

    #[test]
    fn located_points_map_back(k in 1usize..6, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let mesh = lshape(k);
        // map the unit square onto [-1,1]^2 and skip the removed quadrant
        let x = Point::new(2.0 * u - 1.0, 2.0 * v - 1.0);
        prop_assume!(!(x.x > 0.0 && x.y < 0.0));
        let (t, xi) = mesh.locate_point(x).unwrap();
        let back = mesh.affine_map(t).forward(xi);
        prop_assert!(back.dist(x) <= 1e-10);
        prop_assert!(xi[0] >= -1e-12 && xi[1] >= -1e-12 && xi[0] + xi[1] <= 1.0 + 1e-12);
    }

    #[test]
    fn areas_sum_to_domain_area(k in 1usize..10) {
        for mesh in [square(k), lshape(k)] {
            let total: f64 = (0..mesh.num_triangles()).map(|t| mesh.area(t)).sum();
            let area = mesh.domain().area();
            prop_assert!((total - area).abs() <= 1e-12 * area);
            prop_assert!(mesh.validate_geometric().is_valid());
        }
    }

    #[test]
    fn reaction_term_is_monotone(seed in any::<u64>(), scale in 0.01f64..4.0) {
        use rand::{Rng, SeedableRng};
        let space = HpSpace::build(Arc::new(square(2)), 3).unwrap();
        let form = NonlinearForm::new(&space, 1.0, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..space.n_free()).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..space.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let meter = FlopMeter::new();
        let bu = form.apply(&space, &u, &meter);
        let bv = form.apply(&space, &v, &meter);
        let pairing: f64 = (0..u.len()).map(|i| (bu[i] - bv[i]) * (u[i] - v[i])).sum();
        prop_assert!(pairing >= -1e-12);
    }

    #[test]
    fn records_round_trip_bitwise(
        rows in prop::collection::vec(
            (1usize..20, 0usize..100_000, 1usize..500, any::<f64>(), any::<u64>(), 0.0f64..1e4),
            0..8,
        )
    ) {
        let records: Vec<ConvergenceRecord> = rows
            .iter()
            .map(|&(p, n, it, e, fl, s)| ConvergenceRecord {
                p,
                layers: p,
                elements: 24 + 32 * p,
                n_free: n,
                iterations: it,
                error_energy: if e.is_finite() { e.abs() } else { 0.0 },
                flops_factor: fl / 3,
                flops_iterate_total: fl / 5,
                flops_total: fl,
                wall_seconds: s,
            })
            .collect();
        let mut buf = Vec::new();
        write_records(&records, &mut buf).unwrap();
        let back = read_records(&buf[..]).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            prop_assert_eq!(a.error_energy.to_bits(), b.error_energy.to_bits());
            prop_assert_eq!(a.wall_seconds.to_bits(), b.wall_seconds.to_bits());
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn shared_edge_traces_agree() {
    let mesh = Arc::new(lshape(3));
    let p = 6;
    let space = HpSpace::build(mesh.clone(), p).unwrap();
    let nm = space.n_modes();
    let mut coeffs = vec![0.0; space.n_global()];
    let mut local = vec![0.0; nm];
    let mut vals = vec![0.0; nm];
    let mut grads = vec![[0.0; 2]; nm];
    let mut trace = |t: usize, x: Point, coeffs: &[f64]| {
        let xi = mesh.affine_map(t).inverse(x);
        space.gather_global(t, coeffs, &mut local);
        space.table().eval_into(xi, &mut vals, &mut grads);
        local.iter().zip(&vals).map(|(c, v)| c * v).sum::<f64>()
    };
    // one skeleton DOF at a time
    for g in 0..mesh.vertices().len() + mesh.edges().len() * (p - 1) {
        coeffs.iter_mut().for_each(|c| *c = 0.0);
        coeffs[g] = 1.0;
        for edge in mesh.edges() {
            let [Some(t0), Some(t1)] = edge.triangles else { continue };
            let a = mesh.vertices()[edge.vertices[0]];
            let b = mesh.vertices()[edge.vertices[1]];
            for k in 0..20 {
                let s = (k as f64 + 0.5) / 20.0;
                let x = Point::new(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y));
                let v0 = trace(t0, x, &coeffs);
                let v1 = trace(t1, x, &coeffs);
                assert!((v0 - v1).abs() <= 1e-12, "dof {g}, edge {:?}", edge.vertices);
            }
        }
    }
}

#[test]
fn space_dimension_formula() {
    for k in [1, 3, 6] {
        let mesh = Arc::new(lshape(k));
        for p in [1, 2, 5, 9] {
            let space = HpSpace::build(mesh.clone(), p).unwrap();
            let full = mesh.vertices().len()
                + mesh.edges().len() * (p - 1)
                + mesh.num_triangles() * (p - 1) * p.saturating_sub(2) / 2;
            let dirichlet_vertices = mesh.dirichlet_vertices().iter().filter(|&&d| d).count();
            let boundary_edges = mesh.edges().iter().filter(|e| e.triangles[1].is_none()).count();
            assert_eq!(space.n_global(), full);
            assert_eq!(space.n_free(), full - dirichlet_vertices - boundary_edges * (p - 1));
        }
    }
}
