use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttsgfem::fem::{
    assemble_load, assemble_load_full, assemble_stiffness, assemble_stiffness_full,
    element_data, facet_data, facet_jump, h1_seminorm_full, initial_mesh, restrict_to_free,
    FeFunction, FemError, Mesh,
};
use ttsgfem::sparse::EnvelopeCholesky;

fn assert_conforming(mesh: &Mesh) {
    let mut area = 0.0;
    for t in 0..mesh.n_triangles() {
        let a = mesh.tri_area(t);
        assert!(a > 0.0, "triangle {t} not positively oriented (area {a})");
        area += a;
    }
    assert!((area - 1.0).abs() < 1e-12, "areas must tile the unit square, got {area}");
    for (f, facet) in mesh.facets().iter().enumerate() {
        assert_eq!(facet.boundary, facet.tris.1.is_none());
        if facet.boundary {
            // A one-sided facet inside the domain would be a hanging node.
            let a = mesh.vertex(facet.v[0]);
            let b = mesh.vertex(facet.v[1]);
            let on_side = (a[0] == 0.0 && b[0] == 0.0)
                || (a[0] == 1.0 && b[0] == 1.0)
                || (a[1] == 0.0 && b[1] == 0.0)
                || (a[1] == 1.0 && b[1] == 1.0);
            assert!(on_side, "facet {f} has one neighbor but is not on the boundary");
        }
    }
}

fn triangle_angles(mesh: &Mesh, t: usize) -> [f64; 3] {
    let p = mesh.tri_corners(t);
    let mut angles = [0.0; 3];
    for i in 0..3 {
        let a = p[i];
        let b = p[(i + 1) % 3];
        let c = p[(i + 2) % 3];
        let u = [b[0] - a[0], b[1] - a[1]];
        let v = [c[0] - a[0], c[1] - a[1]];
        let dot = u[0] * v[0] + u[1] * v[1];
        let nu = (u[0] * u[0] + u[1] * u[1]).sqrt();
        let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
        angles[i] = (dot / (nu * nv)).clamp(-1.0, 1.0).acos().to_degrees();
    }
    angles
}

fn assert_right_isosceles(mesh: &Mesh) {
    for t in 0..mesh.n_triangles() {
        for angle in triangle_angles(mesh, t) {
            let ok = (angle - 45.0).abs() < 1e-9 || (angle - 90.0).abs() < 1e-9;
            assert!(ok, "angle {angle} strays from the 45/90 pattern");
        }
    }
}

#[test]
fn initial_mesh_has_expected_counts() {
    let m1 = initial_mesh(1);
    assert_eq!(m1.n_triangles(), 2);
    assert_eq!(m1.n_vertices(), 4);
    assert_eq!(m1.n_free(), 0);
    assert_conforming(&m1);

    let m4 = initial_mesh(4);
    assert_eq!(m4.n_triangles(), 32);
    assert_eq!(m4.n_vertices(), 25);
    assert_eq!(m4.n_free(), 9);
    assert_conforming(&m4);

    let m2 = initial_mesh(2);
    assert_eq!(m2.n_triangles(), 8);
    assert_right_isosceles(&m2);
}

#[test]
fn refine_with_empty_marking_is_identity() {
    let mesh = initial_mesh(2);
    let same = mesh.refine(&[]);
    assert_eq!(same.n_triangles(), mesh.n_triangles());
    assert_eq!(same.n_vertices(), mesh.n_vertices());
    for t in 0..mesh.n_triangles() {
        assert_eq!(same.triangle(t).v, mesh.triangle(t).v);
    }
}

#[test]
fn refining_one_triangle_of_the_coarsest_mesh_gives_four() {
    // Both start triangles share the diagonal as refinement edge, so marking
    // one splits the other through the closure.
    let mesh = initial_mesh(1);
    let fine = mesh.refine(&[0]);
    assert_eq!(fine.n_triangles(), 4);
    assert_eq!(fine.n_vertices(), 5);
    assert_conforming(&fine);
    assert_right_isosceles(&fine);
}

#[test]
fn uniform_refinement_halves_diameters_every_two_rounds() {
    let mut mesh = initial_mesh(2);
    let h0 = mesh.max_diameter();
    let n0 = mesh.n_triangles();
    for _ in 0..2 {
        let marked: Vec<usize> = (0..mesh.n_triangles()).collect();
        mesh = mesh.refine(&marked);
        assert_conforming(&mesh);
        assert_right_isosceles(&mesh);
    }
    assert!(mesh.n_triangles() >= 4 * n0);
    assert!(mesh.max_diameter() <= 0.5 * h0 + 1e-12);
}

#[test]
fn random_refinement_keeps_meshes_conforming() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mesh = initial_mesh(2);
    let h0 = mesh.max_diameter();
    for _ in 0..5 {
        let marked: Vec<usize> =
            (0..mesh.n_triangles()).filter(|_| rng.gen_bool(0.3)).collect();
        let fine = mesh.refine(&marked);
        for &t in &marked {
            // Marked triangles really get split: their area is gone.
            let parent_area = mesh.tri_area(t);
            let min_child: f64 =
                (0..fine.n_triangles()).map(|s| fine.tri_area(s)).fold(f64::MAX, f64::min);
            assert!(min_child < parent_area);
        }
        mesh = fine;
        assert_conforming(&mesh);
        assert_right_isosceles(&mesh);
        assert!(mesh.max_diameter() <= h0 + 1e-12);
    }
}

#[test]
fn prolongation_reproduces_linear_functions() {
    let mesh = initial_mesh(3);
    let coarse: Vec<f64> = (0..mesh.n_vertices())
        .map(|v| {
            let p = mesh.vertex(v);
            p[0] + 2.0 * p[1]
        })
        .collect();
    let fine = mesh.refine(&(0..mesh.n_triangles()).collect::<Vec<_>>());
    let prolonged = fine.prolong_full(&coarse);
    for v in 0..fine.n_vertices() {
        let p = fine.vertex(v);
        assert!((prolonged[v] - (p[0] + 2.0 * p[1])).abs() < 1e-14);
    }
}

#[test]
fn quadrature_points_are_edge_midpoints() {
    let mesh = initial_mesh(2);
    let elems = element_data(&mesh).unwrap();
    for (t, e) in elems.iter().enumerate() {
        let p = mesh.tri_corners(t);
        for q in 0..3 {
            let a = p[(q + 1) % 3];
            let b = p[(q + 2) % 3];
            assert!((e.quad_points[q][0] - 0.5 * (a[0] + b[0])).abs() < 1e-15);
            assert!((e.quad_points[q][1] - 0.5 * (a[1] + b[1])).abs() < 1e-15);
        }
        assert!((3.0 * e.quad_weight - e.area).abs() < 1e-15);
    }
}

#[test]
fn stiffness_row_sums_vanish_for_unit_coefficient() {
    for mesh in [initial_mesh(3), initial_mesh(2).refine(&[0, 3, 5])] {
        let ones = vec![1.0; 3 * mesh.n_triangles()];
        let k = assemble_stiffness_full(&mesh, &ones).unwrap();
        for i in 0..mesh.n_vertices() {
            let (_, vals) = k.row(i);
            let sum: f64 = vals.iter().sum();
            assert!(sum.abs() < 1e-12, "row {i} sums to {sum}");
        }
    }
}

#[test]
fn linear_function_has_unit_energy() {
    let mesh = initial_mesh(2);
    let ones = vec![1.0; 3 * mesh.n_triangles()];
    let k = assemble_stiffness_full(&mesh, &ones).unwrap();
    let u: Vec<f64> = (0..mesh.n_vertices()).map(|v| mesh.vertex(v)[0]).collect();
    let ku = k.matvec(&u);
    let energy: f64 = u.iter().zip(&ku).map(|(a, b)| a * b).sum();
    assert!((energy - 1.0).abs() < 1e-12, "energy {energy}");
}

#[test]
fn wrong_coefficient_length_is_rejected() {
    let mesh = initial_mesh(2);
    let err = assemble_stiffness(&mesh, &[1.0; 5]).unwrap_err();
    assert!(matches!(err, FemError::CoefficientLength { .. }));
}

#[test]
fn load_entries_sum_to_domain_area() {
    let mesh = initial_mesh(3).refine(&[1, 2]);
    let load = assemble_load_full(&mesh, |_| 1.0).unwrap();
    let sum: f64 = load.iter().sum();
    assert!((sum - 1.0).abs() < 1e-13, "sum {sum}");
}

#[test]
fn poisson_solution_peaks_near_reference_value() {
    // Series solution of the unit-load Dirichlet problem evaluated at the
    // center of the square.
    let reference = 0.07367135328151382;
    let mesh = initial_mesh(64);
    let ones = vec![1.0; 3 * mesh.n_triangles()];
    let k = assemble_stiffness(&mesh, &ones).unwrap();
    let f = assemble_load(&mesh, |_| 1.0).unwrap();
    let chol = EnvelopeCholesky::factor(&k).unwrap();
    let u = chol.solve(&f);

    let peak = u.iter().fold(0.0f64, |m, &v| m.max(v));
    assert!(
        (peak - reference).abs() < 1e-4,
        "peak {peak} vs reference {reference}"
    );

    // The direct solve leaves a negligible Galerkin residual.
    let ku = k.matvec(&u);
    let f_max = f.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    for (a, b) in ku.iter().zip(&f) {
        assert!((a - b).abs() <= 1e-10 * f_max);
    }
}

#[test]
fn jumps_vanish_for_continuous_flux() {
    let mesh = initial_mesh(2).refine(&[0, 1]);
    let jumps = facet_jump(&mesh, |_, _| [3.0, -2.0]);
    for (facet, j) in mesh.facets().iter().zip(&jumps) {
        match j {
            Some(vals) => {
                assert!(!facet.boundary);
                assert!(vals[0].abs() < 1e-14 && vals[1].abs() < 1e-14);
            }
            None => assert!(facet.boundary),
        }
    }
}

#[test]
fn piecewise_flux_jumps_across_the_midline() {
    let mesh = initial_mesh(2);
    let centroid_x = |t: usize| {
        let p = mesh.tri_corners(t);
        (p[0][0] + p[1][0] + p[2][0]) / 3.0
    };
    let jumps = facet_jump(&mesh, |t, _| if centroid_x(t) < 0.5 { [1.0, 0.0] } else { [0.0, 0.0] });
    let mut midline_facets = 0;
    for (facet, j) in mesh.facets().iter().zip(&jumps) {
        let Some(vals) = j else { continue };
        let a = mesh.vertex(facet.v[0]);
        let b = mesh.vertex(facet.v[1]);
        if a[0] == 0.5 && b[0] == 0.5 {
            midline_facets += 1;
            assert!((vals[0].abs() - 1.0).abs() < 1e-14);
            assert!((vals[1].abs() - 1.0).abs() < 1e-14);
        } else {
            assert!(vals[0].abs() < 1e-14 && vals[1].abs() < 1e-14);
        }
    }
    assert_eq!(midline_facets, 2);
}

#[test]
fn facet_normals_are_unit_and_outward_of_first_triangle() {
    let mesh = initial_mesh(2).refine(&[2]);
    for fd in facet_data(&mesh) {
        let norm = (fd.normal[0] * fd.normal[0] + fd.normal[1] * fd.normal[1]).sqrt();
        assert!((norm - 1.0).abs() < 1e-14);
        let p = mesh.tri_corners(fd.tris.0);
        let centroid = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
        let mid = [
            0.5 * (fd.quad_points[0][0] + fd.quad_points[1][0]),
            0.5 * (fd.quad_points[0][1] + fd.quad_points[1][1]),
        ];
        let dot = (mid[0] - centroid[0]) * fd.normal[0] + (mid[1] - centroid[1]) * fd.normal[1];
        assert!(dot > 0.0);
    }
}

#[test]
fn seminorm_matches_stiffness_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mesh = initial_mesh(3).refine(&[0, 2, 7]);
    let full: Vec<f64> = (0..mesh.n_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let direct = h1_seminorm_full(&mesh, &full);
    let ones = vec![1.0; 3 * mesh.n_triangles()];
    let k = assemble_stiffness_full(&mesh, &ones).unwrap();
    let ku = k.matvec(&full);
    let via_matrix: f64 = full.iter().zip(&ku).map(|(a, b)| a * b).sum::<f64>().sqrt();
    assert!((direct - via_matrix).abs() < 1e-12 * (1.0 + direct));

    let x_interp: Vec<f64> = (0..mesh.n_vertices()).map(|v| mesh.vertex(v)[0]).collect();
    assert!((h1_seminorm_full(&mesh, &x_interp) - 1.0).abs() < 1e-13);
    assert_eq!(h1_seminorm_full(&mesh, &vec![0.0; mesh.n_vertices()]), 0.0);
}

#[test]
fn fe_function_embeds_free_values() {
    let mesh = initial_mesh(4);
    let mut vals = vec![0.0; mesh.n_free()];
    vals[0] = 2.5;
    let f = FeFunction::new(&mesh, vals);
    let full = f.full_values();
    assert_eq!(full.len(), mesh.n_vertices());
    assert_eq!(full[mesh.free_vertices()[0]], 2.5);
    let on_boundary: f64 = (0..mesh.n_vertices())
        .filter(|&v| mesh.is_boundary_vertex(v))
        .map(|v| full[v].abs())
        .sum();
    assert_eq!(on_boundary, 0.0);
    assert_eq!(FeFunction::zero(&mesh).h1_seminorm(), 0.0);
}

#[test]
fn energy_error_decays_at_the_optimal_rate() {
    // Unit-load Laplace problem under uniform refinement: the H1 error
    // against a two-rounds-finer reference decays like dofs^(-1/2).
    let mut meshes = vec![initial_mesh(4)];
    for _ in 0..8 {
        let prev = meshes.last().unwrap();
        let marked: Vec<usize> = (0..prev.n_triangles()).collect();
        meshes.push(prev.refine(&marked));
    }
    let solve_full = |mesh: &Mesh| -> Vec<f64> {
        let ones = vec![1.0; 3 * mesh.n_triangles()];
        let k = assemble_stiffness(mesh, &ones).unwrap();
        let f = assemble_load(mesh, |_| 1.0).unwrap();
        let u = EnvelopeCholesky::factor(&k).unwrap().solve(&f);
        FeFunction::new(mesh, u).full_values()
    };
    let reference = solve_full(&meshes[8]);
    let mut points = Vec::new();
    for round in [0usize, 2, 4, 6] {
        let mut u = solve_full(&meshes[round]);
        for next in &meshes[round + 1..=8] {
            u = next.prolong_full(&u);
        }
        let diff: Vec<f64> = u.iter().zip(&reference).map(|(a, b)| a - b).collect();
        let err = h1_seminorm_full(&meshes[8], &diff);
        points.push(((meshes[round].n_free() as f64).ln(), err.ln()));
    }
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let slope: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum::<f64>();
    assert!(
        (slope + 0.5).abs() < 0.1,
        "convergence rate {slope} strays from -1/2"
    );
}

#[test]
fn restriction_picks_free_entries() {
    let mesh = initial_mesh(4);
    let full: Vec<f64> = (0..mesh.n_vertices()).map(|v| v as f64).collect();
    let free = restrict_to_free(&mesh, &full);
    assert_eq!(free.len(), mesh.n_free());
    for (slot, &v) in mesh.free_vertices().iter().enumerate() {
        assert_eq!(free[slot], v as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn refinement_keeps_conformity_and_angles(seed in 0u64..1000, n in 1usize..4, rounds in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mesh = initial_mesh(n);
        for _ in 0..rounds {
            let marked: Vec<usize> =
                (0..mesh.n_triangles()).filter(|_| rng.gen_bool(0.4)).collect();
            mesh = mesh.refine(&marked);
            assert_conforming(&mesh);
            assert_right_isosceles(&mesh);
        }
    }

    #[test]
    fn load_respects_partition_of_unity(n in 1usize..5) {
        let mesh = initial_mesh(n);
        let load = assemble_load_full(&mesh, |_| 1.0).unwrap();
        let sum: f64 = load.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-13);
    }
}
