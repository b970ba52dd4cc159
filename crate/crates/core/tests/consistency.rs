use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stwave::analysis::norm_h1;
use stwave::fespace::{interpolate_nodal, DiscreteField, FESpace};
use stwave::forms::assemble_wave_form;
use stwave::mesh::{Interval, SpacetimeMesh, SplitPattern};
use stwave::problems::{example1, make_observation, ExactSolution};
use stwave::saddle::{build_system, check_galerkin_orthogonality, solve, SaddleParams};

fn random_field(space: &Arc<FESpace>, rng: &mut ChaCha8Rng) -> DiscreteField {
    let c = (0..space.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DiscreteField::new(space.clone(), c).unwrap()
}

/// `max |a_h(Pi_3 u, w)| / ||w||_H1` over random `w` of degree `q`.
fn consistency_residual(nx: usize, nt: usize, q: usize) -> f64 {
    let mesh =
        Arc::new(SpacetimeMesh::build_structured(nx, nt, 2.0, Interval::full(), SplitPattern::Crisscross).unwrap());
    let fine = FESpace::new(mesh.clone(), 3).unwrap();
    let test = FESpace::new(mesh, q).unwrap();
    let e = example1();
    let u = interpolate_nodal(&fine, |t, x| e.value(t, x));
    let bu = assemble_wave_form(&fine, &test).unwrap().matrix.matvec(&u.coeffs);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..10)
        .map(|_| {
            let w = random_field(&test, &mut rng);
            let v: f64 = w.coeffs.iter().zip(&bu).map(|(a, b)| a * b).sum();
            v.abs() / norm_h1(&w)
        })
        .fold(0.0, f64::max)
}

#[test]
fn wave_form_consistency_on_grids_not_aligned_with_characteristics() {
    // dt != dx, so the mesh diagonals do not follow the characteristics
    let coarse = consistency_residual(16, 24, 1);
    let fine = consistency_residual(32, 48, 1);
    assert!(fine <= 1e-4, "{fine}");
    assert!(fine < coarse / 8.0, "{coarse} -> {fine}");
    assert!(consistency_residual(32, 50, 2) <= 1e-4);
}

#[test]
fn galerkin_orthogonality_at_h_one_sixteenth() {
    let omega = Interval::new(0.125, 0.375).unwrap();
    let mesh = Arc::new(SpacetimeMesh::build_structured(16, 32, 2.0, omega, SplitPattern::Crisscross).unwrap());
    assert!((mesh.h - 1.0 / 16.0).abs() < 1e-14);
    let (vp, vq, p3) = (
        FESpace::new(mesh.clone(), 2).unwrap(),
        FESpace::new(mesh.clone(), 1).unwrap(),
        FESpace::new(mesh, 3).unwrap(),
    );
    let e = example1();
    let data = make_observation(Arc::new(e), omega, 2.0);
    let system = build_system(&vp, &vq, &data, SaddleParams::default()).unwrap();
    let (u, z, _) = solve(&system).unwrap();
    let exact = interpolate_nodal(&p3, |t, x| e.value(t, x));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tests: Vec<_> = (0..10).map(|_| (random_field(&vp, &mut rng), random_field(&vq, &mut rng))).collect();
    let worst = check_galerkin_orthogonality(&system, &exact, &u, &z, &tests).unwrap();
    assert!(worst <= 1e-4, "{worst}");
}
