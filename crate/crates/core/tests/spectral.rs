use nalgebra::{dmatrix, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_r0::banded::BandMatrix;
use spatial_r0::dfe::solve_dfe;
use spatial_r0::expr::parse_expression;
use spatial_r0::grid::Grid;
use spatial_r0::models::{make_zika, random_builtin, BuiltinKind, ZikaParams};
use spatial_r0::r0::{assemble_banded, BlockOperator};
use spatial_r0::spectral::{
    dense_spectral_bound, is_irreducible, solve_block_system, spectral_bound_cooperative,
    spectral_bound_is_negative, spectral_radius_nonneg, BoundOptions, PowerOptions, SpectralError,
};

fn tridiagonal_to_band(grid: &Grid, d: f64) -> BandMatrix {
    let blocks = vec![DMatrix::zeros(1, 1); grid.len()];
    assemble_banded(grid, &[d], &blocks)
}

#[test]
fn zika_local_next_generation_matrix() {
    let z = make_zika(
        ZikaParams {
            h_u: parse_expression("2", &["x"]).unwrap(),
            ..ZikaParams::default()
        },
        (0.0, 1.0),
    )
    .unwrap();
    let j = z.model.jacobians_at(0.3, &[0.0, 0.0, 1.0]).unwrap();
    let k = j.v.clone().try_inverse().unwrap() * &j.f;
    assert!((k - dmatrix![2.0, 0.0; 1.0, 0.0]).abs().max() < 1e-15);
    let k = dmatrix![2.0, 0.0; 1.0, 0.0];
    let r = spectral_radius_nonneg(&k, &PowerOptions::default()).unwrap();
    assert!((r.value - 2.0).abs() < 1e-10);
    assert!(r.vector.iter().all(|v| *v >= 0.0));
    assert_eq!(r.vector.iter().cloned().fold(0.0, f64::max), 1.0);
}

#[test]
fn radius_matches_dense_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for n in [1usize, 2, 5, 17, 40, 64] {
        for _ in 0..3 {
            let a = DMatrix::from_fn(n, n, |_, _| {
                if rng.random_bool(0.7) {
                    rng.random_range(0.0..1.0)
                } else {
                    0.0
                }
            }) + DMatrix::<f64>::identity(n, n) * 1e-3;
            let exact = a
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            let r = spectral_radius_nonneg(&a, &PowerOptions::with_tol(1e-13)).unwrap();
            assert!(
                (r.value - exact).abs() <= 1e-8 * exact,
                "n = {n}: {} vs {exact}",
                r.value
            );
        }
    }
}

#[test]
fn non_convergence_reports_estimate() {
    let a = dmatrix![1.0, 1.0; 0.0, 1.0];
    let opts = PowerOptions {
        tol: 1e-15,
        max_iter: 5,
        ..PowerOptions::default()
    };
    match spectral_radius_nonneg(&a, &opts) {
        Err(SpectralError::NotConverged { estimate, iterations, .. }) => {
            assert!(estimate > 0.5);
            assert_eq!(iterations, 5);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bound_examples() {
    let a = BandMatrix::from_dense(&dmatrix![-2.0, 1.0; 1.0, -2.0]);
    let s = spectral_bound_cooperative(&a, &BoundOptions::default()).unwrap();
    assert!((s.value + 1.0).abs() < 1e-10);

    for (n, d) in [(9, 0.1), (33, 1.0), (65, 20.0)] {
        let g = Grid::unit(n).unwrap();
        let lap = tridiagonal_to_band(&g, d);
        let s = spectral_bound_cooperative(&lap, &BoundOptions::default()).unwrap();
        assert!(s.value.abs() < 1e-9, "{}", s.value);
        assert!(s.vector.iter().all(|v| (v - 1.0).abs() < 1e-6));

        let blocks = vec![dmatrix![-1.0]; n];
        let shifted = assemble_banded(&g, &[d], &blocks);
        let s = spectral_bound_cooperative(&shifted, &BoundOptions::default()).unwrap();
        assert!((s.value + 1.0).abs() < 1e-9, "{}", s.value);
    }
}

#[test]
fn bound_refuses_non_cooperative() {
    let a = BandMatrix::from_dense(&dmatrix![-2.0, -1.0; 1.0, -2.0]);
    assert!(matches!(
        spectral_bound_cooperative(&a, &BoundOptions::default()),
        Err(SpectralError::NotCooperative { row: 0, col: 1, .. })
    ));
}

#[test]
fn bound_is_shift_invariant() {
    let grid = Grid::unit(65).unwrap();
    let tol = 1e-10;
    for kind in BuiltinKind::ALL {
        let b = random_builtin(kind, 5, 3).unwrap();
        let dfe = solve_dfe(&b.model, &grid).unwrap();
        let op = BlockOperator::assemble(&b.model, &grid, &dfe).unwrap();
        let a = op.b_plus_f();
        let sigma = 1.0 + a.max_row_sum();
        let at = |shift: f64| {
            spectral_bound_cooperative(
                &a,
                &BoundOptions {
                    power: PowerOptions::with_tol(tol),
                    shift: Some(shift),
                },
            )
            .unwrap()
            .value
        };
        let (s1, s2) = (at(sigma), at(sigma + 5.0));
        assert!((s1 - s2).abs() <= 2.0 * tol, "{}: {s1} vs {s2}", b.model.name());
    }
}

#[test]
fn bound_agrees_with_dense_spectrum() {
    let grid = Grid::unit(17).unwrap();
    for kind in BuiltinKind::ALL {
        let b = random_builtin(kind, 2, 2).unwrap();
        let dfe = solve_dfe(&b.model, &grid).unwrap();
        let op = BlockOperator::assemble(&b.model, &grid, &dfe).unwrap();
        let a = op.b_plus_f();
        let s = spectral_bound_cooperative(
            &a,
            &BoundOptions {
                power: PowerOptions::with_tol(1e-12),
                shift: None,
            },
        )
        .unwrap();
        let dense = dense_spectral_bound(&a.to_dense());
        assert!((s.value - dense).abs() < 1e-8, "{}: {} vs {dense}", b.model.name(), s.value);
        assert_eq!(spectral_bound_is_negative(&a).unwrap(), dense < 0.0);
        assert!(spectral_bound_is_negative(op.b_matrix()).unwrap());
    }
}

#[test]
fn irreducibility_examples() {
    assert!(is_irreducible(&[vec![false, true], vec![true, false]]));
    assert!(!is_irreducible(&[vec![false, false], vec![true, false]]));
    // staged m = 3: F fills the first row, progression links stage k to k+1
    let t = true;
    let f = false;
    assert!(is_irreducible(&[vec![t, t, t], vec![t, t, f], vec![f, t, t]]));
    assert!(is_irreducible(&[vec![true]]));
}

#[test]
fn block_solve_of_shifted_laplacian() {
    let g = Grid::unit(33).unwrap();
    let op = BlockOperator::from_blocks(&g, &[1.0], &vec![dmatrix![1.0]; 33], vec![dmatrix![0.0]; 33])
        .unwrap();
    let z = solve_block_system(&op, &[1.0; 33]).unwrap();
    assert!(z.iter().all(|v| (v + 1.0).abs() < 1e-12));
}

#[test]
fn block_solve_residual_on_random_rhs() {
    let grid = Grid::unit(64).unwrap();
    let b = random_builtin(BuiltinKind::Zika, 9, 3).unwrap();
    let model = b.model.with_diffusion(&[0.3, 2.0, 1.0]).unwrap();
    let dfe = solve_dfe(&model, &grid).unwrap();
    let op = BlockOperator::assemble(&model, &grid, &dfe).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rhs: Vec<f64> = (0..op.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let z = solve_block_system(&op, &rhs).unwrap();
    let bz = op.b_matrix().apply(&z);
    let err = bz.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let norm = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(err / norm <= 1e-10, "{}", err / norm);
}

#[test]
fn resolvent_is_positive_for_builtins() {
    let grid = Grid::unit(65).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for kind in BuiltinKind::ALL {
        for d in [1e-3, 1.0, 1e2] {
            let b = random_builtin(kind, 1, 3).unwrap();
            let model = b.model.with_diffusion(&vec![d; b.model.n()]).unwrap();
            let dfe = solve_dfe(&model, &grid).unwrap();
            let op = BlockOperator::assemble(&model, &grid, &dfe).unwrap();
            let rhs: Vec<f64> = (0..op.dim())
                .map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..1.0) } else { 0.0 })
                .collect();
            let z = solve_block_system(&op, &rhs).unwrap();
            assert!(z.iter().all(|v| -v >= -1e-12), "{} at d = {d}", model.name());
        }
    }
}
