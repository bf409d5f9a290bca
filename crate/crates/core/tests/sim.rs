use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_r0::dfe::solve_dfe;
use spatial_r0::expr::parse_expression;
use spatial_r0::grid::Grid;
use spatial_r0::model::CompartmentModel;
use spatial_r0::models::{make_sis, SisParams};
use spatial_r0::r0::{assemble_banded, compute_r0};
use spatial_r0::sim::{comparison_test, dfe_stability_test, evolve_linear, SimError, StabilityMode};

fn sis(beta: &str, d: f64) -> CompartmentModel {
    make_sis(
        SisParams {
            beta: parse_expression(beta, &["x"]).unwrap(),
            ..SisParams::default()
        },
        (0.0, 1.0),
    )
    .unwrap()
    .model
    .with_diffusion(&[d, d])
    .unwrap()
}

fn scalar_blocks(n: usize, v: f64) -> Vec<DMatrix<f64>> {
    vec![DMatrix::from_element(1, 1, v); n]
}

#[test]
fn heat_flow_keeps_constants_and_mass() {
    let g = Grid::unit(65).unwrap();
    let a = assemble_banded(&g, &[0.7], &scalar_blocks(65, 0.0));
    let t = evolve_linear(&a, &[1.0; 65], 1.0, 0.01, 10).unwrap();
    assert!(t.last().iter().all(|v| (v - 1.0).abs() < 1e-12));
    assert!(t.times.windows(2).all(|w| w[1] > w[0]));

    let phi0 = g.field_from_fn(|x| (x - 0.3).max(0.0).powi(2)).into_inner();
    let t = evolve_linear(&a, &phi0, 2.0, 0.01, 5).unwrap();
    let mass0 = g.integrate(&phi0);
    for s in &t.states {
        assert!((g.integrate(s) - mass0).abs() < 1e-12);
    }
    assert!(t.min_entry() >= -1e-12);
}

#[test]
fn scalar_decay() {
    let g = Grid::unit(9).unwrap();
    let a = assemble_banded(&g, &[1.0], &scalar_blocks(9, -1.0));
    let dt = 1e-3;
    let t = evolve_linear(&a, &[1.0; 9], 1.0, dt, 100).unwrap();
    let exact = (-1.0f64).exp();
    assert!(t.last().iter().all(|v| (v - exact).abs() < dt));
    assert_eq!(t.steps, 1000);
    assert_eq!(*t.times.last().unwrap(), 1.0);
}

#[test]
fn rejects_negative_initial_data() {
    let g = Grid::unit(5).unwrap();
    let a = assemble_banded(&g, &[1.0], &scalar_blocks(5, 0.0));
    assert!(matches!(
        evolve_linear(&a, &[1.0, -1.0, 0.0, 0.0, 0.0], 1.0, 0.1, 1),
        Err(SimError::NegativeInitial { index: 1, .. })
    ));
}

#[test]
fn heat_dominates_damped_heat() {
    let g = Grid::unit(33).unwrap();
    let phi0 = g.field_from_fn(|x| 1.0 + x).into_inner();
    let rep = comparison_test(&scalar_blocks(33, 0.0), &scalar_blocks(33, -1.0), &g, &[1.0], &phi0, 1.0, 0.01)
        .unwrap();
    assert!(rep.passed && rep.min_slack >= 0.0);
    assert_eq!(rep.times, 101);
}

#[test]
fn identical_generators_give_identical_trajectories() {
    let g = Grid::unit(33).unwrap();
    let p: Vec<DMatrix<f64>> = g
        .nodes()
        .map(|x| nalgebra::dmatrix![-1.0 - x, 0.5; x, -2.0])
        .collect();
    let phi0 = vec![1.0; 66];
    let rep = comparison_test(&p, &p, &g, &[0.1, 1.0], &phi0, 1.0, 0.01).unwrap();
    assert!(rep.passed);
    assert_eq!(rep.min_slack, 0.0);
}

#[test]
fn randomized_ordering_holds() {
    let g = Grid::unit(33).unwrap();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 2 + (seed as usize % 2);
        let p2: Vec<DMatrix<f64>> = (0..33)
            .map(|_| {
                DMatrix::from_fn(m, m, |i, j| {
                    if i == j {
                        rng.random_range(-2.0..0.5)
                    } else {
                        rng.random_range(0.0..1.0)
                    }
                })
            })
            .collect();
        let p1: Vec<DMatrix<f64>> = p2
            .iter()
            .map(|b| b + DMatrix::from_fn(m, m, |_, _| rng.random_range(0.0..0.3)))
            .collect();
        let d: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        let phi0: Vec<f64> = (0..33 * m).map(|_| rng.random_range(0.0..1.0)).collect();
        let rep = comparison_test(&p1, &p2, &g, &d, &phi0, 2.0, 0.01).unwrap();
        assert!(rep.passed, "seed {seed}: {:?}", rep.first_violation);
        assert!(rep.min_slack >= -1e-12);
    }
}

#[test]
fn comparison_preconditions() {
    let g = Grid::unit(5).unwrap();
    let ok = scalar_blocks(5, 0.0);
    let lower = scalar_blocks(5, 1.0);
    assert!(matches!(
        comparison_test(&ok, &lower, &g, &[1.0], &[1.0; 5], 1.0, 0.1),
        Err(SimError::NotOrdered { node: 0, .. })
    ));
    let bad = vec![nalgebra::dmatrix![0.0, -1.0; 0.0, 0.0]; 5];
    assert!(matches!(
        comparison_test(&bad, &bad, &g, &[1.0, 1.0], &[1.0; 10], 1.0, 0.1),
        Err(SimError::NotCooperative { which: "P1", row: 0, col: 1, .. })
    ));
}

#[test]
fn subcritical_sis_perturbation_decays() {
    let g = Grid::unit(65).unwrap();
    let model = sis("0.5", 0.1);
    let dfe = solve_dfe(&model, &g).unwrap();
    assert!((compute_r0(&model, &g, &dfe, 1e-12).unwrap().value - 0.5).abs() < 1e-10);
    let rep = dfe_stability_test(&model, &g, &dfe, 1e-3, 20.0, 0.02, StabilityMode::Decay).unwrap();
    assert!(rep.passed && rep.monotone_last_half);
    assert!(rep.final_distance < rep.initial_distance);
    assert!(rep.decay_ratio() < 1e-3, "{}", rep.decay_ratio());
}

#[test]
fn supercritical_sis_infection_grows() {
    let g = Grid::unit(65).unwrap();
    let model = sis("2", 0.1);
    let dfe = solve_dfe(&model, &g).unwrap();
    let rep = dfe_stability_test(&model, &g, &dfe, 1e-3, 5.0, 0.01, StabilityMode::Growth).unwrap();
    assert!(rep.passed);
    assert!(rep.infected.last().unwrap() > &rep.infected[0]);
}

#[test]
fn zero_perturbation_stays_put() {
    let g = Grid::unit(33).unwrap();
    let model = sis("2 + cos(pi*x)", 1.0);
    let dfe = solve_dfe(&model, &g).unwrap();
    let rep = dfe_stability_test(&model, &g, &dfe, 0.0, 2.0, 0.02, StabilityMode::Decay).unwrap();
    assert!(rep.distance.iter().all(|d| *d <= 1e-10));
    assert_eq!(rep.decay_ratio(), 0.0);
}
