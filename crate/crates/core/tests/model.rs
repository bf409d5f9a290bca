use nalgebra::{dmatrix, DMatrix};
use spatial_r0::dfe::{solve_dfe, DfeState};
use spatial_r0::expr::{parse_expression, Expr};
use spatial_r0::grid::{Field, Grid};
use spatial_r0::model::{check_assumptions, CheckStatus, Compartment, CompartmentModel, ModelError};
use spatial_r0::models::{
    make_sis, make_staged, make_vector_host, make_zika, random_builtin, BuiltinKind, SisParams,
    StagedParams, VectorHostParams, ZikaParams,
};

fn e(s: &str) -> Expr {
    parse_expression(s, &["x"]).unwrap()
}

fn assert_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) {
    assert_eq!(a.shape(), b.shape());
    assert!((a - b).abs().max() < 1e-14, "{a} vs {b}");
}

#[test]
fn zika_blocks_at_disease_free_state() {
    let p = ZikaParams {
        lambda: e("1 + x"),
        sigma1: e("2"),
        h_u: e("3 - x"),
        sigma2: e("0.5 + x"),
        mu: e("1.5"),
        beta: e("1"),
    };
    let z = make_zika(p, (0.0, 1.0)).unwrap();
    let x = 0.25;
    let u3 = 0.8;
    let j = z.model.jacobians_at(x, &[0.0, 0.0, u3]).unwrap();
    assert_matrix(&j.v, &dmatrix![1.0 + x, -2.0 * (3.0 - x); 0.0, 1.5 * u3]);
    assert_matrix(&j.f, &dmatrix![0.0, 0.0; (0.5 + x) * u3, 0.0]);
}

#[test]
fn vector_host_blocks_at_disease_free_state() {
    let p = VectorHostParams {
        b: e("2"),
        gamma: e("0.5"),
        c: e("3"),
        beta_s: e("1 + x"),
        beta_m: e("4"),
        ..VectorHostParams::default()
    };
    let v = make_vector_host(p, (0.0, 1.0)).unwrap();
    let (x, s, m) = (0.5, 0.7, 1.1);
    let j = v.model.jacobians_at(x, &[0.0, 0.0, s, m]).unwrap();
    assert_matrix(&j.f, &dmatrix![0.0, (1.0 + x) * s; 4.0 * m, 0.0]);
    assert_matrix(&j.v, &dmatrix![2.5, 0.0; 0.0, 3.0]);
}

#[test]
fn state_independent_model_has_zero_f() {
    let model = CompartmentModel::new(
        "linear",
        (0.0, 1.0),
        vec![
            Compartment::new("I", true, 1.0).vminus(Expr::state(0)),
            Compartment::new("S", false, 1.0)
                .vplus(Expr::Const(1.0))
                .vminus(Expr::state(1)),
        ],
    )
    .unwrap();
    let j = model.jacobians_at(0.3, &[0.0, 1.0]).unwrap();
    assert_eq!(j.f, DMatrix::zeros(1, 1));
    assert_eq!(j.v, dmatrix![1.0]);
    assert_eq!(j.m_block, dmatrix![-1.0]);
}

#[test]
fn jacobians_match_finite_differences() {
    for kind in BuiltinKind::ALL {
        let b = random_builtin(kind, 11, 3).unwrap();
        let model = &b.model;
        let (n, m) = (model.n(), model.m());
        let u: Vec<f64> = (0..n).map(|i| 0.2 + 0.3 * i as f64).collect();
        let x = 0.4;
        let j = model.jacobians_at(x, &u).unwrap();
        let full = model.reaction_jacobian(x, &u).unwrap();
        let h = 1e-6;
        for col in 0..n {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[col] += h;
            dn[col] -= h;
            let fu = model.reaction(x, &up).unwrap();
            let fd = model.reaction(x, &dn).unwrap();
            for row in 0..n {
                let fdv = (fu[row] - fd[row]) / (2.0 * h);
                assert!((full[(row, col)] - fdv).abs() <= 1e-6 * fdv.abs().max(1.0));
            }
            if col < m {
                for row in 0..m {
                    let fi = |v: &[f64]| model.compartments()[row].f.eval(x, v).unwrap();
                    let fdv = (fi(&up) - fi(&dn)) / (2.0 * h);
                    assert!((j.f[(row, col)] - fdv).abs() <= 1e-6 * fdv.abs().max(1.0));
                    // f = F - V
                    let vv = fdv - (fu[row] - fd[row]) / (2.0 * h);
                    assert!((j.v[(row, col)] - vv).abs() <= 1e-6 * vv.abs().max(1.0));
                }
            }
        }
    }
}

#[test]
fn builtins_pass_every_check() {
    let grid = Grid::unit(65).unwrap();
    for kind in BuiltinKind::ALL {
        for seed in 0..3 {
            let b = random_builtin(kind, seed, 3).unwrap();
            let dfe = solve_dfe(&b.model, &grid).unwrap();
            let report = check_assumptions(&b.model, &grid, &dfe, 32);
            assert!(report.passed(), "{}: {:?}", b.model.name(), report.items);
            assert!(!report.blocks_r0());
        }
    }
}

#[test]
fn staged_pattern_is_irreducible() {
    let grid = Grid::unit(33).unwrap();
    let b = make_staged(StagedParams::uniform(3), (0.0, 1.0)).unwrap();
    let dfe = solve_dfe(&b.model, &grid).unwrap();
    let report = check_assumptions(&b.model, &grid, &dfe, 16);
    assert_eq!(report.get("irreducible").unwrap().status, CheckStatus::Pass);
}

#[test]
fn one_way_coupling_is_reducible() {
    // V = I, F = [[0,0],[1,0]]: no path back from the second infected class
    let model = CompartmentModel::new(
        "one-way",
        (0.0, 1.0),
        vec![
            Compartment::new("A", true, 1.0).vminus(Expr::state(0)),
            Compartment::new("B", true, 1.0)
                .f(Expr::state(0))
                .vminus(Expr::state(1)),
            Compartment::new("S", false, 1.0)
                .vplus(Expr::Const(1.0))
                .vminus(Expr::state(2)),
        ],
    )
    .unwrap();
    let grid = Grid::unit(17).unwrap();
    let dfe = DfeState::prescribed(&model, &grid, vec![Field::constant(17, 1.0)]).unwrap();
    let report = check_assumptions(&model, &grid, &dfe, 8);
    assert_eq!(report.get("irreducible").unwrap().status, CheckStatus::Fail);
    assert!(!report.passed());
    assert!(!report.blocks_r0());
}

#[test]
fn sis_bound_is_minus_min_gamma() {
    let grid = Grid::unit(33).unwrap();
    let sis = make_sis(
        SisParams {
            gamma: e("1 + x"),
            ..SisParams::default()
        },
        (0.0, 1.0),
    )
    .unwrap();
    let dfe = solve_dfe(&sis.model, &grid).unwrap();
    let report = check_assumptions(&sis.model, &grid, &dfe, 8);
    assert!(report.passed());
    let item = report.get("V-spectral-bound").unwrap();
    assert!(item.detail.contains("-1e0"), "{}", item.detail);
}

#[test]
fn negative_removal_fails_the_sign_checks() {
    let model = CompartmentModel::new(
        "bad-gamma",
        (0.0, 1.0),
        vec![
            Compartment::new("I", true, 1.0)
                .f(parse_expression("2*S*I", &["x", "I", "S"]).unwrap())
                .vminus(parse_expression("(x - 0.5)*I", &["x", "I", "S"]).unwrap()),
            Compartment::new("S", false, 1.0)
                .vplus(parse_expression("(x - 0.5)*I", &["x", "I", "S"]).unwrap())
                .vminus(parse_expression("2*S*I", &["x", "I", "S"]).unwrap()),
        ],
    )
    .unwrap();
    let grid = Grid::unit(17).unwrap();
    let dfe = DfeState::prescribed(&model, &grid, vec![Field::constant(17, 1.0)]).unwrap();
    let report = check_assumptions(&model, &grid, &dfe, 8);
    assert!(!report.passed());
    assert!(report.blocks_r0());
    let worst = report.get("V-spectral-bound").unwrap().worst.clone().unwrap();
    assert_eq!(worst.node, Some(0));
}

#[test]
fn structural_errors() {
    let infected_after = CompartmentModel::new(
        "order",
        (0.0, 1.0),
        vec![Compartment::new("S", false, 1.0), Compartment::new("I", true, 1.0)],
    );
    assert!(matches!(infected_after, Err(ModelError::InfectedOrder { .. })));
    let no_uninfected = CompartmentModel::new("m", (0.0, 1.0), vec![Compartment::new("I", true, 1.0)]);
    assert!(matches!(no_uninfected, Err(ModelError::InfectedCount { .. })));
    let bad_d = CompartmentModel::new(
        "d",
        (0.0, 1.0),
        vec![Compartment::new("I", true, 0.0), Compartment::new("S", false, 1.0)],
    );
    assert!(matches!(bad_d, Err(ModelError::Diffusion { .. })));
    let incidence_in_s = CompartmentModel::new(
        "a3",
        (0.0, 1.0),
        vec![
            Compartment::new("I", true, 1.0),
            Compartment::new("S", false, 1.0).f(Expr::state(0)),
        ],
    );
    assert!(matches!(incidence_in_s, Err(ModelError::UninfectedIncidence { .. })));
}
