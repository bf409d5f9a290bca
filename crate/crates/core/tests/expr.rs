use proptest::prelude::*;
use spatial_r0::expr::{parse_expression, EvalError, Expr, Func, ParseError};
use spatial_r0::models::{random_builtin, BuiltinKind};

#[test]
fn parses_cosine_profile() {
    let e = parse_expression("2 + cos(pi*x)", &["x"]).unwrap();
    let expected = Expr::Add(
        Box::new(Expr::Const(2.0)),
        Box::new(Expr::Func(
            Func::Cos,
            Box::new(Expr::Mul(
                Box::new(Expr::Const(std::f64::consts::PI)),
                Box::new(Expr::X),
            )),
        )),
    );
    assert_eq!(e, expected);
    assert_eq!(e.eval(0.0, &[]).unwrap(), 3.0);
}

#[test]
fn unknown_identifier_is_named() {
    match parse_expression("beta", &["x"]) {
        Err(ParseError::UnknownIdentifier { name, column }) => {
            assert_eq!(name, "beta");
            assert_eq!(column, 1);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn syntax_error_has_position() {
    let err = parse_expression("1 + * x", &["x"]).unwrap_err();
    assert_eq!(err.column(), Some(5));
    assert_eq!(parse_expression("", &["x"]).unwrap_err(), ParseError::Empty);
}

#[test]
fn division_tree_and_projection() {
    let vocab = ["x", "u1", "u2", "u3"];
    let e = parse_expression("u1*u3/(u1+u2+u3)", &vocab).unwrap();
    assert!(matches!(e, Expr::Div(..)));
    assert!((e.eval(0.0, &[1.0, 2.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
    let p = parse_expression("u3", &vocab).unwrap();
    assert_eq!(p.eval(0.0, &[0.0, 0.0, 5.0]).unwrap(), 5.0);
}

#[test]
fn domain_violations_are_errors() {
    let vocab = ["x", "u1"];
    let e = parse_expression("1/u1", &vocab).unwrap();
    assert_eq!(e.eval(0.0, &[0.0]), Err(EvalError::DivisionByZero));
    let l = parse_expression("log(u1)", &vocab).unwrap();
    assert!(matches!(l.eval(0.0, &[-1.0]), Err(EvalError::LogDomain(_))));
    let s = parse_expression("sqrt(u1)", &vocab).unwrap();
    assert!(matches!(s.eval(0.0, &[-1.0]), Err(EvalError::SqrtDomain(_))));
    let p = parse_expression("u1^(-1)", &vocab).unwrap();
    assert!(p.eval(0.0, &[0.0]).is_err());
}

#[test]
fn product_rule_and_constant_in_state() {
    let vocab = ["x", "b", "u1", "u2", "u3"];
    // `b` is a state here so the derivative keeps it symbolic
    let e = parse_expression("b*u1*u3", &vocab).unwrap();
    let d = e.d_state(1);
    let expected = parse_expression("b*u3", &vocab).unwrap();
    for u in [[1.0, 2.0, 3.0, 4.0], [0.5, -1.0, 2.0, 7.0]] {
        assert_eq!(d.eval(0.3, &u).unwrap(), expected.eval(0.3, &u).unwrap());
    }
    let c = parse_expression("cos(pi*x)", &vocab).unwrap();
    assert!(c.d_state(2).is_zero());
}

fn central_difference(e: &Expr, x: f64, u: &[f64], i: usize) -> f64 {
    let h = 1e-6 * (1.0 + u[i].abs());
    let mut up = u.to_vec();
    let mut dn = u.to_vec();
    up[i] += h;
    dn[i] -= h;
    (e.eval(x, &up).unwrap() - e.eval(x, &dn).unwrap()) / (2.0 * h)
}

#[test]
fn staged_incidence_derivative_matches_finite_differences() {
    let vocab = ["x", "I1", "I2", "I3", "S"];
    let e = parse_expression(
        "(S + I1 + I2 + I3)^(-0.5) * S * ((1 + 0.5*cos(pi*x))*I1 + 0.8*I2 + 0.6*I3)",
        &vocab,
    )
    .unwrap();
    let mut seed = 7u64;
    let mut next = || {
        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        0.1 + (seed >> 11) as f64 / (1u64 << 53) as f64 * 2.0
    };
    for _ in 0..20 {
        let u = [next(), next(), next(), next()];
        let x = next() / 2.1;
        for i in 0..4 {
            let exact = e.d_state(i).eval(x, &u).unwrap();
            let fd = central_difference(&e, x, &u, i);
            assert!((exact - fd).abs() <= 1e-6 * exact.abs().max(1.0), "{i}: {exact} vs {fd}");
        }
    }
}

#[test]
fn builtin_expressions_differentiate_correctly() {
    for kind in BuiltinKind::ALL {
        let b = random_builtin(kind, 3, 3).unwrap();
        let n = b.model.n();
        for (k, c) in b.model.compartments().iter().enumerate() {
            for e in [&c.f, &c.vplus, &c.vminus] {
                for j in 0..n {
                    for p in 0..5 {
                        let x = 0.1 + 0.2 * p as f64;
                        let u: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * ((i + p + k) % 5) as f64).collect();
                        let exact = e.d_state(j).eval(x, &u).unwrap();
                        let fd = central_difference(e, x, &u, j);
                        assert!(
                            (exact - fd).abs() <= 1e-6 * exact.abs().max(1.0),
                            "{} compartment {k} state {j}: {exact} vs {fd}",
                            b.model.name()
                        );
                    }
                }
            }
        }
    }
}

fn leaf() -> impl Strategy<Value = String> {
    prop_oneof![
        (0.1f64..5.0).prop_map(|v| format!("{v}")),
        Just("x".to_string()),
        Just("u1".to_string()),
        Just("u2".to_string()),
        Just("pi".to_string()),
    ]
}

fn expression() -> impl Strategy<Value = String> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} * {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} / (1 + ({b})^2)")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("exp(0 - ({a})^2)")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.prop_map(|a| format!("-{a}")),
        ]
    })
}

proptest! {
    #[test]
    fn print_parse_round_trip(text in expression(), x in 0.0f64..1.0, u1 in 0.1f64..3.0, u2 in 0.1f64..3.0) {
        let vocab = ["x", "u1", "u2"];
        let e = parse_expression(&text, &vocab).unwrap();
        let printed = e.to_string();
        let again = parse_expression(&printed, &vocab).unwrap();
        let (a, b) = (e.eval(x, &[u1, u2]), again.eval(x, &[u1, u2]));
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{printed}: {a} vs {b}"),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn derivative_matches_central_difference(text in expression(), x in 0.0f64..1.0, u1 in 0.2f64..2.0, u2 in 0.2f64..2.0) {
        let vocab = ["x", "u1", "u2"];
        let e = parse_expression(&text, &vocab).unwrap();
        let u = [u1, u2];
        for i in 0..2 {
            let Ok(exact) = e.d_state(i).eval(x, &u) else { continue };
            let h = 1e-5;
            let mut up = u;
            let mut dn = u;
            up[i] += h;
            dn[i] -= h;
            let (Ok(fu), Ok(fd)) = (e.eval(x, &up), e.eval(x, &dn)) else { continue };
            let fd = (fu - fd) / (2.0 * h);
            // second-derivative size bounds the truncation error
            let scale = 1.0 + exact.abs() + fu.abs();
            prop_assert!((exact - fd).abs() <= 1e-5 * scale, "{text}: {exact} vs {fd}");
        }
    }
}
