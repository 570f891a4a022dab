mod common;

use std::collections::HashMap;
use std::f64::consts::PI;

use kgp_core::error::{EvalError, ExprError, ParseErrorKind};
use kgp_core::symexpr::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Closed forms written out by hand, independent of the parser.
fn reference(name: &str, v: &HashMap<&str, f64>) -> f64 {
    let x = v.get("x").copied().unwrap_or(f64::NAN);
    match name {
        "sigmoid_2d" => 1.0 / (1.0 + (-x).exp()),
        "bohachevsky_3d" => {
            let (a, b) = (v["x1"], v["x2"]);
            a * a + 2.0 * b * b - 0.3 * (3.0 * PI * a).cos() - 0.4 * (4.0 * PI * b).cos() + 0.7
        }
        "frac_power" => 3.0 * x.powf(5.0 / 3.0) - 15.0 * x.powf(2.0 / 3.0),
        "cubic" => x * x * x - 3.0 * x * x + 1.0,
        "cubic_rising" => 2.0 * x * x * x - 15.0 * x * x + 36.0 * x,
        "x_plus_2sin" => x + 2.0 * x.sin(),
        "quartic" => 3.0 * x.powi(4) + 4.0 * x.powi(3) - 12.0 * x * x + 2.0,
        other => panic!("no reference for {other}"),
    }
}

#[test]
fn registry_matches_hand_coded_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for f in BUILTINS {
        let e = f.expr();
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let v: HashMap<&str, f64> = f.domain.iter().map(|(n, lo, hi)| (*n, rng.random_range(*lo..=*hi))).collect();
            let got = e.eval(&v).unwrap();
            let want = reference(f.name, &v);
            // Relative error, with an absolute floor for values near zero
            // where cancellation dominates.
            let err = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(err);
        }
        assert!(worst <= 1e-12, "{}: worst relative error {worst:e}", f.name);
    }
}

#[test]
fn benchmark_strings_and_spot_values() {
    let at = |src: &str, x: f64| parse_expr(src).unwrap().eval(&[("x", x)]).unwrap();
    assert_eq!(at("x^3-3x^2+1", 0.0), 1.0);
    assert!((at("3x^(5/3)-15x^(2/3)", 8.0) - 36.0).abs() < 1e-12);
    assert_eq!(at("3x^4+4x^3-12x^2+2", 1.0), -3.0);
    assert_eq!(at("x+2sin(x)", 0.0), 0.0);
    assert_eq!(at("2x^3-15x^2+36x", 2.0), 28.0);
    assert_eq!(at("1/(1+exp(-x))", 0.0), 0.5);
    // Spaced out.
    assert_eq!(at("3x^4 + 4x^3 - 12x^2 + 2", 1.0), -3.0);
    let b = builtin("bohachevsky_3d").unwrap();
    assert!(b.eval(&[("x1", 0.0), ("x2", 0.0)]).unwrap().abs() < 1e-15);
    assert_eq!(b.variables().into_iter().collect::<Vec<_>>(), vec!["x1".to_string(), "x2".to_string()]);
    let s = builtin_function("sigmoid_2d").unwrap();
    assert_eq!(s.target, "y");
    assert_eq!(s.expr().variables().into_iter().collect::<Vec<_>>(), vec!["x".to_string()]);
    assert!(matches!(builtin("unknown"), Err(ExprError::UnknownBuiltin(_))));
}

#[test]
fn precedence_rules() {
    let v = |src: &str| parse_expr(src).unwrap().eval(&[("x", 2.0)]).unwrap();
    assert_eq!(v("-x^2"), -4.0);
    assert_eq!(v("2^3^2"), 512.0);
    assert_eq!(v("(2^3)^2"), 64.0);
    assert_eq!(v("1-x-1"), -2.0);
    assert_eq!(v("8/x/2"), 2.0);
    assert_eq!(v("2(x+1)"), 6.0);
    assert_eq!(v("2^-1"), 0.5);
    assert!(parse_expr("xy").unwrap().variables().contains("xy"));
}

#[test]
fn errors_are_reported_not_panics() {
    for (src, kind) in [
        ("(x+1", ParseErrorKind::UnbalancedParen),
        ("x+1)", ParseErrorKind::UnbalancedParen),
        ("foo(x)", ParseErrorKind::UnknownFunction("foo".into())),
    ] {
        let e = parse_expr(src).unwrap_err();
        assert_eq!(e.kind, kind, "{src}");
    }
    assert!(parse_expr("x+").is_err());
    assert!(parse_expr("*x").is_err());
    let x = parse_expr("x").unwrap();
    assert!(matches!(x.eval(&[("y", 1.0)]), Err(EvalError::Unbound(_))));
    assert!(matches!(parse_expr("1/x").unwrap().eval(&[("x", 0.0)]), Err(EvalError::DivisionByZero)));
    assert!(matches!(
        parse_expr("x^(1/3)").unwrap().eval(&[("x", -8.0)]),
        Err(EvalError::NegativeFractionalPower { .. })
    ));
    assert!(matches!(parse_expr("exp(x)").unwrap().eval(&[("x", 1000.0)]), Err(EvalError::NonFinite)));
}

#[test]
fn mutated_corpus_never_panics() {
    let corpus: Vec<&str> = BUILTINS.iter().map(|b| b.source).collect();
    let alphabet: Vec<char> = "x1234567890+-*/^()., episncoxabl".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rejected = 0;
    for _ in 0..5000 {
        let mut s: Vec<char> = corpus[rng.random_range(0..corpus.len())].chars().collect();
        for _ in 0..rng.random_range(1..4) {
            let i = rng.random_range(0..=s.len());
            match rng.random_range(0..3) {
                0 if i < s.len() => {
                    s.remove(i);
                }
                1 => s.insert(i, alphabet[rng.random_range(0..alphabet.len())]),
                _ if i < s.len() => s[i] = alphabet[rng.random_range(0..alphabet.len())],
                _ => {}
            }
        }
        let text: String = s.into_iter().collect();
        match parse_expr(&text) {
            Ok(e) => {
                let _ = e.eval(&[("x", 0.5), ("x1", 0.5), ("x2", -0.5)]);
            }
            Err(e) => {
                assert!(e.offset <= text.len(), "{text:?}: offset {}", e.offset);
                rejected += 1;
            }
        }
    }
    assert!(rejected > 500, "mutations should mostly break expressions ({rejected})");
}

fn expr_strategy() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (0u32..1000).prop_map(|n| n.to_string()),
        (0u32..100, 1u32..100).prop_map(|(a, b)| format!("{a}.{b}")),
        Just("x".to_string()),
        Just("x1".to_string()),
        Just("pi".to_string()),
    ];
    leaf.prop_recursive(5, 40, 3, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(vec!["+", "-", "*", "/", "^"]), inner.clone())
                .prop_map(|(a, op, b)| format!("{a}{op}{b}")),
            inner.clone().prop_map(|a| format!("({a})")),
            inner.clone().prop_map(|a| format!("-{a}")),
            (prop::sample::select(vec!["sin", "cos", "exp", "abs"]), inner).prop_map(|(f, a)| format!("{f}({a})")),
        ]
    })
}

proptest! {
    #[test]
    fn parse_print_parse_is_idempotent(src in expr_strategy()) {
        let e = parse_expr(&src).unwrap();
        let printed = e.to_string();
        let again = parse_expr(&printed).unwrap();
        prop_assert_eq!(&again, &e);
        prop_assert_eq!(again.to_string(), printed);
    }

    #[test]
    fn arbitrary_text_never_panics(src in "\\PC{0,40}") {
        let _ = parse_expr(&src);
    }
}
