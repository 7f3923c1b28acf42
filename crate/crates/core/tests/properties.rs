use std::collections::HashMap;

use hiv_ident::expr::{
    differentiate, equivalent, evaluate, normalize, substitute, ExactRational, Expr, Float64, PrimeField, Symbol,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

fn syms() -> [Symbol; 3] {
    [Symbol::auxiliary("pa"), Symbol::auxiliary("pb"), Symbol::auxiliary("pc")]
}

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (-5i64..=5).prop_map(Expr::int),
        (0..3usize).prop_map(|i| Expr::symbol(&syms()[i])),
    ]
}

/// Random rational expressions. Every quotient has a denominator of the
/// form `2 + b^2`, so evaluation at real or rational points never divides
/// by zero.
fn arb_expr(depth: u32) -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(depth, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a / (Expr::int(2) + &b * &b)),
            (inner, 0i32..4).prop_map(|(a, n)| Expr::pow(a, n).unwrap()),
        ]
    })
}

fn float_point() -> impl Strategy<Value = [f64; 3]> {
    [0.5f64..2.0, 0.5f64..2.0, 0.5f64..2.0]
}

fn rational_point() -> impl Strategy<Value = [(i64, i64); 3]> {
    [(-20i64..20, 1i64..9), (-20i64..20, 1i64..9), (-20i64..20, 1i64..9)]
}

fn float_map(p: [f64; 3]) -> HashMap<Symbol, f64> {
    syms().into_iter().zip(p).collect()
}

fn rational_map(p: [(i64, i64); 3]) -> HashMap<Symbol, BigRational> {
    syms()
        .into_iter()
        .zip(p)
        .map(|(s, (n, d))| (s, BigRational::new(BigInt::from(n), BigInt::from(d))))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn differentiation_is_linear(f in arb_expr(3), g in arb_expr(3), a in -4i64..5, b in -4i64..5, which in 0..3usize) {
        let x = &syms()[which];
        let lhs = differentiate(&(Expr::int(a) * &f + Expr::int(b) * &g), x);
        let rhs = Expr::int(a) * differentiate(&f, x) + Expr::int(b) * differentiate(&g, x);
        prop_assert!(equivalent(&lhs, &rhs).unwrap());
    }

    #[test]
    fn product_rule(f in arb_expr(3), g in arb_expr(3), which in 0..3usize) {
        let x = &syms()[which];
        let lhs = differentiate(&(&f * &g), x);
        let rhs = differentiate(&f, x) * &g + &f * differentiate(&g, x);
        prop_assert!(equivalent(&lhs, &rhs).unwrap());
    }

    #[test]
    fn substitution_commutes_with_evaluation(f in arb_expr(3), g in arb_expr(2), which in 0..3usize, pt in rational_point()) {
        let x = syms()[which].clone();
        let point = rational_map(pt);
        let g_val = evaluate(&g, &point, &ExactRational).unwrap();
        let substituted = substitute(&f, &HashMap::from([(x.clone(), g.clone())]));
        let mut shifted = point.clone();
        shifted.insert(x, g_val);
        prop_assert_eq!(
            evaluate(&substituted, &point, &ExactRational).unwrap(),
            evaluate(&f, &shifted, &ExactRational).unwrap()
        );
    }

    #[test]
    fn canonical_form_is_congruent(f in arb_expr(3), pt in rational_point()) {
        let canon = normalize(&f).unwrap();
        let back = canon.numerator.to_expr() / canon.denominator.to_expr();
        prop_assert!(equivalent(&f, &back).unwrap());
        let point = rational_map(pt);
        prop_assert_eq!(
            evaluate(&f, &point, &ExactRational).unwrap(),
            evaluate(&back, &point, &ExactRational).unwrap()
        );
        // the same identity survives reduction modulo a large prime
        let field = PrimeField::new(4_611_686_018_427_387_847).unwrap();
        let fp: HashMap<Symbol, u64> = point
            .iter()
            .map(|(s, v)| {
                let num = field.reduce_bigint(v.numer());
                let den = field.inv(field.reduce_bigint(v.denom())).unwrap();
                (s.clone(), field.mul_mod(num, den))
            })
            .collect();
        prop_assert_eq!(evaluate(&f, &fp, &field).unwrap(), evaluate(&back, &fp, &field).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn derivative_matches_central_differences(f in arb_expr(4), which in 0..3usize, pt in float_point()) {
        let x = syms()[which].clone();
        let df = differentiate(&f, &x);
        let mut point = float_map(pt);
        let exact = evaluate(&df, &point, &Float64).unwrap();
        let x0 = point[&x];
        // fourth-order stencil keeps truncation far below the tolerance
        let h = 1e-3;
        let mut at = |dx: f64| {
            point.insert(x.clone(), x0 + dx);
            evaluate(&f, &point, &Float64).unwrap()
        };
        let fd = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
        let fx = at(0.0);
        let scale = exact.abs().max(fx.abs()).max(1.0);
        prop_assert!((fd - exact).abs() <= 1e-6 * scale, "fd {} exact {} f {}", fd, exact, f);
    }
}
