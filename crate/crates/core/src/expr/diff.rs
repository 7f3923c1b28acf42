use std::collections::HashMap;

use super::{Expr, ExprError, ExprKind, Symbol};

/// Applies the derivation that sends each symbol to `leaf(symbol)` and
/// extends by linearity, the product rule, the quotient rule and the power
/// rule. Partial derivatives and total time derivatives are both instances.
pub fn derive<E>(
    e: &Expr,
    leaf: &mut impl FnMut(&Symbol) -> Result<Expr, E>,
) -> Result<Expr, E> {
    let mut memo: HashMap<u64, Expr> = HashMap::new();
    derive_memo(e, leaf, &mut memo)
}

/// Like [`derive`] but with a caller-held memo, so several expressions over
/// a shared DAG are differentiated without repeating work.
pub fn derive_memo<E>(
    e: &Expr,
    leaf: &mut impl FnMut(&Symbol) -> Result<Expr, E>,
    memo: &mut HashMap<u64, Expr>,
) -> Result<Expr, E> {
    if let Some(d) = memo.get(&e.id()) {
        return Ok(d.clone());
    }
    let d = match e.kind() {
        ExprKind::Const(_) => Expr::zero(),
        ExprKind::Symbol(s) => leaf(s)?,
        ExprKind::Sum(terms) => {
            let mut out = Vec::with_capacity(terms.len());
            for t in terms {
                out.push(derive_memo(t, leaf, memo)?);
            }
            Expr::sum(out)
        }
        ExprKind::Product(factors) => {
            let mut out = Vec::new();
            for (i, f) in factors.iter().enumerate() {
                let df = derive_memo(f, leaf, memo)?;
                if df.is_zero() {
                    continue;
                }
                out.push(Expr::product(factors.iter().enumerate().map(|(j, g)| {
                    if i == j {
                        df.clone()
                    } else {
                        g.clone()
                    }
                })));
            }
            Expr::sum(out)
        }
        ExprKind::Difference(a, b) => {
            let da = derive_memo(a, leaf, memo)?;
            let db = derive_memo(b, leaf, memo)?;
            Expr::difference(da, db)
        }
        ExprKind::Quotient(a, b) => {
            let da = derive_memo(a, leaf, memo)?;
            let db = derive_memo(b, leaf, memo)?;
            if db.is_zero() {
                Expr::quotient(da, b.clone()).expect("nonzero divisor")
            } else {
                let numer = Expr::difference(da * b, a * db);
                let denom = Expr::pow(b.clone(), 2).expect("nonzero divisor");
                Expr::quotient(numer, denom).expect("nonzero divisor")
            }
        }
        ExprKind::Power(a, n) => {
            let da = derive_memo(a, leaf, memo)?;
            if da.is_zero() {
                Expr::zero()
            } else {
                let lowered = Expr::pow(a.clone(), n - 1).expect("base already admitted");
                Expr::product([Expr::int(i64::from(*n)), lowered, da])
            }
        }
    };
    memo.insert(e.id(), d.clone());
    Ok(d)
}

/// Partial derivative with respect to `s`; every other symbol is an
/// independent constant.
pub fn differentiate(e: &Expr, s: &Symbol) -> Expr {
    let r: Result<Expr, ExprError> = derive(e, &mut |t: &Symbol| {
        Ok(if t == s { Expr::one() } else { Expr::zero() })
    });
    r.expect("infallible leaf rule")
}

/// Simultaneous substitution. Subtrees that contain no bound symbol are
/// reused as-is, so sharing in the input survives in the output.
pub fn substitute(e: &Expr, bindings: &HashMap<Symbol, Expr>) -> Expr {
    substitute_memo(e, bindings, &mut HashMap::new())
}

pub fn substitute_memo(
    e: &Expr,
    bindings: &HashMap<Symbol, Expr>,
    memo: &mut HashMap<u64, Expr>,
) -> Expr {
    if bindings.is_empty() {
        return e.clone();
    }
    if let Some(r) = memo.get(&e.id()) {
        return r.clone();
    }
    let r = match e.kind() {
        ExprKind::Const(_) => e.clone(),
        ExprKind::Symbol(s) => bindings.get(s).cloned().unwrap_or_else(|| e.clone()),
        _ => {
            let children: Vec<Expr> = e
                .children()
                .into_iter()
                .map(|c| substitute_memo(c, bindings, memo))
                .collect();
            let unchanged = children
                .iter()
                .zip(e.children())
                .all(|(new, old)| new.ptr_eq(old));
            if unchanged {
                e.clone()
            } else {
                rebuild(e, children)
            }
        }
    };
    memo.insert(e.id(), r.clone());
    r
}

fn rebuild(e: &Expr, mut children: Vec<Expr>) -> Expr {
    match e.kind() {
        ExprKind::Sum(_) => Expr::sum(children),
        ExprKind::Product(_) => Expr::product(children),
        ExprKind::Difference(..) => {
            let b = children.pop().unwrap();
            Expr::difference(children.pop().unwrap(), b)
        }
        // A substitution that turns a divisor into the literal zero produces
        // an expression with no meaning; keep the node and let evaluation
        // report the division.
        ExprKind::Quotient(..) => {
            let b = children.pop().unwrap();
            let a = children.pop().unwrap();
            Expr::quotient(a.clone(), b.clone()).unwrap_or_else(|_| raw_quotient(a, b))
        }
        ExprKind::Power(_, n) => {
            let a = children.pop().unwrap();
            Expr::pow(a.clone(), *n).unwrap_or_else(|_| raw_power(a, *n))
        }
        ExprKind::Const(_) | ExprKind::Symbol(_) => unreachable!("leaves are not rebuilt"),
    }
}

fn raw_quotient(a: Expr, b: Expr) -> Expr {
    Expr::raw(ExprKind::Quotient(a, b))
}

fn raw_power(a: Expr, n: i32) -> Expr {
    Expr::raw(ExprKind::Power(a, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{normalize, ExprError};

    fn sym(n: &str) -> (Symbol, Expr) {
        let s = Symbol::auxiliary(n);
        let e = Expr::symbol(&s);
        (s, e)
    }

    fn assert_equiv(a: &Expr, b: &Expr) {
        assert!(
            normalize(&(a - b)).unwrap().is_zero(),
            "{a} is not equivalent to {b}"
        );
    }

    #[test]
    fn product_and_power_rules() {
        let (xs, x) = sym("x");
        let (_, y) = sym("y");
        let e = &x * &y + Expr::pow(x.clone(), 2).unwrap();
        assert_equiv(&differentiate(&e, &xs), &(&y + Expr::int(2) * &x));
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let (xs, _) = sym("x");
        let (_, c) = sym("c");
        assert!(differentiate(&c, &xs).is_zero());
        assert!(differentiate(&Expr::int(7), &xs).is_zero());
    }

    #[test]
    fn quotient_rule() {
        let (xs, x) = sym("x");
        let e = Expr::one() / (&x + 1);
        let expected = -(Expr::one() / Expr::pow(&x + 1, 2).unwrap());
        assert_equiv(&differentiate(&e, &xs), &expected);
    }

    #[test]
    fn substitution_is_simultaneous() {
        let (xs, x) = sym("x");
        let (ys, y) = sym("y");
        let e = &x + &y;
        let mut b = HashMap::new();
        b.insert(xs.clone(), Expr::pow(y.clone(), 2).unwrap());
        b.insert(ys.clone(), x.clone());
        // x -> y^2, y -> x, applied once: y^2 + x
        let r = substitute(&e, &b);
        assert_equiv(&r, &(Expr::pow(y.clone(), 2).unwrap() + &x));
    }

    #[test]
    fn empty_substitution_is_identity() {
        let (_, x) = sym("x");
        assert!(substitute(&x, &HashMap::new()).ptr_eq(&x));
    }

    #[test]
    fn substitution_into_zero_divisor_is_kept() {
        let (xs, x) = sym("x");
        let e = Expr::one() / &x;
        let mut b = HashMap::new();
        b.insert(xs, Expr::zero());
        let r = substitute(&e, &b);
        assert!(matches!(
            normalize(&r),
            Err(ExprError::DenominatorIdenticallyZero)
        ));
    }
}
