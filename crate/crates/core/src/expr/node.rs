use std::collections::{BTreeSet, HashMap};
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use super::{ExprError, Symbol};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

#[derive(Debug)]
struct Node {
    id: u64,
    kind: ExprKind,
}

/// Node payload. Sums and products are n-ary; everything else is binary or
/// unary.
#[derive(Debug)]
pub enum ExprKind {
    Const(BigRational),
    Symbol(Symbol),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Difference(Expr, Expr),
    Quotient(Expr, Expr),
    Power(Expr, i32),
}

/// Immutable, reference-counted expression node. Cloning shares the node,
/// so expressions built from common subterms form a DAG.
///
/// The smart constructors fold constants and drop neutral elements, which is
/// what keeps repeated differentiation from drowning in `0 * x` terms. They
/// do not reorder or expand; use [`Expr::normalize`] for equality questions.
#[derive(Clone, Debug)]
pub struct Expr(Arc<Node>);

impl Expr {
    fn make(kind: ExprKind) -> Expr {
        Expr(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            kind,
        }))
    }

    /// Builds a node without any folding.
    pub(crate) fn raw(kind: ExprKind) -> Expr {
        Expr::make(kind)
    }

    pub fn kind(&self) -> &ExprKind {
        &self.0.kind
    }

    /// Unique node id; memo tables key on this.
    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn ptr_eq(&self, other: &Expr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub fn constant(value: BigRational) -> Expr {
        Expr::make(ExprKind::Const(value))
    }

    pub fn int(value: i64) -> Expr {
        Expr::constant(BigRational::from_integer(BigInt::from(value)))
    }

    pub fn ratio(numer: i64, denom: i64) -> Expr {
        assert!(denom != 0, "zero denominator in rational literal");
        Expr::constant(BigRational::new(numer.into(), denom.into()))
    }

    pub fn zero() -> Expr {
        Expr::int(0)
    }

    pub fn one() -> Expr {
        Expr::int(1)
    }

    pub fn symbol(s: &Symbol) -> Expr {
        Expr::make(ExprKind::Symbol(s.clone()))
    }

    pub fn as_const(&self) -> Option<&BigRational> {
        match self.kind() {
            ExprKind::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_symbol(&self) -> Option<&Symbol> {
        match self.kind() {
            ExprKind::Symbol(s) => Some(s),
            _ => None,
        }
    }

    /// True only for the literal constant zero.
    pub fn is_zero(&self) -> bool {
        self.as_const().is_some_and(Zero::is_zero)
    }

    pub fn is_one(&self) -> bool {
        self.as_const().is_some_and(One::is_one)
    }

    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        let mut constant = BigRational::zero();
        let mut rest = Vec::new();
        for t in terms {
            match t.kind() {
                ExprKind::Const(c) => constant += c,
                _ => rest.push(t),
            }
        }
        if !constant.is_zero() {
            rest.push(Expr::constant(constant));
        }
        match rest.len() {
            0 => Expr::zero(),
            1 => rest.pop().unwrap(),
            _ => Expr::make(ExprKind::Sum(rest)),
        }
    }

    pub fn product<I: IntoIterator<Item = Expr>>(factors: I) -> Expr {
        let mut constant = BigRational::one();
        let mut rest = Vec::new();
        for f in factors {
            match f.kind() {
                ExprKind::Const(c) => {
                    if c.is_zero() {
                        return Expr::zero();
                    }
                    constant *= c;
                }
                _ => rest.push(f),
            }
        }
        if rest.is_empty() {
            return Expr::constant(constant);
        }
        if !constant.is_one() {
            rest.insert(0, Expr::constant(constant));
        }
        match rest.len() {
            1 => rest.pop().unwrap(),
            _ => Expr::make(ExprKind::Product(rest)),
        }
    }

    pub fn difference(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x - y),
            (_, Some(y)) if y.is_zero() => a,
            (Some(x), _) if x.is_zero() => -b,
            _ => Expr::make(ExprKind::Difference(a, b)),
        }
    }

    /// Quotient; fails only when the denominator is the literal zero.
    pub fn quotient(a: Expr, b: Expr) -> Result<Expr, ExprError> {
        if b.is_zero() {
            return Err(ExprError::ZeroDenominator);
        }
        Ok(match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x / y),
            (Some(x), _) if x.is_zero() => a,
            (_, Some(y)) if y.is_one() => a,
            _ => Expr::make(ExprKind::Quotient(a, b)),
        })
    }

    pub fn pow(base: Expr, exponent: i32) -> Result<Expr, ExprError> {
        if exponent == 0 {
            return Ok(Expr::one());
        }
        if exponent == 1 {
            return Ok(base);
        }
        if let Some(c) = base.as_const() {
            if c.is_zero() {
                return if exponent < 0 {
                    Err(ExprError::ZeroDenominator)
                } else {
                    Ok(base)
                };
            }
            return Ok(Expr::constant(num_traits::pow::Pow::pow(c, exponent)));
        }
        Ok(Expr::make(ExprKind::Power(base, exponent)))
    }

    /// Direct children, in order.
    pub fn children(&self) -> Vec<&Expr> {
        match self.kind() {
            ExprKind::Const(_) | ExprKind::Symbol(_) => Vec::new(),
            ExprKind::Sum(v) | ExprKind::Product(v) => v.iter().collect(),
            ExprKind::Difference(a, b) | ExprKind::Quotient(a, b) => vec![a, b],
            ExprKind::Power(a, _) => vec![a],
        }
    }

    /// Post-order fold over the DAG, visiting each shared node once.
    pub fn fold<T: Clone, E>(
        &self,
        memo: &mut HashMap<u64, T>,
        f: &mut impl FnMut(&Expr, Vec<T>) -> Result<T, E>,
    ) -> Result<T, E> {
        if let Some(v) = memo.get(&self.id()) {
            return Ok(v.clone());
        }
        let mut args = Vec::new();
        for c in self.children() {
            args.push(c.fold(memo, f)?);
        }
        let v = f(self, args)?;
        memo.insert(self.id(), v.clone());
        Ok(v)
    }

    /// Every symbol reachable from this node.
    pub fn free_symbols(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        collect_symbols(self, &mut HashMap::new(), &mut out);
        out
    }

    pub fn contains_symbol(&self, s: &Symbol) -> bool {
        self.free_symbols().contains(s)
    }

    /// Number of distinct nodes in the DAG.
    pub fn dag_size(&self) -> usize {
        let mut memo = HashMap::new();
        let _ = self.fold::<(), ()>(&mut memo, &mut |_, _| Ok(()));
        memo.len()
    }

    /// Top-level summands (the expression itself when it is not a sum).
    pub fn terms(&self) -> Vec<Expr> {
        match self.kind() {
            ExprKind::Sum(v) => v.clone(),
            _ => vec![self.clone()],
        }
    }

    pub(crate) fn is_negative_const(&self) -> bool {
        self.as_const().is_some_and(Signed::is_negative)
    }
}

/// Free symbols of a collection of expressions, sharing one traversal.
pub fn free_symbols_of<'a, I: IntoIterator<Item = &'a Expr>>(exprs: I) -> BTreeSet<Symbol> {
    let mut seen = HashMap::new();
    let mut out = BTreeSet::new();
    for e in exprs {
        collect_symbols(e, &mut seen, &mut out);
    }
    out
}

fn collect_symbols(e: &Expr, seen: &mut HashMap<u64, ()>, out: &mut BTreeSet<Symbol>) {
    let _ = e.fold::<(), ()>(seen, &mut |node, _| {
        if let ExprKind::Symbol(s) = node.kind() {
            out.insert(s.clone());
        }
        Ok(())
    });
}

impl From<&Symbol> for Expr {
    fn from(s: &Symbol) -> Expr {
        Expr::symbol(s)
    }
}

impl From<i64> for Expr {
    fn from(v: i64) -> Expr {
        Expr::int(v)
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(-c),
            None => Expr::product([Expr::int(-1), self]),
        }
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -self.clone()
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, |$a:ident, $b:ident| $body:expr) => {
        impl $trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                let ($a, $b) = (self, rhs);
                $body
            }
        }
        impl $trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                let ($a, $b) = (self, rhs.clone());
                $body
            }
        }
        impl $trait<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                let ($a, $b) = (self.clone(), rhs);
                $body
            }
        }
        impl $trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                let ($a, $b) = (self.clone(), rhs.clone());
                $body
            }
        }
        impl $trait<i64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: i64) -> Expr {
                let ($a, $b) = (self, Expr::int(rhs));
                $body
            }
        }
        impl $trait<i64> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: i64) -> Expr {
                let ($a, $b) = (self.clone(), Expr::int(rhs));
                $body
            }
        }
    };
}

binop!(Add, add, |a, b| Expr::sum([a, b]));
binop!(Sub, sub, |a, b| Expr::difference(a, b));
binop!(Mul, mul, |a, b| Expr::product([a, b]));
// Operator division panics on a literal zero divisor; use `Expr::quotient`
// when the divisor is not known to be nonzero.
binop!(Div, div, |a, b| Expr::quotient(a, b).expect("division by literal zero"));
