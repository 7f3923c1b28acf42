use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use super::{Expr, ExprError, ExprKind, Symbol};

/// Sparse exponent vector: `(symbol, exponent)` pairs sorted by symbol id,
/// exponents strictly positive.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial(Vec<(Symbol, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn var(s: &Symbol) -> Self {
        Monomial(vec![(s.clone(), 1)])
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|(_, e)| e).sum()
    }

    pub fn factors(&self) -> &[(Symbol, u32)] {
        &self.0
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => {
                    out.push(a[i].clone());
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j].clone());
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((a[i].0.clone(), a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Monomial(out)
    }
}

/// Expanded multivariate polynomial with exact rational coefficients and no
/// zero coefficients stored.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, BigRational>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: BigRational) -> Self {
        let mut p = Self::zero();
        if !c.is_zero() {
            p.terms.insert(Monomial::one(), c);
        }
        p
    }

    pub fn one() -> Self {
        Self::constant(BigRational::one())
    }

    pub fn var(s: &Symbol) -> Self {
        let mut p = Self::zero();
        p.terms.insert(Monomial::var(s), BigRational::one());
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &BigRational)> {
        self.terms.iter()
    }

    /// The value if the polynomial has no variables.
    pub fn as_constant(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 => self.terms.get(&Monomial::one()).cloned(),
            _ => None,
        }
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Coefficient of the largest monomial in the map order.
    pub fn leading_coefficient(&self) -> Option<&BigRational> {
        self.terms.values().next_back()
    }

    fn add_term(&mut self, m: Monomial, c: BigRational) {
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                if !c.is_zero() {
                    v.insert(c);
                }
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -c);
        }
        out
    }

    pub fn neg(&self) -> Polynomial {
        self.scale(&-BigRational::one())
    }

    pub fn scale(&self, k: &BigRational) -> Polynomial {
        if k.is_zero() {
            return Polynomial::zero();
        }
        Polynomial {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * k)).collect(),
        }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        if let Some(k) = other.as_constant() {
            return self.scale(&k);
        }
        if let Some(k) = self.as_constant() {
            return other.scale(&k);
        }
        let mut out = Polynomial::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }

    pub fn pow(&self, mut n: u32) -> Polynomial {
        let mut base = self.clone();
        let mut acc = Polynomial::one();
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    /// Rebuilds the polynomial as a flat sum-of-products expression.
    pub fn to_expr(&self) -> Expr {
        Expr::sum(self.terms.iter().map(|(m, c)| {
            let mut factors = vec![Expr::constant(c.clone())];
            for (s, e) in m.factors() {
                let v = Expr::symbol(s);
                factors.push(if *e == 1 {
                    v
                } else {
                    Expr::pow(v, *e as i32).expect("symbol base")
                });
            }
            Expr::product(factors)
        }))
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_expr())
    }
}

/// A rational function as an expanded numerator over an expanded
/// denominator.
///
/// The denominator is scaled to integer coefficients with content one and a
/// positive leading coefficient; common polynomial factors are NOT removed.
/// Equality of two canonical forms is therefore decided by
/// cross-multiplication ([`RationalCanonical::equivalent`]), never by
/// comparing fields.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RationalCanonical {
    pub numerator: Polynomial,
    pub denominator: Polynomial,
}

impl RationalCanonical {
    pub fn from_poly(p: Polynomial) -> Self {
        RationalCanonical {
            numerator: p,
            denominator: Polynomial::one(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.numerator.is_zero()
    }

    pub fn is_polynomial(&self) -> bool {
        self.denominator.as_constant().is_some()
    }

    /// Cross-multiplication test: `a/b == c/d` iff `a*d - c*b` expands to
    /// zero.
    pub fn equivalent(&self, other: &RationalCanonical) -> bool {
        self.numerator
            .mul(&other.denominator)
            .sub(&other.numerator.mul(&self.denominator))
            .is_zero()
    }

    fn new(numerator: Polynomial, denominator: Polynomial) -> Result<Self, ExprError> {
        if denominator.is_zero() {
            return Err(ExprError::DenominatorIdenticallyZero);
        }
        if numerator.is_zero() {
            return Ok(Self::from_poly(Polynomial::zero()));
        }
        if let Some(k) = denominator.as_constant() {
            return Ok(Self::from_poly(numerator.scale(&k.recip())));
        }
        let k = normalizing_factor(&denominator);
        Ok(RationalCanonical {
            numerator: numerator.scale(&k),
            denominator: denominator.scale(&k),
        })
    }

    fn add(&self, other: &Self) -> Result<Self, ExprError> {
        if self.denominator == other.denominator {
            return Self::new(
                self.numerator.add(&other.numerator),
                self.denominator.clone(),
            );
        }
        Self::new(
            self.numerator
                .mul(&other.denominator)
                .add(&other.numerator.mul(&self.denominator)),
            self.denominator.mul(&other.denominator),
        )
    }

    fn neg(&self) -> Self {
        RationalCanonical {
            numerator: self.numerator.neg(),
            denominator: self.denominator.clone(),
        }
    }

    fn mul(&self, other: &Self) -> Result<Self, ExprError> {
        Self::new(
            self.numerator.mul(&other.numerator),
            self.denominator.mul(&other.denominator),
        )
    }

    fn recip(&self) -> Result<Self, ExprError> {
        Self::new(self.denominator.clone(), self.numerator.clone())
    }

    fn pow(&self, n: i32) -> Result<Self, ExprError> {
        let base = if n < 0 { self.recip()? } else { self.clone() };
        let k = n.unsigned_abs();
        Self::new(base.numerator.pow(k), base.denominator.pow(k))
    }
}

impl fmt::Display for RationalCanonical {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denominator.is_one_poly() {
            write!(f, "{}", self.numerator)
        } else {
            write!(f, "({}) / ({})", self.numerator, self.denominator)
        }
    }
}

impl Polynomial {
    fn is_one_poly(&self) -> bool {
        self.as_constant().is_some_and(|c| c.is_one())
    }
}

/// Factor that makes `p` integral, primitive, and leading-positive.
fn normalizing_factor(p: &Polynomial) -> BigRational {
    let mut lcm_den = BigInt::one();
    for c in p.terms.values() {
        lcm_den = lcm_den.lcm(c.denom());
    }
    let mut gcd_num = BigInt::zero();
    for c in p.terms.values() {
        let scaled = c.numer() * (&lcm_den / c.denom());
        gcd_num = gcd_num.gcd(&scaled);
    }
    let mut k = BigRational::new(lcm_den, gcd_num);
    if p.leading_coefficient().is_some_and(Signed::is_negative) {
        k = -k;
    }
    k
}

/// Expands `e` into canonical numerator/denominator form.
pub fn normalize(e: &Expr) -> Result<RationalCanonical, ExprError> {
    let mut memo: HashMap<u64, Arc<RationalCanonical>> = HashMap::new();
    normalize_memo(e, &mut memo).map(|r| (*r).clone())
}

fn normalize_memo(
    e: &Expr,
    memo: &mut HashMap<u64, Arc<RationalCanonical>>,
) -> Result<Arc<RationalCanonical>, ExprError> {
    e.fold(memo, &mut |node, args: Vec<Arc<RationalCanonical>>| {
        let r = match node.kind() {
            ExprKind::Const(c) => RationalCanonical::from_poly(Polynomial::constant(c.clone())),
            ExprKind::Symbol(s) => RationalCanonical::from_poly(Polynomial::var(s)),
            ExprKind::Sum(_) => {
                let mut acc = RationalCanonical::from_poly(Polynomial::zero());
                for a in &args {
                    acc = acc.add(a)?;
                }
                acc
            }
            ExprKind::Product(_) => {
                let mut acc = RationalCanonical::from_poly(Polynomial::one());
                for a in &args {
                    acc = acc.mul(a)?;
                }
                acc
            }
            ExprKind::Difference(..) => args[0].add(&args[1].neg())?,
            ExprKind::Quotient(..) => args[0].mul(&args[1].recip()?)?,
            ExprKind::Power(_, n) => args[0].pow(*n)?,
        };
        Ok(Arc::new(r))
    })
}

/// True iff `e` is the zero rational function.
pub fn is_zero(e: &Expr) -> Result<bool, ExprError> {
    Ok(normalize(e)?.is_zero())
}

/// True iff `a` and `b` are equal as rational functions.
pub fn equivalent(a: &Expr, b: &Expr) -> Result<bool, ExprError> {
    Ok(normalize(a)?.equivalent(&normalize(b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(n: &str) -> Expr {
        Expr::symbol(&Symbol::auxiliary(n))
    }

    #[test]
    fn opposite_fractions_cancel() {
        let e = v("x") / v("y") + (-v("x")) / v("y");
        let r = normalize(&e).unwrap();
        assert!(r.is_zero());
        assert!(r.denominator.as_constant().unwrap().is_one());
    }

    #[test]
    fn difference_of_squares_over_difference() {
        let (x, y) = (v("x"), v("y"));
        let lhs = (&x * &x - &y * &y) / (&x - &y);
        assert!(is_zero(&(lhs - (&x + &y))).unwrap());
    }

    #[test]
    fn identically_zero_denominator_is_reported() {
        let x = v("x");
        let e = Expr::one() / (&x - &x);
        assert!(matches!(
            normalize(&e),
            Err(ExprError::DenominatorIdenticallyZero)
        ));
    }

    #[test]
    fn denominator_is_primitive_and_leading_positive() {
        let (x, y) = (v("x"), v("y"));
        // 1 / (-2x/3 - 4y/3)
        let d = Expr::ratio(-2, 3) * &x + Expr::ratio(-4, 3) * &y;
        let r = normalize(&(Expr::one() / d)).unwrap();
        assert!(r.denominator.leading_coefficient().unwrap().is_positive());
        for (_, c) in r.denominator.terms() {
            assert!(c.is_integer());
        }
        let g = r
            .denominator
            .terms()
            .fold(BigInt::zero(), |g, (_, c)| g.gcd(c.numer()));
        assert!(g.is_one());
    }

    #[test]
    fn negative_powers() {
        let x = v("x");
        let e = Expr::pow(x.clone(), -2).unwrap() * Expr::pow(x, 3).unwrap() - v("x");
        assert!(is_zero(&e).unwrap());
    }
}
