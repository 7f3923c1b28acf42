use std::collections::HashMap;

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use super::{Expr, ExprKind, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("symbol `{0}` has no value at this point")]
    UnboundSymbol(String),
}

/// Number system an expression can be evaluated in.
pub trait Arithmetic {
    type Value: Clone;

    #[allow(clippy::wrong_self_convention)]
    fn from_rational(&self, r: &BigRational) -> Result<Self::Value, EvalError>;
    fn zero(&self) -> Self::Value;
    fn one(&self) -> Self::Value;
    fn add(&self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn sub(&self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn mul(&self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn div(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, EvalError>;

    fn pow(&self, a: &Self::Value, n: i32) -> Result<Self::Value, EvalError> {
        let mut base = if n < 0 {
            self.div(&self.one(), a)?
        } else {
            a.clone()
        };
        let mut k = n.unsigned_abs();
        let mut acc = self.one();
        while k > 0 {
            if k & 1 == 1 {
                acc = self.mul(&acc, &base);
            }
            k >>= 1;
            if k > 0 {
                base = self.mul(&base, &base);
            }
        }
        Ok(acc)
    }
}

/// Exact arithmetic over arbitrary-precision rationals.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactRational;

impl Arithmetic for ExactRational {
    type Value = BigRational;

    #[allow(clippy::wrong_self_convention)]
    fn from_rational(&self, r: &BigRational) -> Result<BigRational, EvalError> {
        Ok(r.clone())
    }
    fn zero(&self) -> BigRational {
        BigRational::zero()
    }
    fn one(&self) -> BigRational {
        num_traits::One::one()
    }
    fn add(&self, a: &BigRational, b: &BigRational) -> BigRational {
        a + b
    }
    fn sub(&self, a: &BigRational, b: &BigRational) -> BigRational {
        a - b
    }
    fn mul(&self, a: &BigRational, b: &BigRational) -> BigRational {
        a * b
    }
    fn div(&self, a: &BigRational, b: &BigRational) -> Result<BigRational, EvalError> {
        if b.is_zero() {
            Err(EvalError::DivisionByZero)
        } else {
            Ok(a / b)
        }
    }
}

/// IEEE double evaluation. Division by an exact zero is reported; tiny
/// divisors are not second-guessed.
#[derive(Debug, Clone, Copy, Default)]
pub struct Float64;

impl Arithmetic for Float64 {
    type Value = f64;

    #[allow(clippy::wrong_self_convention)]
    fn from_rational(&self, r: &BigRational) -> Result<f64, EvalError> {
        Ok(r.to_f64().unwrap_or(f64::NAN))
    }
    fn zero(&self) -> f64 {
        0.0
    }
    fn one(&self) -> f64 {
        1.0
    }
    fn add(&self, a: &f64, b: &f64) -> f64 {
        a + b
    }
    fn sub(&self, a: &f64, b: &f64) -> f64 {
        a - b
    }
    fn mul(&self, a: &f64, b: &f64) -> f64 {
        a * b
    }
    fn div(&self, a: &f64, b: &f64) -> Result<f64, EvalError> {
        if *b == 0.0 {
            Err(EvalError::DivisionByZero)
        } else {
            Ok(a / b)
        }
    }
    fn pow(&self, a: &f64, n: i32) -> Result<f64, EvalError> {
        if n < 0 && *a == 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        Ok(a.powi(n))
    }
}

/// Arithmetic modulo a prime `p < 2^63`, elements held in `[0, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrimeField {
    p: u64,
}

impl PrimeField {
    /// Fails unless `p` is a prime below 2^63.
    pub fn new(p: u64) -> Option<Self> {
        (p < (1 << 63) && is_prime_u64(p)).then_some(PrimeField { p })
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    pub fn reduce_bigint(&self, n: &BigInt) -> u64 {
        let m = BigInt::from(self.p);
        let r = ((n % &m) + &m) % &m;
        let (sign, digits) = r.to_u64_digits();
        debug_assert!(sign != Sign::Minus);
        digits.first().copied().unwrap_or(0)
    }

    pub fn inv(&self, a: u64) -> Option<u64> {
        if a == 0 {
            return None;
        }
        Some(pow_mod(a, self.p - 2, self.p))
    }

    pub fn mul_mod(&self, a: u64, b: u64) -> u64 {
        mul_mod(a, b, self.p)
    }
}

impl Arithmetic for PrimeField {
    type Value = u64;

    #[allow(clippy::wrong_self_convention)]
    fn from_rational(&self, r: &BigRational) -> Result<u64, EvalError> {
        let n = self.reduce_bigint(r.numer());
        let d = self.reduce_bigint(r.denom());
        let inv = self.inv(d).ok_or(EvalError::DivisionByZero)?;
        Ok(mul_mod(n, inv, self.p))
    }
    fn zero(&self) -> u64 {
        0
    }
    fn one(&self) -> u64 {
        1
    }
    fn add(&self, a: &u64, b: &u64) -> u64 {
        let s = *a as u128 + *b as u128;
        (s % self.p as u128) as u64
    }
    fn sub(&self, a: &u64, b: &u64) -> u64 {
        if a >= b {
            a - b
        } else {
            self.p - (b - a)
        }
    }
    fn mul(&self, a: &u64, b: &u64) -> u64 {
        mul_mod(*a, *b, self.p)
    }
    fn div(&self, a: &u64, b: &u64) -> Result<u64, EvalError> {
        let inv = self.inv(*b).ok_or(EvalError::DivisionByZero)?;
        Ok(mul_mod(*a, inv, self.p))
    }
}

fn mul_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

fn pow_mod(mut a: u64, mut e: u64, p: u64) -> u64 {
    let mut acc = 1u64 % p;
    a %= p;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, a, p);
        }
        a = mul_mod(a, a, p);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &w in &WITNESSES {
        if n.is_multiple_of(w) {
            return n == w;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'outer: for &a in &WITNESSES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// Memoizing evaluator: several expressions sharing subterms evaluate each
/// shared node once.
pub struct Evaluator<'a, A: Arithmetic> {
    arith: &'a A,
    point: &'a HashMap<Symbol, A::Value>,
    memo: HashMap<u64, A::Value>,
}

impl<'a, A: Arithmetic> Evaluator<'a, A> {
    pub fn new(arith: &'a A, point: &'a HashMap<Symbol, A::Value>) -> Self {
        Evaluator {
            arith,
            point,
            memo: HashMap::new(),
        }
    }

    pub fn eval(&mut self, e: &Expr) -> Result<A::Value, EvalError> {
        let arith = self.arith;
        let point = self.point;
        e.fold(&mut self.memo, &mut |node, args: Vec<A::Value>| {
            eval_node(arith, point, node, &args)
        })
    }
}

fn eval_node<A: Arithmetic>(
    arith: &A,
    point: &HashMap<Symbol, A::Value>,
    node: &Expr,
    args: &[A::Value],
) -> Result<A::Value, EvalError> {
    Ok(match node.kind() {
        ExprKind::Const(c) => arith.from_rational(c)?,
        ExprKind::Symbol(s) => point
            .get(s)
            .cloned()
            .ok_or_else(|| EvalError::UnboundSymbol(s.name()))?,
        ExprKind::Sum(_) => args
            .iter()
            .skip(1)
            .fold(args[0].clone(), |acc, v| arith.add(&acc, v)),
        ExprKind::Product(_) => args
            .iter()
            .skip(1)
            .fold(args[0].clone(), |acc, v| arith.mul(&acc, v)),
        ExprKind::Difference(..) => arith.sub(&args[0], &args[1]),
        ExprKind::Quotient(..) => arith.div(&args[0], &args[1])?,
        ExprKind::Power(_, n) => arith.pow(&args[0], *n)?,
    })
}

/// Evaluates `e` at `point` in the given arithmetic.
pub fn evaluate<A: Arithmetic>(
    e: &Expr,
    point: &HashMap<Symbol, A::Value>,
    arith: &A,
) -> Result<A::Value, EvalError> {
    Evaluator::new(arith, point).eval(e)
}

#[derive(Debug, Clone)]
enum Op {
    Const(BigRational),
    Input(usize),
    Sum(Vec<usize>),
    Product(Vec<usize>),
    Difference(usize, usize),
    Quotient(usize, usize),
    Power(usize, i32),
}

/// A set of expressions flattened into a straight-line program over a
/// fixed, ordered list of input symbols. Compile once, evaluate many times
/// in any [`Arithmetic`]; the hot loops of the rank test and the integrator
/// run on tapes.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Symbol>,
    ops: Vec<Op>,
    outputs: Vec<usize>,
}

impl Tape {
    /// Fails with `UnboundSymbol` if an expression references a symbol
    /// outside `inputs`.
    pub fn compile(exprs: &[Expr], inputs: &[Symbol]) -> Result<Tape, EvalError> {
        let slot_of: HashMap<&Symbol, usize> =
            inputs.iter().enumerate().map(|(i, s)| (s, i)).collect();
        let mut ops = Vec::new();
        let mut memo: HashMap<u64, usize> = HashMap::new();
        let mut outputs = Vec::with_capacity(exprs.len());
        for e in exprs {
            let slot = e.fold(&mut memo, &mut |node, args: Vec<usize>| {
                let op = match node.kind() {
                    ExprKind::Const(c) => Op::Const(c.clone()),
                    ExprKind::Symbol(s) => Op::Input(
                        *slot_of
                            .get(s)
                            .ok_or_else(|| EvalError::UnboundSymbol(s.name()))?,
                    ),
                    ExprKind::Sum(_) => Op::Sum(args),
                    ExprKind::Product(_) => Op::Product(args),
                    ExprKind::Difference(..) => Op::Difference(args[0], args[1]),
                    ExprKind::Quotient(..) => Op::Quotient(args[0], args[1]),
                    ExprKind::Power(_, n) => Op::Power(args[0], *n),
                };
                ops.push(op);
                Ok(ops.len() - 1)
            })?;
            outputs.push(slot);
        }
        Ok(Tape {
            inputs: inputs.to_vec(),
            ops,
            outputs,
        })
    }

    pub fn inputs(&self) -> &[Symbol] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    /// Evaluates every output; `values` must follow the order of `inputs()`.
    pub fn eval<A: Arithmetic>(
        &self,
        arith: &A,
        values: &[A::Value],
    ) -> Result<Vec<A::Value>, EvalError> {
        assert_eq!(values.len(), self.inputs.len(), "tape input arity");
        let mut regs: Vec<A::Value> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let v = match op {
                Op::Const(c) => arith.from_rational(c)?,
                Op::Input(i) => values[*i].clone(),
                Op::Sum(args) => args
                    .iter()
                    .skip(1)
                    .fold(regs[args[0]].clone(), |acc, &i| arith.add(&acc, &regs[i])),
                Op::Product(args) => args
                    .iter()
                    .skip(1)
                    .fold(regs[args[0]].clone(), |acc, &i| arith.mul(&acc, &regs[i])),
                Op::Difference(a, b) => arith.sub(&regs[*a], &regs[*b]),
                Op::Quotient(a, b) => arith.div(&regs[*a], &regs[*b])?,
                Op::Power(a, n) => arith.pow(&regs[*a], *n)?,
            };
            regs.push(v);
        }
        Ok(self.outputs.iter().map(|&i| regs[i].clone()).collect())
    }
}

/// f64 tape specialized for tight loops: constants pre-converted, one
/// scratch buffer reused across calls.
#[derive(Debug, Clone)]
pub struct FloatTape {
    tape: Tape,
    consts: Vec<f64>,
}

impl FloatTape {
    pub fn new(tape: Tape) -> Self {
        let consts = tape
            .ops
            .iter()
            .map(|op| match op {
                Op::Const(c) => c.to_f64().unwrap_or(f64::NAN),
                _ => 0.0,
            })
            .collect();
        FloatTape { tape, consts }
    }

    pub fn compile(exprs: &[Expr], inputs: &[Symbol]) -> Result<Self, EvalError> {
        Ok(Self::new(Tape::compile(exprs, inputs)?))
    }

    pub fn inputs(&self) -> &[Symbol] {
        &self.tape.inputs
    }

    /// Evaluates into `out` using `scratch` as register storage. Division by
    /// zero yields an infinity or NaN here; callers check finiteness.
    pub fn eval_into(&self, values: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        scratch.clear();
        for (k, op) in self.tape.ops.iter().enumerate() {
            let v = match op {
                Op::Const(_) => self.consts[k],
                Op::Input(i) => values[*i],
                Op::Sum(args) => args.iter().map(|&i| scratch[i]).sum(),
                Op::Product(args) => args.iter().map(|&i| scratch[i]).product(),
                Op::Difference(a, b) => scratch[*a] - scratch[*b],
                Op::Quotient(a, b) => scratch[*a] / scratch[*b],
                Op::Power(a, n) => scratch[*a].powi(*n),
            };
            scratch.push(v);
        }
        for (o, &i) in out.iter_mut().zip(&self.tape.outputs) {
            *o = scratch[i];
        }
    }

    pub fn eval(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.tape.outputs.len()];
        self.eval_into(values, &mut Vec::new(), &mut out);
        out
    }
}
