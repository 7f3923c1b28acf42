//! Exact symbolic expressions: construction, differentiation, substitution,
//! rational-function normalization, and evaluation in exact, modular and
//! floating arithmetic.
//!
//! Exponentials never appear as nodes. Where a closed form needs `e^{ρτ}`,
//! callers introduce an auxiliary symbol for it and write `e^{-ρτ}` as its
//! reciprocal, which keeps everything inside the rational engine.

mod diff;
mod eval;
mod node;
mod parse;
mod poly;
mod symbol;

pub use diff::{derive, derive_memo, differentiate, substitute, substitute_memo};
pub use eval::{
    evaluate, is_prime_u64, Arithmetic, EvalError, Evaluator, ExactRational, Float64, FloatTape,
    PrimeField, Tape,
};
pub use node::{free_symbols_of, Expr, ExprKind};
pub use parse::{parse_expr, ParseError, ParseErrorKind};
pub(crate) use parse::{syntax, tokenize, Parser, Tok};
pub use poly::{equivalent, is_zero, normalize, Monomial, Polynomial, RationalCanonical};
pub use symbol::{Symbol, SymbolKind, SymbolTable};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExprError {
    #[error("quotient with a literal zero denominator")]
    ZeroDenominator,
    #[error("denominator expands to the zero polynomial")]
    DenominatorIdenticallyZero,
    #[error("symbol `{0}` declared twice")]
    DuplicateSymbol(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("`{0}` is not a time-varying parameter or output and has no derivative symbols")]
    NotDifferentiable(String),
}

impl Expr {
    /// See [`normalize`].
    pub fn normalize(&self) -> Result<RationalCanonical, ExprError> {
        normalize(self)
    }
}
