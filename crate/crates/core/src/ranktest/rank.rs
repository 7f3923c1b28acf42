use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::expr::{is_prime_u64, EvalError, Expr, PrimeField, Symbol, SymbolKind, Tape};
use crate::par::{map_ordered, Execution};

/// Three primes just below 2^62, each the previous prime of the one before.
pub const DEFAULT_PRIMES: [u64; 3] = [
    4_611_686_018_427_387_847,
    4_611_686_018_427_387_817,
    4_611_686_018_427_387_787,
];

/// Primes must exceed this bound to keep the Schwartz-Zippel failure
/// probability negligible for the degrees involved.
pub const MIN_PRIME: u64 = 1 << 60;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RankError {
    #[error("per-prime ranks disagree: {0:?}")]
    PrimeDisagreement(Vec<(u64, usize)>),
    #[error("trial {trial} under prime {prime}: every retry hit a vanishing denominator")]
    ExhaustedRetries { prime: u64, trial: usize },
    #[error("{0} is not a prime above 2^60")]
    InvalidPrime(u64),
    #[error("need at least two distinct primes")]
    TooFewPrimes,
    #[error("trial count must be positive")]
    ZeroTrials,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone)]
pub struct RankConfig {
    pub trials: usize,
    pub seed: u64,
    pub primes: Vec<u64>,
    pub execution: Execution,
    /// Fresh points drawn per trial before giving up on a vanishing
    /// denominator.
    pub max_retries: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            trials: 100,
            seed: 0,
            primes: DEFAULT_PRIMES.to_vec(),
            execution: Execution::default(),
            max_retries: 32,
        }
    }
}

impl RankConfig {
    pub fn validate(&self) -> Result<(), RankError> {
        if self.trials == 0 {
            return Err(RankError::ZeroTrials);
        }
        let mut distinct = self.primes.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(RankError::TooFewPrimes);
        }
        if let Some(&p) = self.primes.iter().find(|&&p| p <= MIN_PRIME || !is_prime_u64(p)) {
            return Err(RankError::InvalidPrime(p));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankOutcome {
    /// Rank seen in each trial, counted over all primes.
    pub observed_ranks: BTreeMap<usize, usize>,
    pub per_prime: Vec<(u64, usize)>,
    pub generic_rank: usize,
}

/// Rank over `F_p` by fraction-free elimination: row `i` becomes
/// `pivot * row_i - a_i * pivot_row`, so no inverse is ever taken.
pub fn rank_mod_p(mut a: Vec<Vec<u64>>, f: &PrimeField) -> usize {
    let rows = a.len();
    let cols = a.first().map_or(0, Vec::len);
    let p = f.modulus();
    let mut r = 0;
    for col in 0..cols {
        let Some(piv) = (r..rows).find(|&i| a[i][col] != 0) else {
            continue;
        };
        a.swap(r, piv);
        let pivot_row = a[r].clone();
        for row in a.iter_mut().skip(r + 1) {
            let x = row[col];
            if x == 0 {
                continue;
            }
            for j in col..cols {
                let lhs = f.mul_mod(pivot_row[col], row[j]);
                let rhs = f.mul_mod(x, pivot_row[j]);
                row[j] = if lhs >= rhs { lhs - rhs } else { lhs + (p - rhs) };
            }
        }
        r += 1;
        if r == rows {
            break;
        }
    }
    r
}

/// A matrix compiled once and evaluated at random points of `F_p`.
pub struct CompiledMatrix {
    tape: Tape,
    rows: usize,
    cols: usize,
    inputs: Vec<Symbol>,
}

impl CompiledMatrix {
    pub fn new(rows: &[Vec<Expr>], inputs: &[Symbol]) -> Result<Self, RankError> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let flat: Vec<Expr> = rows.iter().flatten().cloned().collect();
        Ok(CompiledMatrix {
            tape: Tape::compile(&flat, inputs)?,
            rows: n_rows,
            cols: n_cols,
            inputs: inputs.to_vec(),
        })
    }

    pub fn inputs(&self) -> &[Symbol] {
        &self.inputs
    }

    pub fn eval(&self, f: &PrimeField, values: &[u64]) -> Result<Vec<Vec<u64>>, EvalError> {
        let flat = self.tape.eval(f, values)?;
        Ok(flat.chunks(self.cols.max(1)).take(self.rows).map(<[u64]>::to_vec).collect())
    }

    pub fn rank_at(&self, f: &PrimeField, values: &[u64]) -> Result<usize, EvalError> {
        Ok(rank_mod_p(self.eval(f, values)?, f))
    }

    /// One trial: draws up to `1 + max_retries` points until every
    /// denominator is nonzero. `None` means all of them hit a pole.
    fn trial(&self, f: &PrimeField, rng: &mut ChaCha8Rng, max_retries: usize) -> Result<Option<usize>, EvalError> {
        let p = f.modulus();
        for _ in 0..=max_retries {
            let values: Vec<u64> = (0..self.inputs.len()).map(|_| rng.gen_range(0..p)).collect();
            match self.rank_at(f, &values) {
                Ok(r) => return Ok(Some(r)),
                Err(EvalError::DivisionByZero) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }
}

pub(crate) fn trial_rng(seed: u64, prime_idx: usize, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((prime_idx as u64) << 32) | trial);
    rng
}

/// Randomized rank of a symbolic matrix whose entries are rational
/// functions of `inputs`. Every trial reduces a random evaluation modulo
/// each prime; the reported rank is the maximum observed, and the primes
/// must agree on it.
///
/// The outcome depends only on `seed`, not on thread scheduling: trial `t`
/// under prime `i` always draws from stream `i << 32 | t`.
pub fn generic_rank(rows: &[Vec<Expr>], inputs: &[Symbol], cfg: &RankConfig) -> Result<RankOutcome, RankError> {
    cfg.validate()?;
    let compiled = CompiledMatrix::new(rows, inputs)?;
    generic_rank_compiled(&compiled, cfg)
}

pub fn generic_rank_compiled(compiled: &CompiledMatrix, cfg: &RankConfig) -> Result<RankOutcome, RankError> {
    cfg.validate()?;
    let jobs: Vec<(usize, u64, usize)> = cfg
        .primes
        .iter()
        .enumerate()
        .flat_map(|(pi, &p)| (0..cfg.trials).map(move |t| (pi, p, t)))
        .collect();
    let results = map_ordered(jobs, cfg.execution, |(pi, p, t)| {
        let f = PrimeField::new(p).expect("validated prime");
        let mut rng = trial_rng(cfg.seed, pi, t as u64);
        match compiled.trial(&f, &mut rng, cfg.max_retries) {
            Ok(Some(r)) => Ok((pi, r)),
            Ok(None) => Err(RankError::ExhaustedRetries { prime: p, trial: t }),
            Err(e) => Err(RankError::Eval(e)),
        }
    });

    let mut observed_ranks = BTreeMap::new();
    let mut best = vec![0usize; cfg.primes.len()];
    for res in results {
        let (pi, r) = res?;
        *observed_ranks.entry(r).or_insert(0) += 1;
        best[pi] = best[pi].max(r);
    }
    let per_prime: Vec<(u64, usize)> = cfg.primes.iter().copied().zip(best.iter().copied()).collect();
    if best.iter().any(|&r| r != best[0]) {
        return Err(RankError::PrimeDisagreement(per_prime));
    }
    Ok(RankOutcome {
        observed_ranks,
        per_prime,
        generic_rank: best[0],
    })
}

/// Rank at a random point on which every derivative `eta^(k)`, `k >= 1`,
/// of each time-varying parameter vanishes (constant infection rate), using
/// the first prime. `None` when the matrix has no such symbols.
pub fn structured_point_rank(compiled: &CompiledMatrix, cfg: &RankConfig) -> Result<Option<usize>, RankError> {
    let frozen: Vec<bool> = compiled
        .inputs()
        .iter()
        .map(|s| matches!(s.kind(), SymbolKind::TvParam { order } if *order >= 1))
        .collect();
    if !frozen.iter().any(|&b| b) {
        return Ok(None);
    }
    let p = cfg.primes[0];
    let f = PrimeField::new(p).ok_or(RankError::InvalidPrime(p))?;
    let mut rng = trial_rng(cfg.seed, usize::MAX >> 32, u32::MAX as u64);
    for _ in 0..=cfg.max_retries {
        let values: Vec<u64> = frozen
            .iter()
            .map(|&z| if z { 0 } else { rng.gen_range(0..p) })
            .collect();
        match compiled.rank_at(&f, &values) {
            Ok(r) => return Ok(Some(r)),
            Err(EvalError::DivisionByZero) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(RankError::ExhaustedRetries { prime: p, trial: usize::MAX })
}
