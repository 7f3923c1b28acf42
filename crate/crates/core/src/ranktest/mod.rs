//! Randomized rank test of the parameter Jacobian of the HIV input-output
//! relation and its first four time derivatives.
//!
//! In [`RankMode::Naive`] the output derivatives `y1^(k)`, `y2^(k)` are
//! treated as independent indeterminates. In [`RankMode::Constrained`]
//! they are first replaced by their expressions through the dynamics, so
//! the matrix lives on the actual trajectories of the model.

mod phi;
mod rank;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use phi::{
    build_phi, build_phi_system, jacobian_of, jet_bindings, max_output_order, output_symbol, param_symbols,
    parameter_jacobian, phi_on_dynamics, phi_partial, substitute_dynamics, ParamMatrix, PhiRelation, PhiSystem,
    PhiVariant, PARAM_ORDER, PHI_ORDER, SYSTEM_DERIVATIVES,
};
pub use rank::{
    generic_rank, generic_rank_compiled, rank_mod_p, structured_point_rank, CompiledMatrix, RankConfig,
    RankError, RankOutcome, DEFAULT_PRIMES, MIN_PRIME,
};

use crate::model::{JetError, OdeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    Naive,
    Constrained,
}

impl std::str::FromStr for RankMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "naive" => Ok(RankMode::Naive),
            "constrained" => Ok(RankMode::Constrained),
            other => Err(format!("unknown mode `{other}` (expected naive|constrained)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RankTestError {
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error("model lacks symbol `{0}` needed by the relation")]
    MissingSymbol(String),
}

/// Result of one rank test. Primes are written as decimal strings so that
/// JSON consumers without 64-bit integers read them exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankReport {
    pub mode: RankMode,
    pub variant: PhiVariant,
    pub trials: usize,
    pub primes: Vec<String>,
    pub observed_ranks: BTreeMap<usize, usize>,
    pub generic_rank: usize,
    pub seed: u64,
    pub elapsed_ms: u64,
    pub structured_point_rank: Option<usize>,
}

/// The symbolic matrix for one (mode, variant) pair, built once and
/// compiled for repeated modular evaluation.
pub struct RankProblem {
    pub mode: RankMode,
    pub variant: PhiVariant,
    pub matrix: ParamMatrix,
    pub compiled: CompiledMatrix,
}

impl RankProblem {
    pub fn build(m: &OdeModel, mode: RankMode, variant: PhiVariant) -> Result<Self, RankTestError> {
        for name in PARAM_ORDER {
            if m.const_param(name).is_none() {
                return Err(RankTestError::MissingSymbol(name.into()));
            }
        }
        if m.outputs().len() < 2 {
            return Err(RankTestError::MissingSymbol("y2".into()));
        }
        let naive = parameter_jacobian(&build_phi_system(&build_phi(variant)));
        let matrix = match mode {
            RankMode::Naive => naive,
            RankMode::Constrained => substitute_dynamics(&naive, m)?,
        };
        let inputs = matrix.free_symbols();
        let compiled = CompiledMatrix::new(&matrix.rows, &inputs)?;
        Ok(RankProblem {
            mode,
            variant,
            matrix,
            compiled,
        })
    }

    pub fn run(&self, cfg: &RankConfig) -> Result<RankReport, RankTestError> {
        let start = Instant::now();
        let outcome = generic_rank_compiled(&self.compiled, cfg)?;
        let structured = match self.mode {
            RankMode::Constrained => structured_point_rank(&self.compiled, cfg)?,
            RankMode::Naive => None,
        };
        Ok(RankReport {
            mode: self.mode,
            variant: self.variant,
            trials: cfg.trials,
            primes: cfg.primes.iter().map(u64::to_string).collect(),
            observed_ranks: outcome.observed_ranks,
            generic_rank: outcome.generic_rank,
            seed: cfg.seed,
            elapsed_ms: start.elapsed().as_millis() as u64,
            structured_point_rank: structured,
        })
    }
}

pub fn run_rank_test(
    m: &OdeModel,
    mode: RankMode,
    variant: PhiVariant,
    cfg: &RankConfig,
) -> Result<RankReport, RankTestError> {
    cfg.validate()?;
    RankProblem::build(m, mode, variant)?.run(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{PrimeField, Symbol};
    use crate::model::hiv_model;
    use crate::par::Execution;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn problem(mode: RankMode) -> &'static RankProblem {
        static NAIVE: OnceLock<RankProblem> = OnceLock::new();
        static CONSTRAINED: OnceLock<RankProblem> = OnceLock::new();
        let cell = match mode {
            RankMode::Naive => &NAIVE,
            RankMode::Constrained => &CONSTRAINED,
        };
        cell.get_or_init(|| RankProblem::build(&hiv_model(), mode, PhiVariant::Corrected).unwrap())
    }

    fn cfg(trials: usize, seed: u64) -> RankConfig {
        RankConfig {
            trials,
            seed,
            ..RankConfig::default()
        }
    }

    #[test]
    fn naive_rank_is_five() {
        let r = problem(RankMode::Naive).run(&cfg(20, 1)).unwrap();
        assert_eq!(r.generic_rank, 5);
        assert_eq!(r.structured_point_rank, None);
        assert_eq!(r.observed_ranks.values().sum::<usize>(), 60);
    }

    #[test]
    fn constrained_rank_is_four() {
        let r = problem(RankMode::Constrained).run(&cfg(20, 1)).unwrap();
        assert_eq!(r.generic_rank, 4);
        assert_eq!(r.observed_ranks, BTreeMap::from([(4, 60)]));
        assert!(r.structured_point_rank.unwrap() <= 4);
    }

    #[test]
    fn constrained_matrix_has_the_family_null_vector() {
        // oracle: differentiate the parameter map by hand at u = 1.
        // δ' = δρ/((ρ-δ)u + δ) gives δ(δ-ρ)/ρ and N' = Nu gives N, so ρ
        // times the tangent is (0, δ(δ-ρ), 0, 0, ρN) in (λ, δ, ρ, c, N).
        let p = problem(RankMode::Constrained);
        let f = PrimeField::new(DEFAULT_PRIMES[1]).unwrap();
        let inputs = p.compiled.inputs();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<u64> = inputs.iter().map(|_| rng.gen_range(1..f.modulus())).collect();
        let m = p.compiled.eval(&f, &values).unwrap();
        let at = |name: &str| values[inputs.iter().position(|s| *s == Symbol::const_param(name)).unwrap()];
        let (delta, n, rho) = (at("delta"), at("N"), at("rho"));
        let diff = (delta as u128 + f.modulus() as u128 - rho as u128) % f.modulus() as u128;
        let v = [0, f.mul_mod(delta, diff as u64), 0, 0, f.mul_mod(rho, n)];
        for row in &m {
            let dot = row.iter().zip(v).fold(0u64, |acc, (&a, b)| {
                let t = f.mul_mod(a, b);
                ((acc as u128 + t as u128) % f.modulus() as u128) as u64
            });
            assert_eq!(dot, 0);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let p = problem(RankMode::Naive);
        let mut a = p.run(&cfg(10, 77)).unwrap();
        let mut b = p
            .run(&RankConfig {
                execution: Execution::Sequential,
                ..cfg(10, 77)
            })
            .unwrap();
        a.elapsed_ms = 0;
        b.elapsed_ms = 0;
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn row_scaling_keeps_rank() {
        let p = problem(RankMode::Constrained);
        let f = PrimeField::new(DEFAULT_PRIMES[0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let values: Vec<u64> = p.compiled.inputs().iter().map(|_| rng.gen_range(0..f.modulus())).collect();
            let m = p.compiled.eval(&f, &values).unwrap();
            let base = rank_mod_p(m.clone(), &f);
            let scaled: Vec<Vec<u64>> = m
                .into_iter()
                .map(|row| {
                    let s = rng.gen_range(1..f.modulus());
                    row.into_iter().map(|x| f.mul_mod(x, s)).collect()
                })
                .collect();
            assert_eq!(rank_mod_p(scaled, &f), base);
        }
    }

    #[test]
    fn report_json_shape() {
        let r = problem(RankMode::Naive).run(&cfg(2, 3)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["mode"], "naive");
        assert_eq!(v["variant"], "corrected");
        assert_eq!(v["primes"][0], "4611686018427387847");
        assert_eq!(v["observed_ranks"]["5"], 6);
        assert!(v["structured_point_rank"].is_null());
    }

    #[test]
    fn constrained_inputs() {
        let p = problem(RankMode::Constrained);
        let names: Vec<String> = p.compiled.inputs().iter().map(|s| s.name()).collect();
        assert_eq!(names.len(), 14);
        assert!(names.contains(&"eta^(5)".to_string()), "{names:?}");
    }
}
