use std::collections::HashMap;

use crate::expr::{derive_memo, Expr, Symbol, SymbolKind};

use super::OdeModel;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JetError {
    #[error("state `{0}` cannot appear in output-symbol mode")]
    MixedModeSymbols(String),
    #[error("model has no output number {0}")]
    NoSuchOutput(usize),
}

/// How state symbols are treated by [`total_time_derivative`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    /// States differentiate to their right-hand sides.
    Dynamics,
    /// Only output and time-varying-parameter chains move; states are
    /// forbidden.
    OutputSymbols,
}

/// An output and its time derivatives, expressed through the dynamics in
/// states, constant parameters and the chain `eta, eta', ...`.
#[derive(Debug, Clone)]
pub struct OutputJet {
    pub output_index: usize,
    pub entries: Vec<Expr>,
}

impl OutputJet {
    pub fn order(&self) -> usize {
        self.entries.len() - 1
    }
}

fn chain_rule<'m>(
    m: Option<&'m OdeModel>,
    mode: DerivativeMode,
) -> impl FnMut(&Symbol) -> Result<Expr, JetError> + 'm {
    move |s: &Symbol| match s.kind() {
        SymbolKind::State => match (mode, m) {
            (DerivativeMode::Dynamics, Some(m)) => Ok(m
                .rhs_of(s)
                .cloned()
                // A state of some other model is a constant here.
                .unwrap_or_else(Expr::zero)),
            _ => Err(JetError::MixedModeSymbols(s.name())),
        },
        SymbolKind::TvParam { .. } | SymbolKind::Output { .. } => {
            Ok(Expr::symbol(&s.next_derivative().expect("chain symbol")))
        }
        SymbolKind::ConstParam | SymbolKind::Auxiliary => Ok(Expr::zero()),
    }
}

/// Total time derivative of `e` along the model.
///
/// Output-derivative symbols `y^(k)` step to `y^(k+1)` and `eta^(j)` to
/// `eta^(j+1)` in both modes; constants and auxiliaries are constant. In
/// [`DerivativeMode::Dynamics`] each state becomes its right-hand side; in
/// [`DerivativeMode::OutputSymbols`] a state anywhere in `e` is an error.
pub fn total_time_derivative(m: &OdeModel, e: &Expr, mode: DerivativeMode) -> Result<Expr, JetError> {
    derive_memo(e, &mut chain_rule(Some(m), mode), &mut HashMap::new())
}

/// Output-symbol-mode time derivative that needs no model.
pub fn output_symbol_derivative(e: &Expr) -> Result<Expr, JetError> {
    derive_memo(
        e,
        &mut chain_rule(None, DerivativeMode::OutputSymbols),
        &mut HashMap::new(),
    )
}

/// Output `output_index` (1-based) and its first `order` time derivatives
/// under the dynamics. Entry `k` references `eta^(j)` only for `j < k`.
pub fn output_jet(m: &OdeModel, output_index: usize, order: usize) -> Result<OutputJet, JetError> {
    let (_, y) = output_index
        .checked_sub(1)
        .and_then(|i| m.outputs().get(i))
        .ok_or(JetError::NoSuchOutput(output_index))?;
    let mut rule = chain_rule(Some(m), DerivativeMode::Dynamics);
    let mut memo = HashMap::new();
    let mut entries = vec![y.clone()];
    for _ in 0..order {
        let next = derive_memo(entries.last().unwrap(), &mut rule, &mut memo)?;
        entries.push(next);
    }
    Ok(OutputJet {
        output_index,
        entries,
    })
}
