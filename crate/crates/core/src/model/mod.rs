//! ODE models with constant and time-varying parameters, the line-oriented
//! model DSL, the built-in HIV model, and output jets computed through the
//! dynamics.

mod dsl;
mod jet;

pub use dsl::{parse_model, print_model, ModelError};
pub use jet::{output_jet, output_symbol_derivative, total_time_derivative, DerivativeMode, JetError, OutputJet};

use crate::expr::{free_symbols_of, Expr, Symbol, SymbolKind};

/// Canonical HIV model file.
pub const HIV_MODEL_SOURCE: &str = include_str!("../../models/hiv.model");

/// An ODE model `x' = f(x, θ, η)` with named outputs `y = h(x, θ)`.
///
/// Output `i` (1-based, in declaration order) owns the symbol chain
/// `Symbol::output(name, i, k)`; time-varying parameters own
/// `Symbol::tv_param(name, k)`.
#[derive(Debug, Clone)]
pub struct OdeModel {
    name: String,
    states: Vec<Symbol>,
    const_params: Vec<Symbol>,
    tv_params: Vec<Symbol>,
    rhs: Vec<Expr>,
    outputs: Vec<(String, Expr)>,
}

impl OdeModel {
    /// Assembles a model, checking the declaration invariants.
    pub fn new(
        name: impl Into<String>,
        states: Vec<Symbol>,
        const_params: Vec<Symbol>,
        tv_params: Vec<Symbol>,
        rhs: Vec<Expr>,
        outputs: Vec<(String, Expr)>,
    ) -> Result<OdeModel, ModelError> {
        let mut seen = std::collections::HashSet::new();
        let names = states
            .iter()
            .chain(&const_params)
            .chain(&tv_params)
            .map(|s| s.base().to_string())
            .chain(outputs.iter().map(|(n, _)| n.clone()));
        for n in names {
            if !seen.insert(n.clone()) {
                return Err(ModelError::DuplicateDeclaration {
                    name: n,
                    line: 0,
                    column: 0,
                });
            }
        }
        if rhs.len() != states.len() {
            let missing = states.get(rhs.len()).map_or_else(String::new, |s| s.name());
            return Err(ModelError::MissingOdeForState { name: missing });
        }
        let check = |s: &Symbol| match s.kind() {
            SymbolKind::State => states.contains(s),
            SymbolKind::ConstParam => const_params.contains(s),
            SymbolKind::TvParam { order: 0 } => tv_params.iter().any(|t| t.base() == s.base()),
            _ => false,
        };
        for s in free_symbols_of(rhs.iter().chain(outputs.iter().map(|(_, e)| e))) {
            if !check(&s) {
                return Err(ModelError::UndeclaredSymbol {
                    name: s.name(),
                    line: 0,
                    column: 0,
                });
            }
        }
        for s in free_symbols_of(outputs.iter().map(|(_, e)| e)) {
            if !matches!(s.kind(), SymbolKind::State | SymbolKind::ConstParam) {
                return Err(ModelError::Syntax {
                    line: 0,
                    column: 0,
                    message: format!("output may not reference time-varying `{s}`"),
                });
            }
        }
        Ok(OdeModel {
            name: name.into(),
            states,
            const_params,
            tv_params,
            rhs,
            outputs,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn states(&self) -> &[Symbol] {
        &self.states
    }

    pub fn const_params(&self) -> &[Symbol] {
        &self.const_params
    }

    pub fn tv_params(&self) -> &[Symbol] {
        &self.tv_params
    }

    /// Right-hand sides, aligned with [`OdeModel::states`].
    pub fn rhs(&self) -> &[Expr] {
        &self.rhs
    }

    pub fn rhs_of(&self, state: &Symbol) -> Option<&Expr> {
        self.states.iter().position(|s| s == state).map(|i| &self.rhs[i])
    }

    pub fn outputs(&self) -> &[(String, Expr)] {
        &self.outputs
    }

    /// Looks up an output expression by name.
    pub fn output(&self, name: &str) -> Option<&Expr> {
        self.outputs.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    /// Symbol for the `order`-th derivative of output `index` (1-based).
    pub fn output_symbol(&self, index: usize, order: u32) -> Option<Symbol> {
        let (name, _) = self.outputs.get(index.checked_sub(1)?)?;
        Some(Symbol::output(name, index as u32, order))
    }

    pub fn state(&self, name: &str) -> Option<&Symbol> {
        self.states.iter().find(|s| s.base() == name)
    }

    pub fn const_param(&self, name: &str) -> Option<&Symbol> {
        self.const_params.iter().find(|s| s.base() == name)
    }
}

/// The HIV viral-dynamics model
///
/// ```text
/// T_U' = lambda - rho*T_U - eta*T_U*V
/// T_I' = eta*T_U*V - delta*T_I
/// V'   = N*delta*T_I - c*V
/// y1 = T_U + T_I,  y2 = V
/// ```
///
/// Outputs are numbered total-cell-count first, virus second; the
/// input-output relation used by the rank test is written in that order.
pub fn hiv_model() -> OdeModel {
    let tu = Symbol::state("T_U");
    let ti = Symbol::state("T_I");
    let v = Symbol::state("V");
    let lambda = Symbol::const_param("lambda");
    let rho = Symbol::const_param("rho");
    let delta = Symbol::const_param("delta");
    let n = Symbol::const_param("N");
    let c = Symbol::const_param("c");
    let eta = Symbol::tv_param("eta", 0);

    let [etu, eti, ev] = [&tu, &ti, &v].map(Expr::symbol);
    let [el, er, ed, en, ec, eeta] = [&lambda, &rho, &delta, &n, &c, &eta].map(Expr::symbol);
    let infection = &eeta * &etu * &ev;

    let rhs = vec![
        &el - &er * &etu - &infection,
        &infection - &ed * &eti,
        &en * &ed * &eti - &ec * &ev,
    ];
    let outputs = vec![("y1".to_string(), &etu + &eti), ("y2".to_string(), ev)];
    OdeModel::new(
        "hiv",
        vec![tu, ti, v],
        vec![lambda, rho, delta, n, c],
        vec![eta],
        rhs,
        outputs,
    )
    .expect("built-in model is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::equivalent;

    #[test]
    fn hiv_shape() {
        let m = hiv_model();
        assert_eq!(m.states().len(), 3);
        assert_eq!(m.const_params().len(), 5);
        assert_eq!(m.tv_params().len(), 1);
        assert_eq!(m.outputs().len(), 2);
        let v = m.state("V").unwrap();
        let e = |s: &str| Expr::symbol(m.const_param(s).unwrap());
        let x = |s: &str| Expr::symbol(m.state(s).unwrap());
        let expected = e("N") * e("delta") * x("T_I") - e("c") * x("V");
        assert!(equivalent(m.rhs_of(v).unwrap(), &expected).unwrap());
        assert!(equivalent(m.output("y1").unwrap(), &(x("T_U") + x("T_I"))).unwrap());
        assert!(equivalent(m.output("y2").unwrap(), &x("V")).unwrap());
    }

    #[test]
    fn shipped_file_matches_builtin() {
        let parsed = parse_model(HIV_MODEL_SOURCE).unwrap();
        let builtin = hiv_model();
        assert_eq!(parsed.states(), builtin.states());
        assert_eq!(parsed.const_params(), builtin.const_params());
        for (a, b) in parsed.rhs().iter().zip(builtin.rhs()) {
            assert!(equivalent(a, b).unwrap());
        }
        for ((na, a), (nb, b)) in parsed.outputs().iter().zip(builtin.outputs()) {
            assert_eq!(na, nb);
            assert!(equivalent(a, b).unwrap());
        }
    }

    #[test]
    fn rejects_overlapping_names() {
        let x = Symbol::state("x");
        let r = OdeModel::new(
            "bad",
            vec![x.clone()],
            vec![],
            vec![],
            vec![Expr::zero()],
            vec![("x".into(), Expr::symbol(&x))],
        );
        assert!(matches!(r, Err(ModelError::DuplicateDeclaration { .. })));
    }
}
