use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::expr::{derive_memo, differentiate, substitute_memo, Expr, Symbol, SymbolKind};
use crate::model::{output_jet, output_symbol_derivative, JetError, OdeModel};

/// Which printing of the input-output relation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhiVariant {
    /// The relation as it follows from the model.
    #[serde(rename = "corrected")]
    Corrected,
    /// The earlier printing: sixth term `(δρ+ρ+δ-δ²-δc) y1 y2 y2'` and
    /// seventh term `c y2 y2'`.
    #[serde(rename = "miao")]
    MiaoAsPrinted,
}

impl std::str::FromStr for PhiVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "corrected" => Ok(PhiVariant::Corrected),
            "miao" | "miao-as-printed" => Ok(PhiVariant::MiaoAsPrinted),
            other => Err(format!("unknown variant `{other}` (expected corrected|miao)")),
        }
    }
}

/// Parameter order of the Jacobian columns.
pub const PARAM_ORDER: [&str; 5] = ["lambda", "delta", "rho", "c", "N"];

/// Highest output derivative order appearing in the relation itself.
pub const PHI_ORDER: u32 = 2;

/// Number of time derivatives stacked on top of the relation.
pub const SYSTEM_DERIVATIVES: usize = 4;

pub fn param_symbols() -> Vec<Symbol> {
    PARAM_ORDER.iter().map(|n| Symbol::const_param(n)).collect()
}

/// `y_i^(order)` for the two HIV outputs.
pub fn output_symbol(index: u32, order: u32) -> Symbol {
    let name = match index {
        1 => "y1",
        2 => "y2",
        _ => panic!("the HIV relation has outputs 1 and 2 only"),
    };
    Symbol::output(name, index, order)
}

/// The second-order input-output relation `phi(y, θ) = 0` of the HIV model
/// (η eliminated), kept as its list of printed terms.
#[derive(Debug, Clone)]
pub struct PhiRelation {
    pub variant: PhiVariant,
    pub terms: Vec<Expr>,
    pub phi: Expr,
}

pub fn build_phi(variant: PhiVariant) -> PhiRelation {
    let p = |n: &str| Expr::symbol(&Symbol::const_param(n));
    let (lambda, delta, rho, c, n) = (p("lambda"), p("delta"), p("rho"), p("c"), p("N"));
    let y = |i, k| Expr::symbol(&output_symbol(i, k));
    let (y1, y1d, y1dd) = (y(1, 0), y(1, 1), y(1, 2));
    let (y2, y2d, y2dd) = (y(2, 0), y(2, 1), y(2, 2));
    let sq = |e: &Expr| Expr::pow(e.clone(), 2).unwrap();

    let (sixth, seventh): (Vec<Expr>, Expr) = match variant {
        PhiVariant::Corrected => (
            vec![
                (&delta * &rho - sq(&delta) - &delta * &c) * &y1 * &y2 * &y2d,
                (&rho + &delta) * &y1d * &y2 * &y2d,
            ],
            &lambda * &c * &y2 * &y2d,
        ),
        PhiVariant::MiaoAsPrinted => (
            vec![(&delta * &rho + &rho + &delta - sq(&delta) - &delta * &c) * &y1 * &y2 * &y2d],
            &c * &y2 * &y2d,
        ),
    };

    let mut terms = vec![
        &y1dd * &y2 * &y2d,
        -(&y1d * &y2 * &y2dd),
        -(&delta * &y1 * &y2 * &y2dd),
        &lambda * &y2 * &y2dd,
        -((&delta + &c) * &y1d * &y2 * &y2d),
    ];
    terms.extend(sixth);
    terms.extend([
        seventh,
        &rho * &c * &y1d * sq(&y2),
        (&rho * &delta * &c - sq(&delta) * &c) * &y1 * sq(&y2),
        -(&n * &delta * &y1 * &y1dd * &y2),
        &c * &y1dd * sq(&y2),
        -(&n * &delta * (&rho + &delta) * &y1 * &y1d * &y2),
        -(&n * sq(&delta) * &rho * sq(&y1) * &y2),
        &n * sq(&delta) * &lambda * &y1 * &y2,
    ]);
    let phi = Expr::sum(terms.clone());
    PhiRelation { variant, terms, phi }
}

/// `[phi, phi', phi'', phi''', phi'''']` over output-derivative symbols.
#[derive(Debug, Clone)]
pub struct PhiSystem {
    pub variant: PhiVariant,
    pub entries: Vec<Expr>,
}

pub fn build_phi_system(phi: &PhiRelation) -> PhiSystem {
    let mut entries = vec![phi.phi.clone()];
    for _ in 0..SYSTEM_DERIVATIVES {
        let next = output_symbol_derivative(entries.last().unwrap()).expect("relation has no states");
        entries.push(next);
    }
    PhiSystem {
        variant: phi.variant,
        entries,
    }
}

/// Square matrix of expressions with the parameters labelling its columns.
#[derive(Debug, Clone)]
pub struct ParamMatrix {
    pub params: Vec<Symbol>,
    pub rows: Vec<Vec<Expr>>,
}

impl ParamMatrix {
    pub fn entries(&self) -> impl Iterator<Item = &Expr> {
        self.rows.iter().flatten()
    }

    pub fn free_symbols(&self) -> Vec<Symbol> {
        crate::expr::free_symbols_of(self.entries()).into_iter().collect()
    }
}

/// `M[i][j] = ∂ entries[i] / ∂ param_j` with output-derivative symbols held
/// fixed. Columns follow [`PARAM_ORDER`].
pub fn parameter_jacobian(sys: &PhiSystem) -> ParamMatrix {
    jacobian_of(&sys.entries, &param_symbols())
}

pub fn jacobian_of(entries: &[Expr], params: &[Symbol]) -> ParamMatrix {
    let mut columns = Vec::new();
    for p in params {
        let mut memo = HashMap::new();
        let mut leaf = |s: &Symbol| -> Result<Expr, ()> { Ok(if s == p { Expr::one() } else { Expr::zero() }) };
        let col: Vec<Expr> = entries
            .iter()
            .map(|e| derive_memo(e, &mut leaf, &mut memo).unwrap())
            .collect();
        columns.push(col);
    }
    let rows = (0..entries.len())
        .map(|i| columns.iter().map(|col| col[i].clone()).collect())
        .collect();
    ParamMatrix {
        params: params.to_vec(),
        rows,
    }
}

/// Bindings `y_i^(k) -> k-th entry of output i's jet` for every output and
/// `k <= order`.
pub fn jet_bindings(m: &OdeModel, order: usize) -> Result<HashMap<Symbol, Expr>, JetError> {
    let mut b = HashMap::new();
    for i in 1..=m.outputs().len() {
        let jet = output_jet(m, i, order)?;
        for (k, e) in jet.entries.into_iter().enumerate() {
            b.insert(m.output_symbol(i, k as u32).unwrap(), e);
        }
    }
    Ok(b)
}

/// Replaces every output-derivative symbol by its expression through the
/// dynamics. Derivatives in `M` were already taken, so no chain-rule terms
/// through `y^(k)` appear.
pub fn substitute_dynamics(mat: &ParamMatrix, m: &OdeModel) -> Result<ParamMatrix, JetError> {
    let order = mat
        .free_symbols()
        .iter()
        .filter(|s| s.is_output_derivative())
        .map(Symbol::order)
        .max()
        .unwrap_or(0);
    let b = jet_bindings(m, order as usize)?;
    let mut memo = HashMap::new();
    let rows = mat
        .rows
        .iter()
        .map(|row| row.iter().map(|e| substitute_memo(e, &b, &mut memo)).collect())
        .collect();
    Ok(ParamMatrix {
        params: mat.params.clone(),
        rows,
    })
}

/// `phi` with the output jets substituted: the zero function exactly when
/// the relation holds along every trajectory of `m`.
pub fn phi_on_dynamics(phi: &PhiRelation, m: &OdeModel) -> Result<Expr, JetError> {
    let b = jet_bindings(m, PHI_ORDER as usize)?;
    Ok(crate::expr::substitute(&phi.phi, &b))
}

/// Highest output-derivative order in `e`.
pub fn max_output_order(e: &Expr) -> u32 {
    e.free_symbols()
        .iter()
        .filter_map(|s| match s.kind() {
            SymbolKind::Output { order, .. } => Some(*order),
            _ => None,
        })
        .max()
        .unwrap_or(0)
}

/// Single partial derivative of the relation, for spot checks.
pub fn phi_partial(phi: &PhiRelation, param: &str) -> Expr {
    differentiate(&phi.phi, &Symbol::const_param(param))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{equivalent, evaluate, is_zero, ExactRational, Float64};
    use crate::model::{hiv_model, total_time_derivative, DerivativeMode};
    use num_rational::BigRational;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(n: &str) -> Expr {
        Expr::symbol(&Symbol::const_param(n))
    }

    fn y(i: u32, k: u32) -> Expr {
        Expr::symbol(&output_symbol(i, k))
    }

    #[test]
    fn fifteen_terms() {
        assert_eq!(build_phi(PhiVariant::Corrected).terms.len(), 15);
        assert_eq!(build_phi(PhiVariant::MiaoAsPrinted).terms.len(), 14);
    }

    #[test]
    fn variants_differ_by_the_two_printed_deltas() {
        let a = build_phi(PhiVariant::Corrected).phi;
        let b = build_phi(PhiVariant::MiaoAsPrinted).phi;
        let (rho, delta, lambda, c) = (p("rho"), p("delta"), p("lambda"), p("c"));
        let expected = (&rho + &delta) * y(1, 1) * y(2, 0) * y(2, 1)
            - (&rho + &delta) * y(1, 0) * y(2, 0) * y(2, 1)
            + (&lambda - 1) * &c * y(2, 0) * y(2, 1);
        assert!(equivalent(&(a - b), &expected).unwrap());
    }

    #[test]
    fn contains_the_n_delta_y1_y1dd_y2_term() {
        let phi = build_phi(PhiVariant::Corrected);
        let term = -(p("N") * p("delta") * y(1, 0) * y(1, 2) * y(2, 0));
        assert!(phi.terms.iter().any(|t| equivalent(t, &term).unwrap()));
    }

    #[test]
    fn vanishes_at_origin() {
        let phi = build_phi(PhiVariant::Corrected);
        let point = phi
            .phi
            .free_symbols()
            .into_iter()
            .map(|s| (s, BigRational::from_integer(0.into())))
            .collect();
        assert_eq!(evaluate(&phi.phi, &point, &ExactRational).unwrap(), BigRational::from_integer(0.into()));
    }

    #[test]
    fn corrected_relation_holds_on_dynamics() {
        let m = hiv_model();
        let r = phi_on_dynamics(&build_phi(PhiVariant::Corrected), &m).unwrap();
        assert!(is_zero(&r).unwrap());
        let bad = phi_on_dynamics(&build_phi(PhiVariant::MiaoAsPrinted), &m).unwrap();
        assert!(!is_zero(&bad).unwrap());
    }

    #[test]
    fn system_shape() {
        let sys = build_phi_system(&build_phi(PhiVariant::Corrected));
        assert_eq!(sys.entries.len(), 5);
        for (k, e) in sys.entries.iter().enumerate() {
            assert_eq!(max_output_order(e), k as u32 + 2);
        }
        let m = hiv_model();
        let d = total_time_derivative(&m, &sys.entries[0], DerivativeMode::OutputSymbols).unwrap();
        assert!(is_zero(&(&sys.entries[1] - d)).unwrap());
    }

    #[test]
    fn lambda_column_by_finite_differences() {
        // oracle: central differences of phi in lambda at random points
        let phi = build_phi(PhiVariant::Corrected);
        let sys = build_phi_system(&phi);
        let mat = parameter_jacobian(&sys);
        let expected = y(2, 0) * y(2, 2) + p("c") * y(2, 0) * y(2, 1) + p("N") * Expr::pow(p("delta"), 2).unwrap() * y(1, 0) * y(2, 0);
        assert!(equivalent(&mat.rows[0][0], &expected).unwrap());
        let lambda = Symbol::const_param("lambda");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let mut point: HashMap<Symbol, f64> = phi.phi.free_symbols().into_iter().map(|s| (s, rng.gen_range(0.5..2.0))).collect();
            let l0 = point[&lambda];
            let h = 1e-5;
            point.insert(lambda.clone(), l0 + h);
            let fp = evaluate(&phi.phi, &point, &Float64).unwrap();
            point.insert(lambda.clone(), l0 - h);
            let fm = evaluate(&phi.phi, &point, &Float64).unwrap();
            point.insert(lambda.clone(), l0);
            let fd = (fp - fm) / (2.0 * h);
            let exact = evaluate(&mat.rows[0][0], &point, &Float64).unwrap();
            assert!((fd - exact).abs() <= 1e-8 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn c_column_contains_rho_y1d_y2_squared() {
        let d = phi_partial(&build_phi(PhiVariant::Corrected), "c");
        let canon = d.normalize().unwrap();
        let target = (p("rho") * y(1, 1) * Expr::pow(y(2, 0), 2).unwrap()).normalize().unwrap();
        let (mono, coeff) = target.numerator.terms().next().unwrap();
        assert!(canon.numerator.terms().any(|(m, c)| m == mono && c == coeff));
    }

    #[test]
    fn zero_system_gives_zero_matrix() {
        let sys = PhiSystem {
            variant: PhiVariant::Corrected,
            entries: vec![Expr::zero(); 5],
        };
        let mat = parameter_jacobian(&sys);
        assert!(mat.entries().all(Expr::is_zero));
    }

    #[test]
    fn substitution_reaches_fourteen_symbols() {
        let m = hiv_model();
        let sys = build_phi_system(&build_phi(PhiVariant::Corrected));
        let naive = parameter_jacobian(&sys);
        assert_eq!(naive.free_symbols().len(), 19);
        let constrained = substitute_dynamics(&naive, &m).unwrap();
        let syms = constrained.free_symbols();
        assert!(syms.iter().all(|s| !s.is_output_derivative()));
        assert_eq!(syms.len(), 14, "{syms:?}");
        let b = jet_bindings(&m, 1).unwrap();
        let v = crate::expr::substitute(&y(2, 1), &b);
        let expected = p("N") * p("delta") * Expr::symbol(m.state("T_I").unwrap()) - p("c") * Expr::symbol(m.state("V").unwrap());
        assert!(equivalent(&v, &expected).unwrap());
    }
}
