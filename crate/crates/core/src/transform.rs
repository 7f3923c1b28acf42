//! One-parameter family of HIV-model parameters, states and infection
//! rates that produce identical outputs.
//!
//! With `u = e^{ρτ}`:
//!
//! ```text
//! δ'  = δρ / ((ρ-δ)u + δ)          N' = N u        λ', ρ', c' unchanged
//! T_I' = (T_I/ρ)(δ/u + ρ - δ)      T_U' = T_U + T_I - T_I'      V' = V
//! η'  = [ηT_U Vρu + (T_I δ² - T_I δρ - ηT_U Vδ)(u - 1)]
//!       / [V(T_I δ + T_U ρ)u - V T_I δ]
//! ```
//!
//! The numeric maps are generic over [`Scalar`] so they run in `f64` and in
//! exact rationals. They take `u` directly; the `tau` wrappers compute it
//! once with `exp` so that every primed quantity sees the same bits.

use num_rational::BigRational;
use num_traits::{Num, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::expr::{equivalent, normalize, Expr, ExprError, Symbol};
use crate::model::{hiv_model, total_time_derivative, DerivativeMode, OdeModel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("tau is outside the admissible interval: (rho - delta) e^(rho tau) + delta = {denominator}")]
    SingularTau { denominator: f64 },
    #[error("eta' denominator vanishes at this point")]
    SingularPoint,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Numbers the closed forms can be evaluated in.
pub trait Scalar: Num + Clone + PartialOrd + Signed {
    /// Whether `value` counts as zero relative to `scale`.
    fn negligible(value: &Self, scale: &Self) -> bool;
    fn to_f64_lossy(&self) -> f64;
}

impl Scalar for f64 {
    fn negligible(value: &f64, scale: &f64) -> bool {
        value.abs() <= 1e-12 * scale.abs()
    }
    fn to_f64_lossy(&self) -> f64 {
        *self
    }
}

impl Scalar for BigRational {
    fn negligible(value: &BigRational, _scale: &BigRational) -> bool {
        value.is_zero()
    }
    fn to_f64_lossy(&self) -> f64 {
        num_traits::ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// The five constant parameters of the HIV model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HivParams<T = f64> {
    pub lambda: T,
    pub rho: T,
    pub delta: T,
    #[serde(rename = "N")]
    pub n: T,
    pub c: T,
}

impl HivParams<f64> {
    /// The synthetic all-ones parameter set.
    pub fn ones() -> Self {
        HivParams {
            lambda: 1.0,
            rho: 1.0,
            delta: 1.0,
            n: 1.0,
            c: 1.0,
        }
    }
}

impl<T: Clone> HivParams<T> {
    /// Values in the order of the HIV model's `params` line:
    /// `lambda rho delta N c`.
    pub fn to_model_order(&self) -> Vec<T> {
        vec![
            self.lambda.clone(),
            self.rho.clone(),
            self.delta.clone(),
            self.n.clone(),
            self.c.clone(),
        ]
    }
}

impl<T: Scalar> HivParams<T> {
    fn check_positive(&self) -> Result<(), TransformError> {
        let named = [
            ("lambda", &self.lambda),
            ("rho", &self.rho),
            ("delta", &self.delta),
            ("N", &self.n),
            ("c", &self.c),
        ];
        for (name, v) in named {
            if !v.is_positive() {
                return Err(TransformError::InvalidParams(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// `(ρ-δ)u + δ` written so that it is exactly `ρ` at `u = 1`.
fn delta_denominator<T: Scalar>(p: &HivParams<T>, u: &T) -> T {
    p.rho.clone() * u.clone() - p.delta.clone() * (u.clone() - T::one())
}

/// Primed parameters at `u = e^{ρτ}`.
pub fn transform_params_at<T: Scalar>(base: &HivParams<T>, u: &T) -> Result<HivParams<T>, TransformError> {
    base.check_positive()?;
    let den = delta_denominator(base, u);
    if !den.is_positive() || T::negligible(&den, &T::one()) {
        return Err(TransformError::SingularTau {
            denominator: den.to_f64_lossy(),
        });
    }
    // δρ/den == δ / (den/ρ); the second form is exactly δ at u = 1.
    let delta = base.delta.clone() / (den / base.rho.clone());
    Ok(HivParams {
        lambda: base.lambda.clone(),
        rho: base.rho.clone(),
        delta,
        n: base.n.clone() * u.clone(),
        c: base.c.clone(),
    })
}

/// Primed states `(T_U', T_I', V')` at `u = e^{ρτ}`.
pub fn transform_state_at<T: Scalar>(state: &[T; 3], base: &HivParams<T>, u: &T) -> Result<[T; 3], TransformError> {
    transform_params_at(base, u)?;
    let [tu, ti, v] = state.clone();
    // T_I (δ/u + ρ - δ)/ρ == T_I + T_I (δ/ρ)(1/u - 1)
    let shift = ti.clone() * (base.delta.clone() / base.rho.clone()) * (T::one() / u.clone() - T::one());
    Ok([tu - shift.clone(), ti + shift, v])
}

/// Primed infection rate at `u = e^{ρτ}`, evaluated from the original
/// trajectory values.
pub fn eta_prime_at<T: Scalar>(state: &[T; 3], eta: &T, base: &HivParams<T>, u: &T) -> Result<T, TransformError> {
    let [tu, ti, v] = state.clone();
    let (d, r) = (base.delta.clone(), base.rho.clone());
    let infection = eta.clone() * tu.clone() * v.clone();
    let numer = infection.clone() * r.clone() * u.clone()
        + (ti.clone() * d.clone() * d.clone() - ti.clone() * d.clone() * r.clone() - infection * d.clone())
            * (u.clone() - T::one());
    let denom = v.clone() * (ti.clone() * d.clone() + tu.clone() * r.clone()) * u.clone() - v.clone() * ti.clone() * d;
    let scale = v * r * (tu + ti) * u.clone();
    if T::negligible(&denom, &scale) {
        return Err(TransformError::SingularPoint);
    }
    Ok(numer / denom)
}

/// Admissible range of τ: the open set where `(ρ-δ)e^{ρτ} + δ > 0`.
/// `None` bounds are infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauInterval {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl TauInterval {
    pub fn contains(&self, tau: f64) -> bool {
        self.lo.is_none_or(|lo| tau > lo) && self.hi.is_none_or(|hi| tau < hi)
    }

    /// `[lo, hi]` with `null` for infinite ends.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!([self.lo, self.hi])
    }
}

pub fn admissible_tau_interval(base: &HivParams<f64>) -> TauInterval {
    // With u > 0 the denominator can only vanish when δ > ρ, at u = δ/(δ-ρ).
    let hi = (base.delta > base.rho).then(|| (base.delta / (base.delta - base.rho)).ln() / base.rho);
    TauInterval { lo: None, hi }
}

/// τ giving `e^{ρτ} = u`.
pub fn tau_for_exp(rho: f64, u: f64) -> f64 {
    u.ln() / rho
}

/// A validated member of the family: positive base parameters and an
/// admissible τ. `u = e^{ρτ}` is computed once here.
#[derive(Debug, Clone, PartialEq)]
pub struct TauFamily {
    pub tau: f64,
    pub base: HivParams<f64>,
    u: f64,
}

impl TauFamily {
    pub fn new(base: HivParams<f64>, tau: f64) -> Result<Self, TransformError> {
        base.check_positive()?;
        if !tau.is_finite() {
            return Err(TransformError::InvalidParams("tau must be finite".into()));
        }
        let u = (base.rho * tau).exp();
        transform_params_at(&base, &u)?;
        Ok(TauFamily { tau, base, u })
    }

    pub fn exp_rho_tau(&self) -> f64 {
        self.u
    }

    pub fn params_prime(&self) -> HivParams<f64> {
        transform_params_at(&self.base, &self.u).expect("validated in new")
    }

    pub fn state(&self, state: &[f64; 3]) -> [f64; 3] {
        transform_state_at(state, &self.base, &self.u).expect("validated in new")
    }

    pub fn eta_prime(&self, state: &[f64; 3], eta: f64) -> Result<f64, TransformError> {
        eta_prime_at(state, &eta, &self.base, &self.u)
    }

    /// JSON record `{"tau", "params", "params_prime", "admissible_tau_interval"}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "tau": self.tau,
            "params": self.base,
            "params_prime": self.params_prime(),
            "admissible_tau_interval": admissible_tau_interval(&self.base).to_json(),
        })
    }
}

pub fn transform_params(base: &HivParams<f64>, tau: f64) -> Result<HivParams<f64>, TransformError> {
    Ok(TauFamily::new(base.clone(), tau)?.params_prime())
}

pub fn transform_state(tu: f64, ti: f64, v: f64, base: &HivParams<f64>, tau: f64) -> Result<[f64; 3], TransformError> {
    Ok(TauFamily::new(base.clone(), tau)?.state(&[tu, ti, v]))
}

pub fn eta_prime(tu: f64, ti: f64, v: f64, eta: f64, base: &HivParams<f64>, tau: f64) -> Result<f64, TransformError> {
    TauFamily::new(base.clone(), tau)?.eta_prime(&[tu, ti, v], eta)
}

// Symbolic side ------------------------------------------------------------

/// The family as expressions over the HIV model's symbols and the auxiliary
/// symbol `u` standing for `e^{ρτ}`.
#[derive(Debug, Clone)]
pub struct TransformedInstance {
    pub u: Symbol,
    /// `(λ', δ', ρ', N', c')` keyed by the original parameter symbol.
    pub params_prime: Vec<(Symbol, Expr)>,
    /// `(T_U', T_I', V')` keyed by the original state symbol.
    pub state_map: Vec<(Symbol, Expr)>,
    pub eta_prime: Expr,
}

struct HivSyms {
    model: OdeModel,
    tu: Expr,
    ti: Expr,
    v: Expr,
    lambda: Expr,
    rho: Expr,
    delta: Expr,
    n: Expr,
    c: Expr,
    eta: Expr,
    u: Expr,
}

impl HivSyms {
    fn new() -> Self {
        let model = hiv_model();
        let s = |n: &str| Expr::symbol(model.state(n).unwrap());
        let p = |n: &str| Expr::symbol(model.const_param(n).unwrap());
        HivSyms {
            tu: s("T_U"),
            ti: s("T_I"),
            v: s("V"),
            lambda: p("lambda"),
            rho: p("rho"),
            delta: p("delta"),
            n: p("N"),
            c: p("c"),
            eta: Expr::symbol(&model.tv_params()[0]),
            u: Expr::symbol(&Symbol::auxiliary("u")),
            model,
        }
    }

    /// `δ e^{-ρτ} + ρ - δ`
    fn bracket(&self) -> Expr {
        &self.delta / &self.u + &self.rho - &self.delta
    }
}

/// The closed forms entered as printed, with `e^{ρτ} -> u` and
/// `e^{-ρτ} -> 1/u`.
pub fn symbolic_instance() -> TransformedInstance {
    let h = HivSyms::new();
    instance_from(&h)
}

fn instance_from(h: &HivSyms) -> TransformedInstance {
    let ti_p = &h.ti / &h.rho * h.bracket();
    let tu_p = &h.tu + &h.ti - &ti_p;
    let delta_p = &h.delta * &h.rho / ((&h.rho - &h.delta) * &h.u + &h.delta);
    let n_p = &h.n * &h.u;
    let eta_num = &h.eta * &h.tu * &h.v * &h.rho * &h.u
        + (&h.ti * Expr::pow(h.delta.clone(), 2).unwrap() - &h.ti * &h.delta * &h.rho - &h.eta * &h.tu * &h.v * &h.delta)
            * (&h.u - 1);
    let eta_den = &h.v * (&h.ti * &h.delta + &h.tu * &h.rho) * &h.u - &h.v * &h.ti * &h.delta;
    let m = &h.model;
    let sym = |e: &Expr| e.as_symbol().unwrap().clone();
    TransformedInstance {
        u: sym(&h.u),
        params_prime: vec![
            (sym(&h.lambda), h.lambda.clone()),
            (sym(&h.delta), delta_p),
            (sym(&h.rho), h.rho.clone()),
            (sym(&h.n), n_p),
            (sym(&h.c), h.c.clone()),
        ],
        state_map: vec![
            (m.states()[0].clone(), tu_p),
            (m.states()[1].clone(), ti_p),
            (m.states()[2].clone(), h.v.clone()),
        ],
        eta_prime: eta_num / eta_den,
    }
}

/// Outcome for one line of the transformed dynamics.
#[derive(Debug, Clone)]
pub struct IdentityCheck {
    /// Name of the state whose equation is checked.
    pub state: String,
    /// `d/dt(mapped state) - primed right-hand side` is the zero function.
    pub holds: bool,
    /// The two intermediate closed forms agree with each other and with the
    /// respective sides they stand for.
    pub closed_forms_agree: bool,
    /// Normalized residual (zero when `holds`).
    pub residual: Expr,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.holds && self.closed_forms_agree
    }
}

/// Simplified first and second members of each transformed equation, as
/// intermediate closed forms:
/// `d/dt X'` under the original dynamics, and the primed right-hand side.
pub fn closed_form_members() -> Vec<(Expr, Expr)> {
    let h = HivSyms::new();
    closed_forms(&h)
}

fn closed_forms(h: &HivSyms) -> Vec<(Expr, Expr)> {
    let (tu, ti, v, eta) = (&h.tu, &h.ti, &h.v, &h.eta);
    let (lambda, rho, delta, n, c, u) = (&h.lambda, &h.rho, &h.delta, &h.n, &h.c, &h.u);
    let d2 = Expr::pow(delta.clone(), 2).unwrap();
    let r2 = Expr::pow(rho.clone(), 2).unwrap();
    let inv_u = Expr::one() / u;

    let first_1 = lambda - rho * tu - delta * ti + (delta * ti - eta * tu * v) / rho * h.bracket();
    let second_1 = -(Expr::sum([
        ti * &d2,
        -(lambda * rho),
        tu * &r2,
        -(ti * &d2 * &inv_u),
        -(tu * v * delta * eta),
        tu * v * eta * rho,
        tu * v * delta * eta * &inv_u,
    ]) / rho);

    let first_2 = (eta * tu * v - delta * ti) / rho * h.bracket();
    let second_2 = -(&inv_u * (ti * delta - tu * v * eta) * (delta - delta * u + rho * u) / rho);

    let first_3 = n * delta * ti - c * v;
    let delta_p = delta * rho / ((rho - delta) * u + delta);
    let second_3 = n * u * delta_p * (ti / rho * h.bracket()) - c * v;

    vec![(first_1, second_1), (first_2, second_2), (first_3, second_3)]
}

/// Checks symbolically that the mapped states obey the HIV dynamics with the
/// primed parameters and infection rate, one line per state.
pub fn verify_identities() -> Result<Vec<IdentityCheck>, ExprError> {
    let h = HivSyms::new();
    let inst = instance_from(&h);
    let members = closed_forms(&h);
    let model = &h.model;
    // primed right-hand sides: substitute primed quantities into the model
    let mut bindings: std::collections::HashMap<Symbol, Expr> = inst
        .params_prime
        .iter()
        .chain(&inst.state_map)
        .cloned()
        .collect();
    bindings.insert(model.tv_params()[0].clone(), inst.eta_prime.clone());

    let mut out = Vec::new();
    for (i, (state, mapped)) in inst.state_map.iter().enumerate() {
        let lhs = total_time_derivative(model, mapped, DerivativeMode::Dynamics).expect("dynamics mode");
        let rhs = crate::expr::substitute(&model.rhs()[i], &bindings);
        let canon = normalize(&(&lhs - &rhs))?;
        let (first, second) = &members[i];
        let closed_forms_agree =
            equivalent(first, second)? && equivalent(&lhs, first)? && equivalent(&rhs, second)?;
        out.push(IdentityCheck {
            state: state.base().to_string(),
            holds: canon.is_zero(),
            closed_forms_agree,
            residual: if canon.is_zero() {
                Expr::zero()
            } else {
                canon.numerator.to_expr() / canon.denominator.to_expr()
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn rational_params(l: i64, r: i64, d: i64, n: i64, c: i64) -> HivParams<BigRational> {
        HivParams {
            lambda: q(l, 1),
            rho: q(r, 1),
            delta: q(d, 1),
            n: q(n, 1),
            c: q(c, 1),
        }
    }

    #[test]
    fn identity_at_u_one_exact() {
        let p = rational_params(3, 2, 5, 7, 11);
        let one = BigRational::one();
        assert_eq!(transform_params_at(&p, &one).unwrap(), p);
        let x = [q(3, 2), q(2, 7), q(5, 3)];
        assert_eq!(transform_state_at(&x, &p, &one).unwrap(), x);
        assert_eq!(eta_prime_at(&x, &q(1, 9), &p, &one).unwrap(), q(1, 9));
    }

    #[test]
    fn identity_at_tau_zero_float() {
        let p = HivParams {
            lambda: 0.7,
            rho: 0.1,
            delta: 0.3,
            n: 2.5,
            c: 1.9,
        };
        assert_eq!(transform_params(&p, 0.0).unwrap(), p);
        assert_eq!(transform_state(1.3, 0.2, 4.1, &p, 0.0).unwrap(), [1.3, 0.2, 4.1]);
        let e = eta_prime(1.3, 0.2, 4.1, 0.4, &p, 0.0).unwrap();
        assert!((e - 0.4).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn hand_computed_delta_prime() {
        // δ=1, ρ=2, u=3: δ' = 2/((2-1)*3 + 1) = 1/2, N' = 3N
        let p = rational_params(1, 2, 1, 5, 1);
        let pp = transform_params_at(&p, &q(3, 1)).unwrap();
        assert_eq!(pp.delta, q(1, 2));
        assert_eq!(pp.n, q(15, 1));
        assert_eq!((pp.lambda, pp.rho, pp.c), (p.lambda, p.rho, p.c));
    }

    #[test]
    fn singular_tau() {
        // δ=3, ρ=1, u=2: (1-3)*2 + 3 = -1
        let p = rational_params(1, 1, 3, 1, 1);
        assert!(matches!(
            transform_params_at(&p, &q(2, 1)),
            Err(TransformError::SingularTau { .. })
        ));
        // exactly at the boundary u = δ/(δ-ρ) = 3/2
        assert!(transform_params_at(&p, &q(3, 2)).is_err());
        assert!(transform_params_at(&p, &q(7, 5)).is_ok());
        let fp = HivParams {
            lambda: 1.0,
            rho: 1.0,
            delta: 3.0,
            n: 1.0,
            c: 1.0,
        };
        let iv = admissible_tau_interval(&fp);
        assert_eq!(iv.lo, None);
        assert!((iv.hi.unwrap() - 1.5f64.ln()).abs() < 1e-15);
        assert!(matches!(
            TauFamily::new(fp.clone(), iv.hi.unwrap()),
            Err(TransformError::SingularTau { .. })
        ));
        assert!(TauFamily::new(fp, iv.hi.unwrap() - 1e-3).is_ok());
        assert_eq!(admissible_tau_interval(&HivParams::ones()), TauInterval { lo: None, hi: None });
    }

    #[test]
    fn output_sum_preserved_exactly() {
        let p = rational_params(2, 5, 3, 7, 1);
        let x = [q(11, 3), q(4, 9), q(2, 1)];
        for u in [q(1, 2), q(2, 1), q(5, 1), q(17, 13)] {
            let y = transform_state_at(&x, &p, &u).unwrap();
            assert_eq!(&y[0] + &y[1], &x[0] + &x[1]);
            assert_eq!(y[2], x[2]);
        }
    }

    #[test]
    fn zero_infected_cells_stay_zero() {
        let p = rational_params(2, 5, 3, 7, 1);
        let x = [q(11, 3), q(0, 1), q(2, 1)];
        let y = transform_state_at(&x, &p, &q(4, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn eta_prime_singular_when_no_virus() {
        let p = HivParams::ones();
        assert_eq!(
            eta_prime(1.0, 1.0, 0.0, 0.5, &p, 0.3),
            Err(TransformError::SingularPoint)
        );
    }

    #[test]
    fn eta_prime_dual_entry() {
        // Second implementer path: numerator and denominator as separate sums
        // of the printed monomials, with u = 2.
        let (tu, ti, v, eta) = (1.3_f64, 0.7, 2.2, 0.45);
        let p = HivParams {
            lambda: 1.1,
            rho: 0.8,
            delta: 0.6,
            n: 3.0,
            c: 2.0,
        };
        let u = 2.0;
        let (d, r) = (p.delta, p.rho);
        let num_terms = [
            eta * tu * v * r * u,
            ti * d * d * u,
            -ti * d * d,
            -ti * d * r * u,
            ti * d * r,
            -eta * tu * v * d * u,
            eta * tu * v * d,
        ];
        let den_terms = [v * ti * d * u, v * tu * r * u, -v * ti * d];
        let expected = num_terms.iter().sum::<f64>() / den_terms.iter().sum::<f64>();
        let tau = tau_for_exp(p.rho, u);
        let got = eta_prime(tu, ti, v, eta, &p, tau).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn composition_of_parameter_maps() {
        // nested δ' telescopes: δ'(δ'(δ, u1), u2) = δ'(δ, u1 u2)
        let p = rational_params(2, 5, 3, 7, 1);
        for (u1, u2) in [(q(1, 2), q(3, 1)), (q(6, 5), q(7, 6)), (q(2, 1), q(2, 1))] {
            let once = transform_params_at(&p, &u1).unwrap();
            let twice = transform_params_at(&once, &u2).unwrap();
            let direct = transform_params_at(&p, &(&u1 * &u2)).unwrap();
            assert_eq!(twice, direct);
        }
    }

    #[test]
    fn state_map_composes_too() {
        // Not asserted by the closed forms themselves; checked here.
        let p = rational_params(2, 5, 3, 7, 1);
        let x = [q(11, 3), q(4, 9), q(2, 1)];
        let (u1, u2) = (q(6, 5), q(7, 6));
        let once = transform_state_at(&x, &p, &u1).unwrap();
        let p1 = transform_params_at(&p, &u1).unwrap();
        let twice = transform_state_at(&once, &p1, &u2).unwrap();
        let direct = transform_state_at(&x, &p, &(&u1 * &u2)).unwrap();
        assert_eq!(twice, direct);
        let e1 = eta_prime_at(&x, &q(1, 3), &p, &u1).unwrap();
        let e2 = eta_prime_at(&once, &e1, &p1, &u2).unwrap();
        assert_eq!(e2, eta_prime_at(&x, &q(1, 3), &p, &(&u1 * &u2)).unwrap());
    }

    #[test]
    fn parameters_move_linearly_near_identity() {
        // dδ'/dτ at 0 = -δ(ρ-δ), dN'/dτ at 0 = Nρ
        let p = HivParams {
            lambda: 1.0,
            rho: 2.0,
            delta: 0.5,
            n: 3.0,
            c: 1.0,
        };
        for tau in [1e-3, 1e-4, 1e-5, -1e-4] {
            let pp = transform_params(&p, tau).unwrap();
            let dd = (pp.delta - p.delta) / tau;
            let dn = (pp.n - p.n) / tau;
            assert!((dd + p.delta * (p.rho - p.delta)).abs() < 10.0 * tau.abs());
            assert!((dn - p.n * p.rho).abs() < 10.0 * tau.abs());
        }
    }

    #[test]
    fn symbolic_matches_numeric() {
        let inst = symbolic_instance();
        let p = rational_params(2, 5, 3, 7, 1);
        let x = [q(11, 3), q(4, 9), q(2, 1)];
        let eta = q(1, 3);
        let u = q(6, 5);
        let m = hiv_model();
        let mut point = std::collections::HashMap::new();
        for (s, val) in m.const_params().iter().zip(p.to_model_order()) {
            point.insert(s.clone(), val);
        }
        for (s, val) in m.states().iter().zip(x.iter()) {
            point.insert(s.clone(), val.clone());
        }
        point.insert(m.tv_params()[0].clone(), eta.clone());
        point.insert(inst.u.clone(), u.clone());
        let ev = |e: &Expr| crate::expr::evaluate(e, &point, &crate::expr::ExactRational).unwrap();
        let states = transform_state_at(&x, &p, &u).unwrap();
        for (i, (_, e)) in inst.state_map.iter().enumerate() {
            assert_eq!(ev(e), states[i]);
        }
        assert_eq!(ev(&inst.eta_prime), eta_prime_at(&x, &eta, &p, &u).unwrap());
        let pp = transform_params_at(&p, &u).unwrap();
        assert_eq!(ev(&inst.params_prime[1].1), pp.delta);
        assert_eq!(ev(&inst.params_prime[3].1), pp.n);
    }

    #[test]
    fn all_three_identities_hold() {
        let checks = verify_identities().unwrap();
        assert_eq!(checks.len(), 3);
        for c in &checks {
            assert!(c.holds, "{} residual {}", c.state, c.residual);
            assert!(c.closed_forms_agree, "{}", c.state);
            assert!(c.residual.is_zero());
        }
    }

    #[test]
    fn second_equation_members_cancel() {
        let members = closed_form_members();
        let (a, b) = &members[1];
        assert!(crate::expr::is_zero(&(a - b)).unwrap());
    }

    #[test]
    fn perturbed_map_fails_verification() {
        // Sanity check that the verifier can say no: drop the (u-1) factor.
        let h = HivSyms::new();
        let mut inst = instance_from(&h);
        inst.eta_prime = &h.eta * &h.u;
        let m = &h.model;
        let mut b: std::collections::HashMap<Symbol, Expr> =
            inst.params_prime.iter().chain(&inst.state_map).cloned().collect();
        b.insert(m.tv_params()[0].clone(), inst.eta_prime.clone());
        let lhs = total_time_derivative(m, &inst.state_map[0].1, DerivativeMode::Dynamics).unwrap();
        let rhs = crate::expr::substitute(&m.rhs()[0], &b);
        assert!(!crate::expr::is_zero(&(lhs - rhs)).unwrap());
    }
}
