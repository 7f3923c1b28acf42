use crate::expr::{FloatTape, Symbol, SymbolKind};
use crate::model::hiv_model;
use crate::ranktest::{build_phi, jet_bindings, PhiVariant, PHI_ORDER};
use crate::transform::HivParams;

use super::{EtaSignal, Trajectory};

/// Largest `|phi| / max_k |term_k|` over the samples of an HIV trajectory.
/// Output derivatives come from the jets evaluated on the sampled states,
/// so the value measures how far the relation is from holding. A sample
/// where every term is zero counts as zero, as does an empty trajectory.
pub fn phi_residual_along(traj: &Trajectory, params: &HivParams, eta: &EtaSignal, variant: PhiVariant) -> f64 {
    if traj.is_empty() {
        return 0.0;
    }
    let m = hiv_model();
    let bindings = jet_bindings(&m, PHI_ORDER as usize).expect("HIV outputs exist");
    let y_syms: Vec<Symbol> = (1..=2)
        .flat_map(|i| (0..=PHI_ORDER).map(move |k| (i, k)))
        .map(|(i, k)| m.output_symbol(i, k).unwrap())
        .collect();
    let jet_exprs: Vec<_> = y_syms.iter().map(|s| bindings[s].clone()).collect();

    let mut jet_inputs: Vec<Symbol> = m.states().iter().chain(m.const_params()).cloned().collect();
    let eta_orders: Vec<usize> = crate::expr::free_symbols_of(&jet_exprs)
        .into_iter()
        .filter_map(|s| match s.kind() {
            SymbolKind::TvParam { order } => Some(*order as usize),
            _ => None,
        })
        .collect();
    jet_inputs.extend(eta_orders.iter().map(|&k| Symbol::tv_param("eta", k as u32)));
    let jet_tape = FloatTape::compile(&jet_exprs, &jet_inputs).expect("jet symbols are inputs");

    let phi = build_phi(variant);
    let mut term_inputs: Vec<Symbol> = m.const_params().to_vec();
    term_inputs.extend(y_syms.iter().cloned());
    let term_tape = FloatTape::compile(&phi.terms, &term_inputs).expect("phi symbols are inputs");

    let p = params.to_model_order();
    let mut jet_vals = vec![0.0; jet_inputs.len()];
    jet_vals[3..8].copy_from_slice(&p);
    let mut term_vals = vec![0.0; term_inputs.len()];
    term_vals[..5].copy_from_slice(&p);
    let (mut scratch, mut ys, mut terms) = (Vec::new(), vec![0.0; y_syms.len()], vec![0.0; phi.terms.len()]);

    let mut worst: f64 = 0.0;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        jet_vals[..3].copy_from_slice(x);
        let e = eta.jet(*t);
        for (slot, &k) in jet_vals[8..].iter_mut().zip(&eta_orders) {
            *slot = e[k];
        }
        jet_tape.eval_into(&jet_vals, &mut scratch, &mut ys);
        term_vals[5..].copy_from_slice(&ys);
        term_tape.eval_into(&term_vals, &mut scratch, &mut terms);
        let scale = terms.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if scale > 0.0 {
            worst = worst.max(terms.iter().sum::<f64>().abs() / scale);
        }
    }
    worst
}
