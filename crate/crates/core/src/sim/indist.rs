use serde::Serialize;

use super::{check_values, solve, EtaSignal, SimConfig, SimError, Trajectory};
use crate::par::{map_ordered, Execution};
use crate::transform::{HivParams, TauFamily, TransformError};

/// Right-hand side of the HIV model.
pub fn hiv_rhs(p: &HivParams, x: &[f64], eta: f64) -> [f64; 3] {
    let infection = eta * x[0] * x[2];
    [
        p.lambda - p.rho * x[0] - infection,
        infection - p.delta * x[1],
        p.n * p.delta * x[1] - p.c * x[2],
    ]
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { hi } else { lo + step * i as f64 }).collect()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IndistReport {
    pub tau: f64,
    pub exp_rho_tau: f64,
    pub max_rel_output_dev: f64,
    pub max_rel_state_map_dev: f64,
    pub grid_size: usize,
    pub params: HivParams,
    pub params_prime: HivParams,
    pub init: [f64; 3],
    pub init_prime: [f64; 3],
    pub eta: EtaSignal,
    pub config: SimConfig,
}

/// The report together with both sampled trajectories.
#[derive(Debug, Clone)]
pub struct IndistRun {
    pub report: IndistReport,
    pub original: Trajectory,
    pub primed: Trajectory,
}

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

/// Co-integrates the original system and the member `tau` of the family as
/// one six-state system. The primed rate η' is computed at each stage from
/// the original states, and the primed start is the state map of `init`.
pub fn run_indistinguishability_full(
    params: &HivParams,
    init: [f64; 3],
    eta: &EtaSignal,
    tau: f64,
    cfg: &SimConfig,
) -> Result<IndistRun, SimError> {
    let family = TauFamily::new(params.clone(), tau)?;
    cfg.validate()?;
    check_values("initial state", &init, false)?;
    let grid = cfg.grid();
    eta.check_on(&grid)?;
    let primed_params = family.params_prime();
    let init_prime = family.state(&init);
    // η' must be defined at the start, before any step is taken.
    family.eta_prime(&init, eta.value(cfg.t0))?;

    let f = |t: f64, y: &[f64], out: &mut [f64]| {
        let e = eta.value(t);
        let x = [y[0], y[1], y[2]];
        // For u < 1 the member exists only while the mapped T_U stays
        // positive; η' has a pole where it reaches zero.
        if family.state(&x)[0] <= 0.0 {
            return Err(TransformError::SingularPoint.into());
        }
        let e_prime = family.eta_prime(&x, e)?;
        out[..3].copy_from_slice(&hiv_rhs(params, &x, e));
        out[3..].copy_from_slice(&hiv_rhs(&primed_params, &y[3..], e_prime));
        Ok(())
    };
    let y0 = [init[0], init[1], init[2], init_prime[0], init_prime[1], init_prime[2]];
    let (samples, stats) = solve(f, cfg.t0, &y0, &grid, cfg.step_mode())?;

    let mut out_dev: f64 = 0.0;
    let mut map_dev: f64 = 0.0;
    for s in &samples {
        let (x, xp) = (&s[..3], &s[3..]);
        out_dev = out_dev.max(rel_dev(xp[0] + xp[1], x[0] + x[1])).max(rel_dev(xp[2], x[2]));
        let mapped = family.state(&[x[0], x[1], x[2]]);
        for (a, b) in xp.iter().zip(mapped) {
            map_dev = map_dev.max(rel_dev(*a, b));
        }
    }

    let split = |range: std::ops::Range<usize>| -> Trajectory {
        let states: Vec<Vec<f64>> = samples.iter().map(|s| s[range.clone()].to_vec()).collect();
        Trajectory {
            state_names: vec!["T_U".into(), "T_I".into(), "V".into()],
            output_names: vec!["y1".into(), "y2".into()],
            outputs: states.iter().map(|x| vec![x[0] + x[1], x[2]]).collect(),
            states,
            times: grid.clone(),
            stats,
        }
    };
    let report = IndistReport {
        tau,
        exp_rho_tau: family.exp_rho_tau(),
        max_rel_output_dev: out_dev,
        max_rel_state_map_dev: map_dev,
        grid_size: grid.len(),
        params: params.clone(),
        params_prime: primed_params.clone(),
        init,
        init_prime,
        eta: eta.clone(),
        config: cfg.clone(),
    };
    Ok(IndistRun {
        report,
        original: split(0..3),
        primed: split(3..6),
    })
}

pub fn run_indistinguishability(
    params: &HivParams,
    init: [f64; 3],
    eta: &EtaSignal,
    tau: f64,
    cfg: &SimConfig,
) -> Result<IndistReport, SimError> {
    run_indistinguishability_full(params, init, eta, tau, cfg).map(|r| r.report)
}

/// One independent experiment per τ, in the order given.
pub fn sweep_indistinguishability(
    params: &HivParams,
    init: [f64; 3],
    eta: &EtaSignal,
    taus: &[f64],
    cfg: &SimConfig,
    exec: Execution,
) -> Vec<Result<IndistReport, SimError>> {
    map_ordered(taus.to_vec(), exec, |tau| run_indistinguishability(params, init, eta, tau, cfg))
}
