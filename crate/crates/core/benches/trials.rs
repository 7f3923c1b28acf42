use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hiv_ident::model::hiv_model;
use hiv_ident::par::Execution;
use hiv_ident::ranktest::{PhiVariant, RankConfig, RankMode, RankProblem};
use hiv_ident::sim::{linspace, sweep_indistinguishability, EtaSignal, SimConfig};
use hiv_ident::transform::HivParams;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn rank_trials(c: &mut Criterion) {
    let problem = RankProblem::build(&hiv_model(), RankMode::Constrained, PhiVariant::Corrected).unwrap();
    let mut group = c.benchmark_group("rank_trials_constrained_x50");
    for (name, execution) in MODES {
        let cfg = RankConfig {
            trials: 50,
            seed: 7,
            execution,
            ..RankConfig::default()
        };
        group.bench_function(name, |b| b.iter(|| black_box(problem.run(&cfg).unwrap())));
    }
    group.finish();
}

fn tau_sweep(c: &mut Criterion) {
    let taus = linspace(-0.6, 1.5, 16);
    let eta = EtaSignal::constant(0.5);
    let cfg = SimConfig::default();
    let mut group = c.benchmark_group("tau_sweep_x16");
    group.sample_size(20);
    for (name, execution) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| black_box(sweep_indistinguishability(&HivParams::ones(), [2.0, 1.0, 1.0], &eta, &taus, &cfg, execution)))
        });
    }
    group.finish();
}

criterion_group!(benches, rank_trials, tau_sweep);
criterion_main!(benches);
