use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fedx::algorithms::{initial_model, HyperParams};
use fedx::data::{build, DataConfig};
use fedx::harness::{build_data, parse_config, run_with_sink};
use fedx::losses::{exact_grad_with, OuterFnSpec, PairwiseLossSpec};
use fedx::model::ScorerSpec;
use fedx::parallel::Executor;
use fedx::trace::NullSink;

fn executors() -> Vec<(&'static str, Executor)> {
    let mut out = vec![("serial", Executor::serial())];
    if let Ok(pool) = Executor::new(4) {
        if pool.is_parallel() {
            out.push(("pool4", pool));
        }
    }
    out
}

fn exact_gradient(c: &mut Criterion) {
    let data = build(&DataConfig {
        n_clients: 16,
        n_pos_per_client: 16,
        n_neg_per_client: 80,
        input_dim: 20,
        ..DataConfig::default()
    })
    .unwrap();
    let scorer = ScorerSpec::mlp1(20, 16);
    let w = initial_model(&scorer, &HyperParams::default()).unwrap();
    let (s1, s2) = data.train_sets();
    let loss = PairwiseLossSpec::KlOpauc { lambda: 2.0 };
    let outer = OuterFnSpec::kl_log(2.0);
    let mut group = c.benchmark_group("exact_grad");
    for (name, ex) in executors() {
        group.bench_function(name, |b| {
            b.iter(|| exact_grad_with(&ex, &loss, &outer, &scorer, black_box(&w), &s1, &s2).unwrap())
        });
    }
    group.finish();
}

fn fedx_rounds(c: &mut Criterion) {
    let text = "algorithm = fedx2\nloss.kind = kl_opauc\nloss.lambda = 2\nouter.kind = kl_log\n\
                scorer.kind = mlp1\nscorer.hidden_dim = 16\nhyper.R = 3\nhyper.K = 8\n\
                eval_every_rounds = 100\noracle_every_rounds = 100\n";
    let cfg = parse_config(text).unwrap();
    let data = build_data(&cfg).unwrap();
    let mut group = c.benchmark_group("fedx2_run");
    group.sample_size(10);
    for (name, ex) in executors() {
        group.bench_function(name, |b| b.iter(|| run_with_sink(&cfg, &data, &ex, &mut NullSink).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, exact_gradient, fedx_rounds);
criterion_main!(benches);
