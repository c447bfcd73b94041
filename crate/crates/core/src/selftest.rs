//! Quick invariant checks for `fedx selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedx::algorithms::{fedx1_estimate, fedx2_estimate, momentum_update, score_batch};
use fedx::data::{Group, Sample};
use fedx::harness::{build_data, parse_config, run_with_sink};
use fedx::losses::{exact_grad, exact_objective, OuterFnSpec, PairwiseLossSpec};
use fedx::metrics::{auc, partial_auc, ScoredEval};
use fedx::model::{finite_diff_grad, ParamVector, ScorerSpec};
use fedx::parallel::Executor;
use fedx::trace::NullSink;

type Check = fn(&mut ChaCha8Rng) -> Result<(), String>;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(1e-12)
}

fn points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect()).collect()
}

fn gradient_oracle(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let combos = [
        (PairwiseLossSpec::PsmSigmoid, OuterFnSpec::Identity),
        (PairwiseLossSpec::Square, OuterFnSpec::Identity),
        (PairwiseLossSpec::KlOpauc { lambda: 2.0 }, OuterFnSpec::kl_log(2.0)),
    ];
    for (loss, outer) in combos {
        let sc = ScorerSpec::mlp1(3, 4);
        let s1 = points(rng, 5, 3);
        let s2 = points(rng, 6, 3);
        let (r1, r2): (Vec<&[f64]>, Vec<&[f64]>) = (s1.iter().map(|v| v.as_slice()).collect(), s2.iter().map(|v| v.as_slice()).collect());
        let w: Vec<f64> = (0..sc.param_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let g = exact_grad(&loss, &outer, &sc, &w, &r1, &r2).map_err(|e| e.to_string())?;
        let fd = finite_diff_grad(|w| exact_objective(&loss, &outer, &sc, w, &r1, &r2).unwrap(), &w, 1e-5);
        let e = rel_err(&g, &fd);
        if e > 1e-5 {
            return Err(format!("{} / {}: relative error {e:e}", loss.name(), outer.name()));
        }
    }
    Ok(())
}

fn identity_reduction(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let sc = ScorerSpec::linear(4);
    let w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mk = |xs: Vec<Vec<f64>>| -> Vec<Sample> {
        xs.into_iter()
            .enumerate()
            .map(|(i, x)| Sample { id: i as u64, features: x, group: Group::Positive, client: 0 })
            .collect()
    };
    let p = mk(points(rng, 3, 4));
    let n = mk(points(rng, 3, 4));
    let a1 = score_batch(&sc, &w, &p.iter().collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    let a2 = score_batch(&sc, &w, &n.iter().collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    let lazy = [0.1, -0.3, 0.7];
    let us = [0.5, 1.5, 2.5];
    let loss = PairwiseLossSpec::PsmSigmoid;
    let g1 = fedx1_estimate(&loss, &a1, &a2, &lazy, &lazy).map_err(|e| e.to_string())?;
    let g2 = fedx2_estimate(&loss, &OuterFnSpec::Identity, &a1, &us, &a2, &lazy, &lazy, &us).map_err(|e| e.to_string())?;
    if g1 != g2 {
        return Err("estimates differ".into());
    }
    Ok(())
}

fn momentum_closed_form(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let beta: f64 = rng.random_range(0.05..0.9);
    let g0 = vec![1.0, -2.0, 0.5];
    let raw = [0.25, 3.0, -1.0];
    let mut g = ParamVector::from(g0.clone());
    for _ in 0..25 {
        momentum_update(&mut g, &raw, beta);
    }
    let q = (1.0 - beta).powi(25);
    for j in 0..3 {
        let expect = q * g0[j] + (1.0 - q) * raw[j];
        if (g[j] - expect).abs() > 1e-12 {
            return Err(format!("coordinate {j}: {} vs {expect}", g[j]));
        }
    }
    Ok(())
}

fn metric_identities(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let pos: Vec<f64> = (0..40).map(|_| rng.random_range(0..8) as f64).collect();
    let neg: Vec<f64> = (0..50).map(|_| rng.random_range(0..8) as f64).collect();
    let mut wins = 0.0;
    for a in &pos {
        for b in &neg {
            wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
        }
    }
    let brute = wins / (pos.len() * neg.len()) as f64;
    let ev = ScoredEval::new(pos, neg);
    let a = auc(&ev).map_err(|e| e.to_string())?;
    let p = partial_auc(&ev, 1.0).map_err(|e| e.to_string())?;
    if a != brute || p != a {
        return Err(format!("auc {a}, brute force {brute}, pauc(1) {p}"));
    }
    Ok(())
}

fn accounting_and_replay(_rng: &mut ChaCha8Rng) -> Result<(), String> {
    let cfg = parse_config("data.n_clients = 3\nhyper.K = 2\nhyper.R = 2\nhyper.B1 = 3\nhyper.B2 = 3").map_err(|e| e.to_string())?;
    let data = build_data(&cfg).map_err(|e| e.to_string())?;
    let ex = Executor::serial();
    let t1 = run_with_sink(&cfg, &data, &ex, &mut NullSink).map_err(|e| e.to_string())?;
    let t2 = run_with_sink(&cfg, &data, &ex, &mut NullSink).map_err(|e| e.to_string())?;
    let d = cfg.scorer.param_count();
    let per_client = d + cfg.hyper.local_steps * (cfg.hyper.b1 + cfg.hyper.b2);
    for r in &t1.rounds[1..] {
        if r.uplink_floats != 3 * per_client || r.buffer_wraps != 0 {
            return Err(format!("round {}: uplink {} wraps {}", r.round, r.uplink_floats, r.buffer_wraps));
        }
    }
    let strip = |t: &fedx::trace::RunTrace| t.rounds.iter().map(|r| (r.objective, r.auc, r.uplink_floats)).collect::<Vec<_>>();
    if strip(&t1) != strip(&t2) {
        return Err("replay differs".into());
    }
    Ok(())
}

pub fn run_all() -> bool {
    let checks: [(&str, Check); 5] = [
        ("gradient oracle vs finite differences", gradient_oracle),
        ("identity outer reduces FedX2 to FedX1", identity_reduction),
        ("momentum closed form", momentum_closed_form),
        ("AUC brute force and pAUC at FPR 1", metric_identities),
        ("communication accounting and replay", accounting_and_replay),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let mut ok = true;
    for (name, check) in checks {
        match check(&mut rng) {
            Ok(()) => println!("PASS {name}"),
            Err(msg) => {
                ok = false;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    ok
}
