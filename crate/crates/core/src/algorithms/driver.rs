use std::time::Instant;

use rand_distr::{Distribution, Normal};

use super::{HyperParams, Objective};
use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::federation::{bootstrap_round, run_round, FederatedClient, InProcessTransport, RoundTraffic};
use crate::losses::{exact_grad_with, exact_objective_with};
use crate::metrics::{auc, partial_auc, ScoredEval};
use crate::model::{ParamVector, ScorerSpec};
use crate::parallel::Executor;
use crate::rng::{substream, Purpose};
use crate::trace::{RoundRecord, RunTrace, TraceSink};

/// What to evaluate and how often. Round 0 and the final round are always
/// evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPlan {
    /// AUC / pAUC cadence in rounds.
    pub eval_every: usize,
    /// Exact objective and gradient cadence in rounds.
    pub oracle_every: usize,
    pub pauc_fprs: Vec<f64>,
    pub log_iterations: bool,
}

impl Default for EvalPlan {
    fn default() -> Self {
        EvalPlan {
            eval_every: 1,
            oracle_every: 1,
            pauc_fprs: vec![0.3, 0.5],
            log_iterations: false,
        }
    }
}

impl EvalPlan {
    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(Error::config("eval_every_rounds", "must be positive"));
        }
        if self.oracle_every == 0 {
            return Err(Error::config("oracle_every_rounds", "must be positive"));
        }
        if self.pauc_fprs.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::config("pauc_fprs", "every FPR cap must lie in (0, 1]"));
        }
        Ok(())
    }

    fn due(every: usize, round: usize, last: usize) -> bool {
        round == 0 || round == last || round.is_multiple_of(every)
    }
}

/// Everything a single run needs besides the algorithm choice.
pub struct RunSetup<'a> {
    pub data: &'a FederatedDataset,
    pub objective: Objective,
    pub hyper: HyperParams,
    pub plan: EvalPlan,
    pub executor: &'a Executor,
}

impl RunSetup<'_> {
    pub(crate) fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.hyper.validate()?;
        self.plan.validate()?;
        if self.objective.scorer.input_dim != self.data.input_dim {
            return Err(Error::config(
                "scorer.input_dim",
                format!("scorer expects {} features, data has {}", self.objective.scorer.input_dim, self.data.input_dim),
            ));
        }
        if self.data.clients.iter().any(|c| c.pos.is_empty() || c.neg.is_empty()) {
            return Err(Error::invalid("every client needs at least one positive and one negative"));
        }
        Ok(())
    }
}

/// Common starting point `w0 ~ N(0, init_scale^2)` shared by all clients.
pub fn initial_model(scorer: &ScorerSpec, hyper: &HyperParams) -> Result<ParamVector> {
    let dist = Normal::new(0.0, hyper.init_scale).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = substream(hyper.seed, Purpose::ModelInit, 0, 0, 0);
    Ok(ParamVector::from(
        (0..scorer.param_count()).map(|_| dist.sample(&mut rng)).collect::<Vec<_>>(),
    ))
}

fn evaluate(setup: &RunSetup, w: &[f64], round: usize, last: usize, s1: &[&[f64]], s2: &[&[f64]]) -> Result<RoundRecord> {
    let ex = setup.executor;
    let obj = &setup.objective;
    let mut rec = RoundRecord {
        round,
        wall_seconds: 0.0,
        objective: None,
        grad_norm_sq: None,
        auc: None,
        pauc: vec![None; setup.plan.pauc_fprs.len()],
        uplink_floats: 0,
        downlink_floats: 0,
        buffer_wraps: 0,
    };
    if EvalPlan::due(setup.plan.oracle_every, round, last) {
        rec.objective = Some(exact_objective_with(ex, &obj.loss, &obj.outer, &obj.scorer, w, s1, s2)?);
        rec.grad_norm_sq = Some(exact_grad_with(ex, &obj.loss, &obj.outer, &obj.scorer, w, s1, s2)?.norm_sq());
    }
    if EvalPlan::due(setup.plan.eval_every, round, last) {
        let eval = &setup.data.eval;
        let score = |xs: &[Vec<f64>]| -> Result<Vec<f64>> {
            ex.map_range(xs.len(), |i| obj.scorer.score(w, &xs[i])).into_iter().collect()
        };
        let scored = ScoredEval::new(score(&eval.pos)?, score(&eval.neg)?);
        rec.auc = Some(auc(&scored)?);
        for (slot, fpr) in rec.pauc.iter_mut().zip(&setup.plan.pauc_fprs) {
            *slot = Some(partial_auc(&scored, *fpr)?);
        }
    }
    Ok(rec)
}

/// Bootstrap, then `R` rounds; one trace record per round including round 0.
pub(crate) fn drive<C: FederatedClient>(
    setup: &RunSetup,
    clients: &mut [C],
    count_comm: bool,
    sink: &mut dyn TraceSink,
) -> Result<RunTrace> {
    let start = Instant::now();
    let ex = setup.executor;
    let (s1, s2) = setup.data.train_sets();
    let last = setup.hyper.rounds;
    let mut transport = InProcessTransport::new(clients.len());
    let mut trace = RunTrace {
        pauc_fprs: setup.plan.pauc_fprs.clone(),
        ..RunTrace::default()
    };
    let mut wraps_before = 0;

    for round in 0..=last {
        let traffic = if round == 0 {
            bootstrap_round(ex, clients, &mut transport)?
        } else {
            run_round(ex, clients, &mut transport, round)?
        };
        let traffic = if count_comm { traffic } else { RoundTraffic::default() };
        for c in clients.iter_mut() {
            for it in c.drain_iterations() {
                sink.iteration(&it)?;
                trace.iterations.push(it);
            }
        }
        let w = clients[0].model().clone();
        if !w.is_finite() {
            return Err(Error::NonFinite(format!("averaged model is not finite after round {round}")));
        }
        let mut rec = evaluate(setup, &w, round, last, &s1, &s2)?;
        let wraps: usize = clients.iter().map(|c| c.buffer_wraps()).sum();
        rec.buffer_wraps = wraps - wraps_before;
        wraps_before = wraps;
        rec.uplink_floats = traffic.uplink_floats;
        rec.downlink_floats = traffic.downlink_floats;
        rec.wall_seconds = start.elapsed().as_secs_f64();
        sink.round(&rec)?;
        trace.rounds.push(rec);
    }
    Ok(trace)
}
