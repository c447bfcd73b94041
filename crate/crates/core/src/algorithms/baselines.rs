//! Baselines: Local SGD (per-sample logistic loss), Local Pair (pairwise
//! updates on local pairs only) and Centralized (one worker, all data).

use rand::Rng;

use super::driver::{drive, initial_model, RunSetup};
use super::estimators::{
    fedx1_estimate, fedx2_estimate, fedx2_u_update, momentum_update, sample_batch, score_batch, ActiveBatch, UTable,
};
use super::fedx1::{check_model, gather};
use super::{HyperParams, Objective, UInit};
use crate::data::ClientShard;
use crate::error::Result;
use crate::federation::{FederatedClient, RoundDownload, RoundUpload};
use crate::losses::logistic_dscore;
use crate::model::ParamVector;
use crate::rng::{substream, Purpose};
use crate::trace::{IterationRecord, RunTrace, TraceSink};

fn model_only_bootstrap(id: usize) -> RoundUpload {
    let mut up = RoundUpload::model_only(id, ParamVector::zeros(0), None);
    up.model = None;
    up
}

/// Mean logistic-loss gradient over a positive and a negative minibatch.
pub fn logistic_batch_grad(a1: &ActiveBatch, a2: &ActiveBatch) -> ParamVector {
    let mut g = vec![0.0; a1.dim];
    for (a, positive) in [(a1, true), (a2, false)] {
        for m in 0..a.len() {
            let c = logistic_dscore(a.scores[m], positive);
            for (x, v) in g.iter_mut().zip(a.grad(m)) {
                *x += c * v;
            }
        }
    }
    let n = (a1.len() + a2.len()) as f64;
    g.iter_mut().for_each(|x| *x /= n);
    ParamVector::from(g)
}

/// Local SGD on the per-sample logistic loss, models averaged every round.
pub struct LocalSgdClient<'a> {
    id: usize,
    shard: &'a ClientShard,
    objective: Objective,
    hyper: HyperParams,
    w: ParamVector,
    log_iterations: bool,
    log: Vec<IterationRecord>,
}

impl<'a> LocalSgdClient<'a> {
    pub fn new(id: usize, shard: &'a ClientShard, objective: Objective, hyper: HyperParams, w0: ParamVector) -> Self {
        LocalSgdClient {
            id,
            shard,
            objective,
            hyper,
            w: w0,
            log_iterations: false,
            log: Vec::new(),
        }
    }

    pub fn set_log_iterations(&mut self, on: bool) {
        self.log_iterations = on;
    }
}

impl FederatedClient for LocalSgdClient<'_> {
    fn id(&self) -> usize {
        self.id
    }

    fn bootstrap(&mut self) -> Result<RoundUpload> {
        Ok(model_only_bootstrap(self.id))
    }

    fn local_round(&mut self, round: usize) -> Result<RoundUpload> {
        let hp = &self.hyper;
        for k in 0..hp.local_steps {
            let mut rng = substream(hp.seed, Purpose::LocalStep, self.id, round, k);
            let idx1 = sample_batch(&mut rng, self.shard.pos.len(), hp.b1)?;
            let idx2 = sample_batch(&mut rng, self.shard.neg.len(), hp.b2)?;
            let a1 = score_batch(&self.objective.scorer, &self.w, &gather(&self.shard.pos, &idx1))?;
            let a2 = score_batch(&self.objective.scorer, &self.w, &gather(&self.shard.neg, &idx2))?;
            let g = logistic_batch_grad(&a1, &a2);
            let eta = hp.step_size(round, k);
            self.w.axpy(-eta, &g);
            check_model(&self.w, self.id, round, k)?;
            if self.log_iterations {
                let l = a1.scores.iter().map(|&s| crate::losses::logistic_loss(s, true)).sum::<f64>()
                    + a2.scores.iter().map(|&s| crate::losses::logistic_loss(s, false)).sum::<f64>();
                self.log.push(IterationRecord {
                    client: self.id,
                    round,
                    iteration: k,
                    loss_estimate: l / (a1.len() + a2.len()) as f64,
                    step_size: eta,
                });
            }
        }
        Ok(RoundUpload::model_only(self.id, self.w.clone(), None))
    }

    fn apply_download(&mut self, _round: usize, d: &RoundDownload) -> Result<()> {
        if let Some(m) = &d.model {
            self.w = m.clone();
        }
        Ok(())
    }

    fn model(&self) -> &ParamVector {
        &self.w
    }

    fn buffer_wraps(&self) -> usize {
        0
    }

    fn drain_iterations(&mut self) -> Vec<IterationRecord> {
        std::mem::take(&mut self.log)
    }
}

/// Pairwise updates using only pairs formed inside one client's minibatch.
///
/// The partner of the `m`-th positive is the `(m mod B2)`-th negative of the
/// same iteration and vice versa. With a nonlinear outer function the update
/// tracks u and uses momentum; with the identity it is plain pairwise SGD.
/// Averaged every `K` steps when federated; with one client over all data it
/// is the centralized baseline.
pub struct LocalPairClient<'a> {
    id: usize,
    shard: &'a ClientShard,
    objective: Objective,
    hyper: HyperParams,
    w: ParamVector,
    momentum: Option<ParamVector>,
    u: Option<UTable>,
    log_iterations: bool,
    log: Vec<IterationRecord>,
    record_estimates: bool,
    estimates: Vec<ParamVector>,
}

impl<'a> LocalPairClient<'a> {
    pub fn new(id: usize, shard: &'a ClientShard, objective: Objective, hyper: HyperParams, w0: ParamVector) -> Self {
        let nonlinear = !objective.outer.is_identity();
        let dim = w0.len();
        LocalPairClient {
            id,
            shard,
            objective,
            hyper,
            w: w0,
            momentum: nonlinear.then(|| ParamVector::zeros(dim)),
            u: nonlinear.then(|| UTable::zeros(shard.pos.iter().map(|s| s.id))),
            log_iterations: false,
            log: Vec::new(),
            record_estimates: false,
            estimates: Vec::new(),
        }
    }

    pub fn set_log_iterations(&mut self, on: bool) {
        self.log_iterations = on;
    }

    pub fn set_record_estimates(&mut self, on: bool) {
        self.record_estimates = on;
    }

    pub fn take_estimates(&mut self) -> Vec<ParamVector> {
        std::mem::take(&mut self.estimates)
    }

    fn step(&mut self, round: usize, k: usize) -> Result<()> {
        let hp = &self.hyper;
        let obj = &self.objective;
        let mut rng = substream(hp.seed, Purpose::LocalStep, self.id, round, k);
        let idx1 = sample_batch(&mut rng, self.shard.pos.len(), hp.b1)?;
        let idx2 = sample_batch(&mut rng, self.shard.neg.len(), hp.b2)?;
        let a1 = score_batch(&obj.scorer, &self.w, &gather(&self.shard.pos, &idx1))?;
        let a2 = score_batch(&obj.scorer, &self.w, &gather(&self.shard.neg, &idx2))?;
        let partner_neg: Vec<f64> = (0..a1.len()).map(|m| a2.scores[m % a2.len()]).collect();
        let partner_pos: Vec<f64> = (0..a2.len()).map(|m| a1.scores[m % a1.len()]).collect();
        let eta = hp.step_size(round, k);

        let (g, est) = match (self.u.as_mut(), self.momentum.as_mut()) {
            (Some(u), Some(mom)) => {
                let mut u1 = Vec::with_capacity(a1.len());
                for ((&id, &score), &neg) in a1.ids.iter().zip(&a1.scores).zip(&partner_neg) {
                    u1.push(fedx2_u_update(&obj.loss, u, id, score, neg, hp.gamma)?);
                }
                let partner_u = (0..a2.len())
                    .map(|m| u.get(a1.ids[m % a1.len()]))
                    .collect::<Result<Vec<_>>>()?;
                let g = fedx2_estimate(&obj.loss, &obj.outer, &a1, &u1, &a2, &partner_neg, &partner_pos, &partner_u)?;
                momentum_update(mom, &g, hp.beta);
                self.w.axpy(-eta, mom);
                let est = u1.iter().map(|&v| obj.outer.value(v)).sum::<f64>() / u1.len() as f64;
                (g, est)
            }
            _ => {
                let g = fedx1_estimate(&obj.loss, &a1, &a2, &partner_neg, &partner_pos)?;
                self.w.axpy(-eta, &g);
                let est = (0..a1.len()).map(|m| obj.loss.loss(a1.scores[m], partner_neg[m])).sum::<f64>()
                    / a1.len() as f64;
                (g, est)
            }
        };
        check_model(&self.w, self.id, round, k)?;
        if self.log_iterations {
            self.log.push(IterationRecord {
                client: self.id,
                round,
                iteration: k,
                loss_estimate: est,
                step_size: eta,
            });
        }
        if self.record_estimates {
            self.estimates.push(g);
        }
        Ok(())
    }
}

impl FederatedClient for LocalPairClient<'_> {
    fn id(&self) -> usize {
        self.id
    }

    fn bootstrap(&mut self) -> Result<RoundUpload> {
        if let (Some(u), UInit::Bootstrap) = (self.u.as_mut(), self.hyper.u_init) {
            let obj = &self.objective;
            let mut rng = substream(self.hyper.seed, Purpose::Bootstrap, self.id, 0, 0);
            for s in &self.shard.pos {
                let z2 = &self.shard.neg[rng.random_range(0..self.shard.neg.len())];
                let a = obj.scorer.score(&self.w, &s.features)?;
                let b = obj.scorer.score(&self.w, &z2.features)?;
                u.set(s.id, obj.loss.loss(a, b))?;
            }
        }
        Ok(model_only_bootstrap(self.id))
    }

    fn local_round(&mut self, round: usize) -> Result<RoundUpload> {
        for k in 0..self.hyper.local_steps {
            self.step(round, k)?;
        }
        Ok(RoundUpload::model_only(self.id, self.w.clone(), self.momentum.clone()))
    }

    fn apply_download(&mut self, _round: usize, d: &RoundDownload) -> Result<()> {
        if let Some(m) = &d.model {
            self.w = m.clone();
        }
        if let (Some(g), Some(mom)) = (&d.momentum, self.momentum.as_mut()) {
            *mom = g.clone();
        }
        Ok(())
    }

    fn model(&self) -> &ParamVector {
        &self.w
    }

    fn buffer_wraps(&self) -> usize {
        0
    }

    fn drain_iterations(&mut self) -> Vec<IterationRecord> {
        std::mem::take(&mut self.log)
    }
}

fn clients_for<'a, C>(
    setup: &RunSetup,
    shards: impl Iterator<Item = &'a ClientShard>,
    make: impl Fn(usize, &'a ClientShard, ParamVector) -> C,
) -> Result<Vec<C>> {
    let w0 = initial_model(&setup.objective.scorer, &setup.hyper)?;
    Ok(shards.enumerate().map(|(i, s)| make(i, s, w0.clone())).collect())
}

/// Local SGD with logistic loss. The pairwise loss and outer function of
/// `setup` are used only for the reported objective.
pub fn local_sgd_run(setup: &RunSetup, sink: &mut dyn TraceSink) -> Result<RunTrace> {
    setup.validate()?;
    let mut clients = clients_for(setup, setup.data.clients.iter(), |i, s, w0| {
        let mut c = LocalSgdClient::new(i, s, setup.objective, setup.hyper.clone(), w0);
        c.set_log_iterations(setup.plan.log_iterations);
        c
    })?;
    drive(setup, &mut clients, true, sink)
}

pub fn local_pair_run(setup: &RunSetup, sink: &mut dyn TraceSink) -> Result<RunTrace> {
    setup.validate()?;
    let mut clients = clients_for(setup, setup.data.clients.iter(), |i, s, w0| {
        let mut c = LocalPairClient::new(i, s, setup.objective, setup.hyper.clone(), w0);
        c.set_log_iterations(setup.plan.log_iterations);
        c
    })?;
    drive(setup, &mut clients, true, sink)
}

/// One worker over the union of all shards; nothing is communicated. A
/// "round" is `K` consecutive steps so traces line up with federated runs.
pub fn centralized_run(setup: &RunSetup, sink: &mut dyn TraceSink) -> Result<RunTrace> {
    setup.validate()?;
    let union = setup.data.union_shard();
    let mut clients = clients_for(setup, std::iter::once(&union), |i, s, w0| {
        let mut c = LocalPairClient::new(i, s, setup.objective, setup.hyper.clone(), w0);
        c.set_log_iterations(setup.plan.log_iterations);
        c
    })?;
    drive(setup, &mut clients, false, sink)
}
