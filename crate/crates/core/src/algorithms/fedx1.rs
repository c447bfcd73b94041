use rand::Rng;

use super::driver::{drive, initial_model, RunSetup};
use super::estimators::{fedx1_estimate, sample_batch, score_batch};
use super::{HyperParams, Objective};
use crate::data::{ClientShard, Sample};
use crate::error::{Error, Result};
use crate::federation::{
    Buffer, FederatedClient, HistorySet, HistorySide, RoundDownload, RoundUpload, ScoreRecord,
};
use crate::model::{ParamVector, ScorerSpec};
use crate::rng::{substream, Purpose};
use crate::trace::{IterationRecord, RunTrace, TraceSink};

pub(super) fn gather<'s>(samples: &'s [Sample], idx: &[usize]) -> Vec<&'s Sample> {
    idx.iter().map(|&i| &samples[i]).collect()
}

pub(super) fn push_scores(h: &mut HistorySet, client: usize, round: usize, iteration: usize, ids: &[u64], scores: &[f64]) {
    h.records.extend(ids.iter().zip(scores).map(|(&sample_id, &value)| ScoreRecord {
        value,
        client,
        round,
        iteration,
        sample_id,
    }));
}

/// Every lazy record used in round `r` must come from round `r - 1`.
pub(super) fn check_staleness(rounds: impl IntoIterator<Item = usize>, round: usize) -> Result<()> {
    for r in rounds {
        if r + 1 != round {
            return Err(Error::protocol(format!("record from round {r} consumed in round {round}")));
        }
    }
    Ok(())
}

pub(super) fn check_model(w: &ParamVector, client: usize, round: usize, k: usize) -> Result<()> {
    if w.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "client {client} model diverged at round {round}, iteration {k}"
        )))
    }
}

/// Round-0 histories: `K` minibatches of `B1` positives and `B2` negatives
/// scored at `w0`.
pub(super) fn bootstrap_histories<R: Rng>(
    rng: &mut R,
    client: usize,
    shard: &ClientShard,
    scorer: &ScorerSpec,
    w: &[f64],
    hyper: &HyperParams,
) -> Result<(HistorySet, HistorySet)> {
    let mut h1 = HistorySet::new(HistorySide::Positive);
    let mut h2 = HistorySet::new(HistorySide::Negative);
    for k in 0..hyper.local_steps {
        let idx1 = sample_batch(rng, shard.pos.len(), hyper.b1)?;
        let idx2 = sample_batch(rng, shard.neg.len(), hyper.b2)?;
        for (h, set, idx) in [(&mut h1, &shard.pos, &idx1), (&mut h2, &shard.neg, &idx2)] {
            for &i in idx {
                let s = &set[i];
                let value = scorer.score(w, &s.features)?;
                push_scores(h, client, 0, k, &[s.id], &[value]);
            }
        }
    }
    Ok((h1, h2))
}

/// A FedX1 participant (linear outer function).
///
/// The negative-score buffer supplies partners for local positives; the
/// positive-score buffer supplies partners for local negatives.
pub struct Fedx1Client<'a> {
    id: usize,
    shard: &'a ClientShard,
    objective: Objective,
    hyper: HyperParams,
    w: ParamVector,
    neg_buf: Buffer<ScoreRecord>,
    pos_buf: Buffer<ScoreRecord>,
    log_iterations: bool,
    log: Vec<IterationRecord>,
    record_estimates: bool,
    estimates: Vec<ParamVector>,
}

impl<'a> Fedx1Client<'a> {
    pub fn new(id: usize, shard: &'a ClientShard, objective: Objective, hyper: HyperParams, w0: ParamVector) -> Self {
        Fedx1Client {
            id,
            shard,
            objective,
            hyper,
            w: w0,
            neg_buf: Buffer::new(),
            pos_buf: Buffer::new(),
            log_iterations: false,
            log: Vec::new(),
            record_estimates: false,
            estimates: Vec::new(),
        }
    }

    pub fn set_log_iterations(&mut self, on: bool) {
        self.log_iterations = on;
    }

    /// Keep every gradient estimate this client forms (for statistical checks).
    pub fn set_record_estimates(&mut self, on: bool) {
        self.record_estimates = on;
    }

    pub fn take_estimates(&mut self) -> Vec<ParamVector> {
        std::mem::take(&mut self.estimates)
    }

    fn step(&mut self, round: usize, k: usize, h1: &mut HistorySet, h2: &mut HistorySet) -> Result<()> {
        let hp = &self.hyper;
        let obj = &self.objective;
        let mut rng = substream(hp.seed, Purpose::LocalStep, self.id, round, k);
        let idx1 = sample_batch(&mut rng, self.shard.pos.len(), hp.b1)?;
        let idx2 = sample_batch(&mut rng, self.shard.neg.len(), hp.b2)?;
        let lazy2 = self.neg_buf.next(hp.b1)?;
        let lazy1 = self.pos_buf.next(hp.b2)?;
        check_staleness(lazy2.iter().chain(&lazy1).map(|r| r.round), round)?;

        let a1 = score_batch(&obj.scorer, &self.w, &gather(&self.shard.pos, &idx1))?;
        let a2 = score_batch(&obj.scorer, &self.w, &gather(&self.shard.neg, &idx2))?;
        push_scores(h1, self.id, round, k, &a1.ids, &a1.scores);
        push_scores(h2, self.id, round, k, &a2.ids, &a2.scores);

        let lazy2: Vec<f64> = lazy2.iter().map(|r| r.value).collect();
        let lazy1: Vec<f64> = lazy1.iter().map(|r| r.value).collect();
        let g = fedx1_estimate(&obj.loss, &a1, &a2, &lazy2, &lazy1)?;
        let eta = hp.step_size(round, k);
        self.w.axpy(-eta, &g);
        check_model(&self.w, self.id, round, k)?;

        if self.log_iterations {
            let est = a1.scores.iter().zip(&lazy2).map(|(&a, &b)| obj.loss.loss(a, b)).sum::<f64>() / a1.len() as f64;
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

impl FederatedClient for Fedx1Client<'_> {
    fn id(&self) -> usize {
        self.id
    }

    fn bootstrap(&mut self) -> Result<RoundUpload> {
        let mut rng = substream(self.hyper.seed, Purpose::Bootstrap, self.id, 0, 0);
        let (h1, h2) = bootstrap_histories(&mut rng, self.id, self.shard, &self.objective.scorer, &self.w, &self.hyper)?;
        Ok(RoundUpload {
            client: self.id,
            model: None,
            momentum: None,
            h1,
            h2,
            u: None,
        })
    }

    fn local_round(&mut self, round: usize) -> Result<RoundUpload> {
        let mut h1 = HistorySet::new(HistorySide::Positive);
        let mut h2 = HistorySet::new(HistorySide::Negative);
        for k in 0..self.hyper.local_steps {
            self.step(round, k, &mut h1, &mut h2)?;
        }
        Ok(RoundUpload {
            client: self.id,
            model: Some(self.w.clone()),
            momentum: None,
            h1,
            h2,
            u: None,
        })
    }

    fn apply_download(&mut self, round: usize, d: &RoundDownload) -> Result<()> {
        if let Some(m) = &d.model {
            self.w = m.clone();
        }
        let seed = self.hyper.seed;
        self.neg_buf.refill(d.r2.records.clone(), substream(seed, Purpose::BufferNeg, self.id, round, 0))?;
        self.pos_buf.refill(d.r1.records.clone(), substream(seed, Purpose::BufferPos, self.id, round, 0))
    }

    fn model(&self) -> &ParamVector {
        &self.w
    }

    fn buffer_wraps(&self) -> usize {
        self.neg_buf.wraps() + self.pos_buf.wraps()
    }

    fn drain_iterations(&mut self) -> Vec<IterationRecord> {
        std::mem::take(&mut self.log)
    }
}

/// FedX1 on `setup`; the outer function must be the identity.
pub fn fedx1_run(setup: &RunSetup, sink: &mut dyn TraceSink) -> Result<RunTrace> {
    setup.validate()?;
    if !setup.objective.outer.is_identity() {
        return Err(Error::config("outer.kind", "fedx1 requires the identity outer function"));
    }
    let w0 = initial_model(&setup.objective.scorer, &setup.hyper)?;
    let mut clients: Vec<Fedx1Client> = setup
        .data
        .clients
        .iter()
        .enumerate()
        .map(|(i, shard)| {
            let mut c = Fedx1Client::new(i, shard, setup.objective, setup.hyper.clone(), w0.clone());
            c.set_log_iterations(setup.plan.log_iterations);
            c
        })
        .collect();
    drive(setup, &mut clients, true, sink)
}
