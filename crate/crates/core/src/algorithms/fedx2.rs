use rand::Rng;

use super::driver::{drive, initial_model, RunSetup};
use super::estimators::{fedx2_estimate, fedx2_u_update, momentum_update, sample_batch, score_batch, UTable};
use super::fedx1::{bootstrap_histories, check_model, check_staleness, gather, push_scores};
use super::{HistorySamples, HyperParams, Objective, UInit};
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::federation::{
    Buffer, FederatedClient, HistorySet, HistorySide, PairedRecord, RoundDownload, RoundUpload, ScoreRecord, URecord,
};
use crate::model::ParamVector;
use crate::rng::{substream, Purpose};
use crate::trace::{IterationRecord, RunTrace, TraceSink};

fn u_record(s: &ScoreRecord, value: f64) -> URecord {
    URecord {
        value,
        client: s.client,
        round: s.round,
        iteration: s.iteration,
        sample_id: s.sample_id,
    }
}

/// A FedX2 participant (nonlinear outer function, u-tracking, momentum).
///
/// Received positive scores and u-records are stored as pairs in one
/// buffer so a single shuffle keeps them aligned.
pub struct Fedx2Client<'a> {
    id: usize,
    shard: &'a ClientShard,
    objective: Objective,
    hyper: HyperParams,
    w: ParamVector,
    momentum: ParamVector,
    u: UTable,
    neg_buf: Buffer<ScoreRecord>,
    pos_buf: Buffer<PairedRecord>,
    log_iterations: bool,
    log: Vec<IterationRecord>,
    record_estimates: bool,
    estimates: Vec<ParamVector>,
}

impl<'a> Fedx2Client<'a> {
    pub fn new(id: usize, shard: &'a ClientShard, objective: Objective, hyper: HyperParams, w0: ParamVector) -> Self {
        let dim = w0.len();
        Fedx2Client {
            id,
            shard,
            objective,
            hyper,
            w: w0,
            momentum: ParamVector::zeros(dim),
            u: UTable::zeros(shard.pos.iter().map(|s| s.id)),
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

    /// Keep every raw estimate `G1 + G2` (before momentum).
    pub fn set_record_estimates(&mut self, on: bool) {
        self.record_estimates = on;
    }

    pub fn take_estimates(&mut self) -> Vec<ParamVector> {
        std::mem::take(&mut self.estimates)
    }

    pub fn u_table(&self) -> &UTable {
        &self.u
    }

    pub fn momentum(&self) -> &ParamVector {
        &self.momentum
    }

    fn step(
        &mut self,
        round: usize,
        k: usize,
        h1: &mut HistorySet,
        h2: &mut HistorySet,
        us: &mut Vec<URecord>,
    ) -> Result<()> {
        let hp = &self.hyper;
        let obj = &self.objective;
        let mut rng = substream(hp.seed, Purpose::LocalStep, self.id, round, k);
        let idx1 = sample_batch(&mut rng, self.shard.pos.len(), hp.b1)?;
        let idx2 = sample_batch(&mut rng, self.shard.neg.len(), hp.b2)?;
        let lazy2 = self.neg_buf.next(hp.b1)?;
        let paired = self.pos_buf.next(hp.b2)?;
        check_staleness(
            lazy2
                .iter()
                .map(|r| r.round)
                .chain(paired.iter().flat_map(|p| [p.score.round, p.u.round])),
            round,
        )?;

        let a1 = score_batch(&obj.scorer, &self.w, &gather(&self.shard.pos, &idx1))?;
        let a2 = score_batch(&obj.scorer, &self.w, &gather(&self.shard.neg, &idx2))?;

        let first = h1.records.len();
        match hp.history_samples {
            HistorySamples::Reuse => {
                push_scores(h1, self.id, round, k, &a1.ids, &a1.scores);
                push_scores(h2, self.id, round, k, &a2.ids, &a2.scores);
            }
            HistorySamples::Independent => {
                let hidx1 = sample_batch(&mut rng, self.shard.pos.len(), hp.b1)?;
                let hidx2 = sample_batch(&mut rng, self.shard.neg.len(), hp.b2)?;
                for (h, set, idx) in [(&mut *h1, &self.shard.pos, &hidx1), (&mut *h2, &self.shard.neg, &hidx2)] {
                    for &i in idx {
                        let s = &set[i];
                        let v = obj.scorer.score(&self.w, &s.features)?;
                        push_scores(h, self.id, round, k, &[s.id], &[v]);
                    }
                }
            }
        }

        let lazy2: Vec<f64> = lazy2.iter().map(|r| r.value).collect();
        let mut u1 = Vec::with_capacity(a1.len());
        for ((&id, &score), &neg) in a1.ids.iter().zip(&a1.scores).zip(&lazy2) {
            u1.push(fedx2_u_update(&obj.loss, &mut self.u, id, score, neg, hp.gamma)?);
        }
        for rec in &h1.records[first..] {
            us.push(u_record(rec, self.u.get(rec.sample_id)?));
        }

        let lazy1: Vec<f64> = paired.iter().map(|p| p.score.value).collect();
        let lazy_u: Vec<f64> = paired.iter().map(|p| p.u.value).collect();
        let g = fedx2_estimate(&obj.loss, &obj.outer, &a1, &u1, &a2, &lazy2, &lazy1, &lazy_u)?;
        momentum_update(&mut self.momentum, &g, hp.beta);
        let eta = hp.step_size(round, k);
        self.w.axpy(-eta, &self.momentum);
        check_model(&self.w, self.id, round, k)?;

        if self.log_iterations {
            let est = u1.iter().map(|&u| obj.outer.value(u)).sum::<f64>() / u1.len() as f64;
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

impl FederatedClient for Fedx2Client<'_> {
    fn id(&self) -> usize {
        self.id
    }

    /// Histories at `w0` plus `u0(z) = l(h(w0, z), h(w0, z'))` for each
    /// bootstrap positive, with `z'` a random bootstrap negative.
    fn bootstrap(&mut self) -> Result<RoundUpload> {
        let mut rng = substream(self.hyper.seed, Purpose::Bootstrap, self.id, 0, 0);
        let obj = self.objective;
        let (h1, h2) = bootstrap_histories(&mut rng, self.id, self.shard, &obj.scorer, &self.w, &self.hyper)?;
        let partner = |rng: &mut crate::rng::StreamRng| h2.records[rng.random_range(0..h2.records.len())].value;
        let u0: Vec<URecord> = h1
            .records
            .iter()
            .map(|r| u_record(r, obj.loss.loss(r.value, partner(&mut rng))))
            .collect();
        if self.hyper.u_init == UInit::Bootstrap {
            for s in &self.shard.pos {
                let a = obj.scorer.score(&self.w, &s.features)?;
                let v = obj.loss.loss(a, partner(&mut rng));
                self.u.set(s.id, v)?;
            }
        }
        Ok(RoundUpload {
            client: self.id,
            model: None,
            momentum: None,
            h1,
            h2,
            u: Some(u0),
        })
    }

    fn local_round(&mut self, round: usize) -> Result<RoundUpload> {
        let mut h1 = HistorySet::new(HistorySide::Positive);
        let mut h2 = HistorySet::new(HistorySide::Negative);
        let mut us = Vec::new();
        for k in 0..self.hyper.local_steps {
            self.step(round, k, &mut h1, &mut h2, &mut us)?;
        }
        Ok(RoundUpload {
            client: self.id,
            model: Some(self.w.clone()),
            momentum: Some(self.momentum.clone()),
            h1,
            h2,
            u: Some(us),
        })
    }

    fn apply_download(&mut self, round: usize, d: &RoundDownload) -> Result<()> {
        if let Some(m) = &d.model {
            self.w = m.clone();
        }
        if let Some(g) = &d.momentum {
            self.momentum = g.clone();
        }
        let p = d
            .p
            .as_ref()
            .ok_or_else(|| Error::protocol("download carries no u-records"))?;
        if p.len() != d.r1.records.len() {
            return Err(Error::protocol(format!(
                "{} u-records for {} positive scores",
                p.len(),
                d.r1.records.len()
            )));
        }
        let mut pairs = Vec::with_capacity(p.len());
        for (s, u) in d.r1.records.iter().zip(p) {
            if (s.client, s.round, s.iteration, s.sample_id) != (u.client, u.round, u.iteration, u.sample_id) {
                return Err(Error::protocol("u-record provenance does not match its score"));
            }
            pairs.push(PairedRecord { score: *s, u: *u });
        }
        let seed = self.hyper.seed;
        self.neg_buf.refill(d.r2.records.clone(), substream(seed, Purpose::BufferNeg, self.id, round, 0))?;
        self.pos_buf.refill(pairs, substream(seed, Purpose::BufferPos, self.id, round, 0))
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

/// FedX2 on `setup`; the outer function must be `kl_log`.
pub fn fedx2_run(setup: &RunSetup, sink: &mut dyn TraceSink) -> Result<RunTrace> {
    setup.validate()?;
    if setup.objective.outer.is_identity() {
        return Err(Error::config("outer.kind", "fedx2 requires the kl_log outer function"));
    }
    let w0 = initial_model(&setup.objective.scorer, &setup.hyper)?;
    let mut clients: Vec<Fedx2Client> = setup
        .data
        .clients
        .iter()
        .enumerate()
        .map(|(i, shard)| {
            let mut c = Fedx2Client::new(i, shard, setup.objective, setup.hyper.clone(), w0.clone());
            c.set_log_iterations(setup.plan.log_iterations);
            c
        })
        .collect();
    drive(setup, &mut clients, true, sink)
}
