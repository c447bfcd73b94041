//! Round-based communication fabric: score histories, shuffled buffers,
//! server aggregation, message accounting and the transport contract.
//!
//! A round is: every client runs its local steps and produces a
//! [`RoundUpload`]; the transport delivers all uploads to the server
//! (barrier); the server builds one [`RoundDownload`]; every client applies
//! it. No client starts round `r + 1` before all round-`r` uploads are
//! aggregated.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::parallel::{tree_sum_vectors, Executor};
use crate::rng::StreamRng;
use crate::trace::IterationRecord;

/// A prediction score computed on some client, with its provenance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreRecord {
    pub value: f64,
    pub client: usize,
    pub round: usize,
    pub iteration: usize,
    pub sample_id: u64,
}

/// A moving-average inner estimate `u(z)` for a positive sample, with provenance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct URecord {
    pub value: f64,
    pub client: usize,
    pub round: usize,
    pub iteration: usize,
    pub sample_id: u64,
}

/// Positive-side score and its u-estimate, drawn together so both share
/// the same provenance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedRecord {
    pub score: ScoreRecord,
    pub u: URecord,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistorySide {
    /// Scores of S1 samples.
    Positive,
    /// Scores of S2 samples.
    Negative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistorySet {
    pub side: HistorySide,
    pub records: Vec<ScoreRecord>,
}

impl HistorySet {
    pub fn new(side: HistorySide) -> Self {
        HistorySet {
            side,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Client-side queue of received records, consumed sequentially after a
/// shuffle. Exhausting it mid-draw reshuffles the same entries and counts a
/// wrap.
#[derive(Clone, Debug)]
pub struct Buffer<T> {
    entries: Vec<T>,
    cursor: usize,
    rng: Option<StreamRng>,
    wraps: usize,
}

impl<T> Default for Buffer<T> {
    fn default() -> Self {
        Buffer {
            entries: Vec::new(),
            cursor: 0,
            rng: None,
            wraps: 0,
        }
    }
}

impl<T: Clone> Buffer<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Flush, then load a Fisher-Yates permutation of `received` drawn from `rng`.
    pub fn refill(&mut self, received: Vec<T>, mut rng: StreamRng) -> Result<()> {
        if received.is_empty() {
            return Err(Error::protocol("buffer refill with an empty aggregate"));
        }
        self.entries = received;
        self.entries.shuffle(&mut rng);
        self.cursor = 0;
        self.rng = Some(rng);
        Ok(())
    }

    pub fn next(&mut self, count: usize) -> Result<Vec<T>> {
        let Some(rng) = self.rng.as_mut() else {
            return Err(Error::protocol("draw from a buffer that was never refilled"));
        };
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            if self.cursor == self.entries.len() {
                self.entries.shuffle(rng);
                self.cursor = 0;
                self.wraps += 1;
            }
            out.push(self.entries[self.cursor].clone());
            self.cursor += 1;
        }
        Ok(out)
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Cumulative number of reshuffles forced by exhaustion.
    pub fn wraps(&self) -> usize {
        self.wraps
    }
}

/// What one client sends at the end of a round.
///
/// `model` is absent only in the round-0 bootstrap exchange, which carries
/// histories alone.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundUpload {
    pub client: usize,
    pub model: Option<ParamVector>,
    pub momentum: Option<ParamVector>,
    pub h1: HistorySet,
    pub h2: HistorySet,
    pub u: Option<Vec<URecord>>,
}

impl RoundUpload {
    pub fn model_only(client: usize, model: ParamVector, momentum: Option<ParamVector>) -> Self {
        RoundUpload {
            client,
            model: Some(model),
            momentum,
            h1: HistorySet::new(HistorySide::Positive),
            h2: HistorySet::new(HistorySide::Negative),
            u: None,
        }
    }
}

/// What the server broadcasts to every client.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundDownload {
    pub model: Option<ParamVector>,
    pub momentum: Option<ParamVector>,
    pub r1: HistorySet,
    pub r2: HistorySet,
    pub p: Option<Vec<URecord>>,
}

fn tree_mean(vectors: &[&ParamVector]) -> Result<ParamVector> {
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::protocol("uploaded vectors differ in length"));
    }
    let refs: Vec<&[f64]> = vectors.iter().map(|v| v.as_ref()).collect();
    let mut sum = tree_sum_vectors(&refs, dim);
    let n = vectors.len() as f64;
    for v in &mut sum {
        *v /= n;
    }
    Ok(ParamVector::from(sum))
}

fn mean_of_optional<'a>(
    what: &str,
    items: impl Iterator<Item = Option<&'a ParamVector>>,
) -> Result<Option<ParamVector>> {
    let items: Vec<Option<&ParamVector>> = items.collect();
    if items.iter().all(Option::is_none) {
        return Ok(None);
    }
    let present: Vec<&ParamVector> = items.iter().flatten().copied().collect();
    if present.len() != items.len() {
        return Err(Error::protocol(format!("{what} missing from some uploads")));
    }
    tree_mean(&present).map(Some)
}

/// Average models (and momenta), concatenate histories and u-records in
/// client-index order. Arrival order does not matter.
pub fn server_aggregate(mut uploads: Vec<RoundUpload>, n_clients: usize) -> Result<RoundDownload> {
    if uploads.len() != n_clients {
        return Err(Error::protocol(format!(
            "expected {n_clients} uploads, got {}",
            uploads.len()
        )));
    }
    uploads.sort_by_key(|u| u.client);
    for (i, u) in uploads.iter().enumerate() {
        if u.client != i {
            return Err(Error::protocol(format!("missing or duplicate upload for client {i}")));
        }
        if u.h1.side != HistorySide::Positive || u.h2.side != HistorySide::Negative {
            return Err(Error::protocol("history sides swapped"));
        }
    }
    let model = mean_of_optional("model", uploads.iter().map(|u| u.model.as_ref()))?;
    let momentum = mean_of_optional("momentum", uploads.iter().map(|u| u.momentum.as_ref()))?;

    let mut r1 = HistorySet::new(HistorySide::Positive);
    let mut r2 = HistorySet::new(HistorySide::Negative);
    let with_u = uploads.iter().filter(|u| u.u.is_some()).count();
    if with_u != 0 && with_u != uploads.len() {
        return Err(Error::protocol("u-records missing from some uploads"));
    }
    let mut p = (with_u > 0).then(Vec::new);
    for u in uploads {
        r1.records.extend(u.h1.records);
        r2.records.extend(u.h2.records);
        if let (Some(p), Some(recs)) = (p.as_mut(), u.u) {
            p.extend(recs);
        }
    }
    Ok(RoundDownload {
        model,
        momentum,
        r1,
        r2,
        p,
    })
}

/// Number of reals (and provenance integers) in one client's messages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommCost {
    pub uplink_floats: usize,
    pub downlink_floats: usize,
    pub uplink_ints: usize,
    pub downlink_ints: usize,
}

/// Provenance integers per record: client, round, iteration, sample id.
pub const PROVENANCE_INTS: usize = 4;

fn vec_len(v: &Option<ParamVector>) -> usize {
    v.as_ref().map_or(0, |v| v.len())
}

pub fn comm_cost(upload: &RoundUpload, download: &RoundDownload) -> CommCost {
    let up_records = upload.h1.len() + upload.h2.len() + upload.u.as_ref().map_or(0, Vec::len);
    let down_records = download.r1.len() + download.r2.len() + download.p.as_ref().map_or(0, Vec::len);
    CommCost {
        uplink_floats: vec_len(&upload.model) + vec_len(&upload.momentum) + up_records,
        downlink_floats: vec_len(&download.model) + vec_len(&download.momentum) + down_records,
        uplink_ints: PROVENANCE_INTS * up_records,
        downlink_ints: PROVENANCE_INTS * down_records,
    }
}

/// Delivery contract: all uploads in, one aggregated download out.
pub trait Transport {
    fn exchange(&mut self, uploads: Vec<RoundUpload>) -> Result<RoundDownload>;
}

/// In-process delivery. Optionally permutes arrival order to exercise the
/// server's order invariance.
pub struct InProcessTransport {
    n_clients: usize,
    arrival: Option<StreamRng>,
}

impl InProcessTransport {
    pub fn new(n_clients: usize) -> Self {
        InProcessTransport {
            n_clients,
            arrival: None,
        }
    }

    pub fn with_shuffled_arrival(n_clients: usize, seed: u64) -> Self {
        InProcessTransport {
            n_clients,
            arrival: Some(StreamRng::seed_from_u64(seed)),
        }
    }
}

impl Transport for InProcessTransport {
    fn exchange(&mut self, mut uploads: Vec<RoundUpload>) -> Result<RoundDownload> {
        if let Some(rng) = self.arrival.as_mut() {
            uploads.shuffle(rng);
        }
        server_aggregate(uploads, self.n_clients)
    }
}

/// One participant in the federation.
pub trait FederatedClient: Send {
    fn id(&self) -> usize;
    /// Round-0 histories computed at the initial model.
    fn bootstrap(&mut self) -> Result<RoundUpload>;
    /// Run the local steps of `round` (1-based) and produce the upload.
    fn local_round(&mut self, round: usize) -> Result<RoundUpload>;
    /// Adopt the server's broadcast at the end of `round` (0 for bootstrap).
    fn apply_download(&mut self, round: usize, download: &RoundDownload) -> Result<()>;
    fn model(&self) -> &ParamVector;
    /// Cumulative buffer wraps across all of this client's buffers.
    fn buffer_wraps(&self) -> usize;
    /// Per-iteration log entries since the last call, if logging is on.
    fn drain_iterations(&mut self) -> Vec<IterationRecord> {
        Vec::new()
    }
}

/// Traffic summed over all clients for one exchange.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RoundTraffic {
    pub uplink_floats: usize,
    pub downlink_floats: usize,
    pub uplink_ints: usize,
    pub downlink_ints: usize,
    /// Per-client cost of client 0, for per-client accounting checks.
    pub per_client: CommCost,
}

fn exchange_all<C: FederatedClient>(
    ex: &Executor,
    clients: &mut [C],
    transport: &mut dyn Transport,
    round: usize,
    uploads: Vec<RoundUpload>,
) -> Result<RoundTraffic> {
    let mut sorted = uploads;
    sorted.sort_by_key(|u| u.client);
    let download = transport.exchange(sorted.clone())?;
    let mut traffic = RoundTraffic::default();
    for (i, up) in sorted.iter().enumerate() {
        let c = comm_cost(up, &download);
        if i == 0 {
            traffic.per_client = c;
        }
        traffic.uplink_floats += c.uplink_floats;
        traffic.downlink_floats += c.downlink_floats;
        traffic.uplink_ints += c.uplink_ints;
        traffic.downlink_ints += c.downlink_ints;
    }
    ex.map_mut(clients, |c| c.apply_download(round, &download))
        .into_iter()
        .collect::<Result<Vec<()>>>()?;
    Ok(traffic)
}

/// Round 0: exchange the bootstrap histories.
pub fn bootstrap_round<C: FederatedClient>(
    ex: &Executor,
    clients: &mut [C],
    transport: &mut dyn Transport,
) -> Result<RoundTraffic> {
    let uploads = ex
        .map_mut(clients, |c| c.bootstrap())
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    exchange_all(ex, clients, transport, 0, uploads)
}

/// Local steps on every client, then upload, aggregate and download.
/// A failure anywhere aborts the round before any client applies a download.
pub fn run_round<C: FederatedClient>(
    ex: &Executor,
    clients: &mut [C],
    transport: &mut dyn Transport,
    round: usize,
) -> Result<RoundTraffic> {
    let uploads = ex
        .map_mut(clients, |c| c.local_round(round))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    exchange_all(ex, clients, transport, round, uploads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};

    fn rec(value: f64, client: usize, iteration: usize) -> ScoreRecord {
        ScoreRecord {
            value,
            client,
            round: 0,
            iteration,
            sample_id: (client * 100 + iteration) as u64,
        }
    }

    fn upload(client: usize, model: Vec<f64>, k: usize) -> RoundUpload {
        let mut h1 = HistorySet::new(HistorySide::Positive);
        let mut h2 = HistorySet::new(HistorySide::Negative);
        for t in 0..k {
            h1.records.push(rec(t as f64, client, t));
            h2.records.push(rec(-(t as f64), client, t));
        }
        RoundUpload {
            client,
            model: Some(model.into()),
            momentum: None,
            h1,
            h2,
            u: None,
        }
    }

    fn rng(i: usize) -> StreamRng {
        substream(5, Purpose::BufferNeg, i, 0, 0)
    }

    #[test]
    fn aggregate_single_and_pair() {
        let d = server_aggregate(vec![upload(0, vec![1.5, -2.0], 2)], 1).unwrap();
        assert_eq!(d.model.unwrap().to_vec(), vec![1.5, -2.0]);

        let d = server_aggregate(vec![upload(1, vec![2.0, 4.0], 1), upload(0, vec![0.0, 0.0], 1)], 2).unwrap();
        assert_eq!(d.model.unwrap().to_vec(), vec![1.0, 2.0]);
        assert_eq!(d.r1.records[0].client, 0);
    }

    #[test]
    fn aggregate_union_cardinality_and_order() {
        let k = 4;
        let ups = vec![upload(2, vec![0.0], k), upload(0, vec![0.0], k), upload(1, vec![0.0], k)];
        let d = server_aggregate(ups, 3).unwrap();
        assert_eq!(d.r1.len(), 3 * k);
        assert_eq!(d.r2.len(), 3 * k);
        let clients: Vec<usize> = d.r1.records.iter().map(|r| r.client).collect();
        assert_eq!(clients, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
        assert!(d.p.is_none());
    }

    #[test]
    fn aggregate_protocol_errors() {
        assert!(matches!(server_aggregate(vec![upload(0, vec![0.0], 1)], 2), Err(Error::Protocol(_))));
        assert!(server_aggregate(vec![upload(0, vec![0.0], 1), upload(0, vec![0.0], 1)], 2).is_err());
        assert!(server_aggregate(vec![upload(0, vec![0.0], 1), upload(1, vec![0.0, 1.0], 1)], 2).is_err());
        let mut with_u = upload(1, vec![0.0], 1);
        with_u.u = Some(vec![]);
        assert!(server_aggregate(vec![upload(0, vec![0.0], 1), with_u], 2).is_err());
    }

    #[test]
    fn aggregation_ignores_arrival_order() {
        let ups: Vec<RoundUpload> = (0..5).map(|i| upload(i, vec![i as f64 * 0.1, 1.0 / (i as f64 + 3.0)], 3)).collect();
        let base = InProcessTransport::new(5).exchange(ups.clone()).unwrap();
        for seed in 0..10 {
            let shuffled = InProcessTransport::with_shuffled_arrival(5, seed).exchange(ups.clone()).unwrap();
            assert_eq!(shuffled, base);
        }
    }

    #[test]
    fn buffer_single_entry() {
        let mut b = Buffer::new();
        b.refill(vec![rec(1.0, 0, 0)], rng(0)).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.cursor(), 0);
    }

    #[test]
    fn buffer_refill_is_deterministic_permutation() {
        let items: Vec<u32> = (0..52).collect();
        let mut a = Buffer::new();
        let mut b = Buffer::new();
        a.refill(items.clone(), rng(3)).unwrap();
        b.refill(items.clone(), rng(3)).unwrap();
        assert_eq!(a.entries(), b.entries());
        let mut sorted = a.entries().to_vec();
        sorted.sort();
        assert_eq!(sorted, items);
        assert_ne!(a.entries(), items.as_slice());
    }

    #[test]
    fn buffer_sequential_draws() {
        let mut b = Buffer::new();
        b.refill((0..5u32).collect(), rng(1)).unwrap();
        let perm = b.entries().to_vec();
        let first = b.next(2).unwrap();
        let second = b.next(2).unwrap();
        assert_eq!([first, second].concat(), perm[..4].to_vec());
        assert_eq!(b.wraps(), 0);
    }

    #[test]
    fn buffer_each_entry_once_per_pass() {
        let mut b = Buffer::new();
        b.refill((0..8u32).collect(), rng(2)).unwrap();
        let mut seen: Vec<u32> = (0..8).flat_map(|_| b.next(1).unwrap()).collect();
        seen.sort();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());
        assert_eq!(b.wraps(), 0);
    }

    #[test]
    fn buffer_wraps_with_fresh_permutation() {
        let mut b = Buffer::new();
        b.refill((0..3u32).collect(), rng(4)).unwrap();
        let drawn = b.next(5).unwrap();
        let mut head = drawn[..3].to_vec();
        head.sort();
        assert_eq!(head, vec![0, 1, 2]);
        assert_ne!(drawn[3], drawn[4]);
        assert_eq!(b.wraps(), 1);
    }

    #[test]
    fn buffer_errors() {
        let mut b: Buffer<u32> = Buffer::new();
        assert!(matches!(b.next(1), Err(Error::Protocol(_))));
        assert!(b.refill(vec![], rng(0)).is_err());
    }

    #[test]
    fn comm_cost_counts() {
        let (d, k) = (10, 4);
        let up = upload(0, vec![0.0; d], k);
        let down = server_aggregate(vec![upload(0, vec![0.0; d], k), upload(1, vec![0.0; d], k)], 2).unwrap();
        let c = comm_cost(&up, &down);
        assert_eq!(c.uplink_floats, 18);
        assert_eq!(c.downlink_floats, 26);
        assert_eq!(c.uplink_ints, 4 * 8);

        let mut up2 = up.clone();
        up2.momentum = Some(ParamVector::zeros(d));
        up2.u = Some(
            (0..k)
                .map(|t| URecord {
                    value: 1.0,
                    client: 0,
                    round: 0,
                    iteration: t,
                    sample_id: t as u64,
                })
                .collect(),
        );
        assert_eq!(comm_cost(&up2, &down).uplink_floats, 32);
    }
}
