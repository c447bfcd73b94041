//! Synthetic federated binary-classification data.
//!
//! Positives are drawn from `N(+s/2 e0, I)` and negatives from `N(-s/2 e0, I)`,
//! with a configurable fraction of negatives moved to a far cluster at
//! `-d e0 + d e1`. Those points are easy to rank correctly but sit far from
//! everything else, so a loss that keeps growing with the margin (square)
//! is dragged by them, while a saturating one (PSM) largely ignores them.
//! Flipping labels turns some of them into badly misranked positives, which
//! widens the gap.
//!
//! Samples are generated in one global order and then cut into contiguous
//! per-client shards, so the global training set does not depend on the
//! number of clients.

use std::io::{BufRead, Write};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    /// S1, the positive set.
    Positive,
    /// S2, the negative set.
    Negative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub group: Group,
    pub client: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub n_pos_per_client: usize,
    pub n_neg_per_client: usize,
    pub input_dim: usize,
    pub n_clients: usize,
    pub hetero_step: f64,
    pub hetero_base: f64,
    pub hetero_var: f64,
    pub flip_fraction: f64,
    pub seed: u64,
    /// Distance between the two class means.
    pub separation: f64,
    /// Fraction of negatives drawn from the far cluster.
    pub outlier_fraction: f64,
    /// The far cluster sits at `-d e0 + d e1` relative to the negative mean.
    pub outlier_distance: f64,
    pub n_eval_pos: usize,
    pub n_eval_neg: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_pos_per_client: 8,
            n_neg_per_client: 40,
            input_dim: 10,
            n_clients: 16,
            hetero_step: 0.01,
            hetero_base: -0.08,
            hetero_var: 0.04,
            flip_fraction: 0.0,
            seed: 0,
            separation: 1.8,
            outlier_fraction: 0.2,
            outlier_distance: 6.0,
            n_eval_pos: 400,
            n_eval_neg: 2000,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("data.n_pos_per_client", self.n_pos_per_client),
            ("data.n_neg_per_client", self.n_neg_per_client),
            ("data.input_dim", self.input_dim),
            ("data.n_clients", self.n_clients),
            ("data.n_eval_pos", self.n_eval_pos),
            ("data.n_eval_neg", self.n_eval_neg),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            return Err(Error::config("data.flip_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(Error::config("data.outlier_fraction", "must lie in [0, 1]"));
        }
        if self.hetero_var.is_nan() || self.hetero_var < 0.0 {
            return Err(Error::config("data.hetero_var", "must be non-negative"));
        }
        Ok(())
    }

    /// Mean shift applied to client `i` by [`apply_heterogeneity`].
    pub fn hetero_mean(&self, client: usize) -> f64 {
        self.hetero_base + client as f64 * self.hetero_step
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClientShard {
    pub pos: Vec<Sample>,
    pub neg: Vec<Sample>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.pos.len() + self.neg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Clean held-out data used only for AUC / pAUC reporting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSplit {
    pub pos: Vec<Vec<f64>>,
    pub neg: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederatedDataset {
    pub input_dim: usize,
    pub clients: Vec<ClientShard>,
    pub eval: EvalSplit,
}

impl FederatedDataset {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    /// Feature views of the full S1 and S2, in client order.
    pub fn train_sets(&self) -> (Vec<&[f64]>, Vec<&[f64]>) {
        let pos = self
            .clients
            .iter()
            .flat_map(|c| c.pos.iter().map(|s| s.features.as_slice()))
            .collect();
        let neg = self
            .clients
            .iter()
            .flat_map(|c| c.neg.iter().map(|s| s.features.as_slice()))
            .collect();
        (pos, neg)
    }

    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(ClientShard::len).sum()
    }

    /// Largest local positive count, `M` in the schedules.
    pub fn max_local_positives(&self) -> usize {
        self.clients.iter().map(|c| c.pos.len()).max().unwrap_or(0)
    }

    /// All shards merged into one, in client order.
    pub fn union_shard(&self) -> ClientShard {
        ClientShard {
            pos: self.clients.iter().flat_map(|c| c.pos.iter().cloned()).collect(),
            neg: self.clients.iter().flat_map(|c| c.neg.iter().cloned()).collect(),
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.clients.iter().flat_map(|c| c.pos.iter().chain(c.neg.iter()))
    }

    /// Rebuild shards from a flat list of samples (e.g. from [`read_samples`]).
    pub fn from_samples(samples: Vec<Sample>, eval: EvalSplit) -> Result<Self> {
        let input_dim = samples
            .first()
            .map(|s| s.features.len())
            .ok_or_else(|| Error::invalid("no samples"))?;
        let n_clients = samples.iter().map(|s| s.client).max().unwrap_or(0) + 1;
        let mut clients = vec![ClientShard::default(); n_clients];
        let mut seen = std::collections::HashSet::new();
        for s in samples {
            if s.features.len() != input_dim {
                return Err(Error::invalid(format!("sample {} has wrong dimension", s.id)));
            }
            if !seen.insert(s.id) {
                return Err(Error::invalid(format!("duplicate sample id {}", s.id)));
            }
            let shard = &mut clients[s.client];
            match s.group {
                Group::Positive => shard.pos.push(s),
                Group::Negative => shard.neg.push(s),
            }
        }
        Ok(FederatedDataset {
            input_dim,
            clients,
            eval,
        })
    }
}

fn draw_positive<R: Rng>(rng: &mut R, cfg: &DataConfig) -> Vec<f64> {
    let mut x: Vec<f64> = (0..cfg.input_dim).map(|_| rng.sample(StandardNormal)).collect();
    x[0] += cfg.separation / 2.0;
    x
}

fn draw_negative<R: Rng>(rng: &mut R, cfg: &DataConfig) -> Vec<f64> {
    let far = rng.random::<f64>() < cfg.outlier_fraction;
    let mut x: Vec<f64> = (0..cfg.input_dim).map(|_| rng.sample(StandardNormal)).collect();
    x[0] -= cfg.separation / 2.0;
    if far && cfg.input_dim > 1 {
        x[0] -= cfg.outlier_distance;
        x[1] += cfg.outlier_distance;
    }
    x
}

/// Generate the federated training shards and a clean evaluation split.
pub fn generate(cfg: &DataConfig) -> Result<FederatedDataset> {
    cfg.validate()?;
    let n = cfg.n_clients;
    let total_pos = cfg.n_pos_per_client * n;
    let total_neg = cfg.n_neg_per_client * n;

    let mut pos_rng = substream(cfg.seed, Purpose::DataPositive, 0, 0, 0);
    let mut neg_rng = substream(cfg.seed, Purpose::DataNegative, 0, 0, 0);
    let mut clients = vec![ClientShard::default(); n];
    for g in 0..total_pos {
        let client = g / cfg.n_pos_per_client;
        clients[client].pos.push(Sample {
            id: g as u64,
            features: draw_positive(&mut pos_rng, cfg),
            group: Group::Positive,
            client,
        });
    }
    for g in 0..total_neg {
        let client = g / cfg.n_neg_per_client;
        clients[client].neg.push(Sample {
            id: (total_pos + g) as u64,
            features: draw_negative(&mut neg_rng, cfg),
            group: Group::Negative,
            client,
        });
    }

    let mut eval_rng = substream(cfg.seed, Purpose::EvalSplit, 0, 0, 0);
    let eval = EvalSplit {
        pos: (0..cfg.n_eval_pos).map(|_| draw_positive(&mut eval_rng, cfg)).collect(),
        neg: (0..cfg.n_eval_neg).map(|_| draw_negative(&mut eval_rng, cfg)).collect(),
    };

    Ok(FederatedDataset {
        input_dim: cfg.input_dim,
        clients,
        eval,
    })
}

/// Add `N(mu_i, hetero_var)` noise to every feature of every training sample on client `i`.
pub fn apply_heterogeneity(mut data: FederatedDataset, cfg: &DataConfig) -> Result<FederatedDataset> {
    if data.n_clients() != cfg.n_clients {
        return Err(Error::invalid(format!(
            "dataset has {} clients, config expects {}",
            data.n_clients(),
            cfg.n_clients
        )));
    }
    for (i, shard) in data.clients.iter_mut().enumerate() {
        let mu = cfg.hetero_mean(i);
        let std = cfg.hetero_var.sqrt();
        if mu == 0.0 && std == 0.0 {
            continue;
        }
        let noise = Normal::new(mu, std).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = substream(cfg.seed, Purpose::Heterogeneity, i, 0, 0);
        for s in shard.pos.iter_mut().chain(shard.neg.iter_mut()) {
            for v in &mut s.features {
                *v += noise.sample(&mut rng);
            }
        }
    }
    Ok(data)
}

/// Per client, move `floor(f |S1^i|)` random positives to S2^i and
/// `floor(f |S2^i|)` random negatives to S1^i.
pub fn flip_labels(mut data: FederatedDataset, flip_fraction: f64, seed: u64) -> Result<FederatedDataset> {
    if !(0.0..=1.0).contains(&flip_fraction) {
        return Err(Error::invalid("flip_fraction must lie in [0, 1]"));
    }
    if flip_fraction == 0.0 {
        return Ok(data);
    }
    for (i, shard) in data.clients.iter_mut().enumerate() {
        let mut rng = substream(seed, Purpose::LabelFlip, i, 0, 0);
        let n_pos = floor_count(flip_fraction, shard.pos.len());
        let n_neg = floor_count(flip_fraction, shard.neg.len());
        let pick_pos = index::sample(&mut rng, shard.pos.len(), n_pos).into_vec();
        let pick_neg = index::sample(&mut rng, shard.neg.len(), n_neg).into_vec();

        let (mut keep_pos, mut to_neg) = split_by(std::mem::take(&mut shard.pos), &pick_pos);
        let (mut keep_neg, mut to_pos) = split_by(std::mem::take(&mut shard.neg), &pick_neg);
        for s in &mut to_neg {
            s.group = Group::Negative;
        }
        for s in &mut to_pos {
            s.group = Group::Positive;
        }
        keep_pos.append(&mut to_pos);
        keep_neg.append(&mut to_neg);
        keep_pos.sort_by_key(|s| s.id);
        keep_neg.sort_by_key(|s| s.id);
        shard.pos = keep_pos;
        shard.neg = keep_neg;
    }
    Ok(data)
}

fn floor_count(fraction: f64, n: usize) -> usize {
    // the epsilon absorbs representation error such as 0.3 * 10 = 2.9999999999999996
    ((fraction * n as f64) + 1e-9).floor() as usize
}

fn split_by(items: Vec<Sample>, picked: &[usize]) -> (Vec<Sample>, Vec<Sample>) {
    let mut mask = vec![false; items.len()];
    for &p in picked {
        mask[p] = true;
    }
    let mut keep = Vec::new();
    let mut moved = Vec::new();
    for (s, m) in items.into_iter().zip(mask) {
        if m {
            moved.push(s);
        } else {
            keep.push(s);
        }
    }
    (keep, moved)
}

/// generate, then flip labels, then inject heterogeneity.
pub fn build(cfg: &DataConfig) -> Result<FederatedDataset> {
    let data = generate(cfg)?;
    let data = flip_labels(data, cfg.flip_fraction, cfg.seed)?;
    apply_heterogeneity(data, cfg)
}

/// One line per sample: `id<TAB>group<TAB>client<TAB>f0,f1,...`, group 1 for S1 and 0 for S2.
pub fn write_samples<'a, W: Write>(mut out: W, samples: impl IntoIterator<Item = &'a Sample>) -> Result<()> {
    for s in samples {
        let group = match s.group {
            Group::Positive => 1,
            Group::Negative => 0,
        };
        let feats: Vec<String> = s.features.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}\t{}\t{}\t{}", s.id, group, s.client, feats.join(","))?;
    }
    Ok(())
}

pub fn read_samples<R: BufRead>(input: R) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            line: n + 1,
            msg: msg.to_string(),
        };
        let mut cols = line.split('\t');
        let (Some(id), Some(group), Some(client), Some(feats), None) =
            (cols.next(), cols.next(), cols.next(), cols.next(), cols.next())
        else {
            return Err(err("expected 4 tab-separated columns"));
        };
        let id = id.parse::<u64>().map_err(|_| err("bad id"))?;
        let group = match group {
            "1" => Group::Positive,
            "0" => Group::Negative,
            _ => return Err(err("group must be 0 or 1")),
        };
        let client = client.parse::<usize>().map_err(|_| err("bad client"))?;
        let features = feats
            .split(',')
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| err("bad feature value"))?;
        out.push(Sample {
            id,
            features,
            group,
            client,
        });
    }
    Ok(out)
}
