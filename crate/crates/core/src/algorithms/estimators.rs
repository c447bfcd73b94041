//! Stochastic gradient estimators and the per-positive u-table.
//!
//! Both estimators share one assembly step, `(1/B1) Σ c1_m ∇h(w, z1_m) +
//! (1/B2) Σ c2_m ∇h(w, z2_m)`; they differ only in the coefficients.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::losses::{OuterFnSpec, PairwiseLossSpec};
use crate::model::{ParamVector, ScorerSpec};

/// Scores and score-gradients of a minibatch at the current model.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveBatch {
    pub ids: Vec<u64>,
    pub scores: Vec<f64>,
    /// Row-major, `len() x dim`.
    pub grads: Vec<f64>,
    pub dim: usize,
}

impl ActiveBatch {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn grad(&self, m: usize) -> &[f64] {
        &self.grads[m * self.dim..(m + 1) * self.dim]
    }
}

pub fn score_batch(scorer: &ScorerSpec, w: &[f64], batch: &[&Sample]) -> Result<ActiveBatch> {
    let dim = w.len();
    let mut out = ActiveBatch {
        ids: Vec::with_capacity(batch.len()),
        scores: Vec::with_capacity(batch.len()),
        grads: vec![0.0; batch.len() * dim],
        dim,
    };
    for (m, s) in batch.iter().enumerate() {
        let v = scorer.score_with_grad(w, &s.features, &mut out.grads[m * dim..(m + 1) * dim])?;
        out.ids.push(s.id);
        out.scores.push(v);
    }
    Ok(out)
}

/// `b` indices into `0..n`: without replacement when `b <= n`, otherwise
/// with replacement.
pub fn sample_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, b: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("cannot sample from an empty local set"));
    }
    if b <= n {
        Ok(index::sample(rng, n, b).into_vec())
    } else {
        Ok((0..b).map(|_| rng.random_range(0..n)).collect())
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!("{what}: expected {want} entries, got {got}")));
    }
    Ok(())
}

fn assemble(a1: &ActiveBatch, c1: &[f64], a2: &ActiveBatch, c2: &[f64]) -> Result<ParamVector> {
    if a1.dim != a2.dim {
        return Err(Error::invalid("active batches disagree on dimension"));
    }
    if a1.is_empty() || a2.is_empty() {
        return Err(Error::invalid("empty minibatch"));
    }
    let dim = a1.dim;
    let part = |a: &ActiveBatch, c: &[f64]| {
        let mut acc = vec![0.0; dim];
        for (m, cm) in c.iter().enumerate() {
            for (g, v) in acc.iter_mut().zip(a.grad(m)) {
                *g += cm * v;
            }
        }
        let n = a.len() as f64;
        acc.iter_mut().for_each(|g| *g /= n);
        acc
    };
    let mut g = part(a1, c1);
    for (x, y) in g.iter_mut().zip(part(a2, c2)) {
        *x += y;
    }
    Ok(ParamVector::from(g))
}

/// FedX1 estimate of `∇F` with linear outer function.
///
/// `lazy2[m]` pairs with the positive `a1[m]`; `lazy1[m]` pairs with the
/// negative `a2[m]`.
pub fn fedx1_estimate(
    loss: &PairwiseLossSpec,
    a1: &ActiveBatch,
    a2: &ActiveBatch,
    lazy2: &[f64],
    lazy1: &[f64],
) -> Result<ParamVector> {
    check_len("lazy negative scores", lazy2.len(), a1.len())?;
    check_len("lazy positive scores", lazy1.len(), a2.len())?;
    let c1: Vec<f64> = a1.scores.iter().zip(lazy2).map(|(&a, &b)| loss.grads(a, b).0).collect();
    let c2: Vec<f64> = lazy1.iter().zip(&a2.scores).map(|(&a, &b)| loss.grads(a, b).1).collect();
    assemble(a1, &c1, a2, &c2)
}

/// FedX2 estimate of `∇F` with nonlinear outer function.
///
/// `u1[m]` is the just-updated u of the positive `a1[m]`; `lazy1[m]` and
/// `lazy_u[m]` are the score and u of the same remote positive.
#[allow(clippy::too_many_arguments)]
pub fn fedx2_estimate(
    loss: &PairwiseLossSpec,
    outer: &OuterFnSpec,
    a1: &ActiveBatch,
    u1: &[f64],
    a2: &ActiveBatch,
    lazy2: &[f64],
    lazy1: &[f64],
    lazy_u: &[f64],
) -> Result<ParamVector> {
    check_len("lazy negative scores", lazy2.len(), a1.len())?;
    check_len("u values", u1.len(), a1.len())?;
    check_len("lazy positive scores", lazy1.len(), a2.len())?;
    check_len("lazy u values", lazy_u.len(), a2.len())?;
    let c1: Vec<f64> = (0..a1.len())
        .map(|m| outer.derivative(u1[m]) * loss.grads(a1.scores[m], lazy2[m]).0)
        .collect();
    let c2: Vec<f64> = (0..a2.len())
        .map(|m| outer.derivative(lazy_u[m]) * loss.grads(lazy1[m], a2.scores[m]).1)
        .collect();
    assemble(a1, &c1, a2, &c2)
}

/// `G <- (1 - beta) G + beta g`.
pub fn momentum_update(g: &mut ParamVector, raw: &[f64], beta: f64) {
    for (x, r) in g.iter_mut().zip(raw) {
        *x = (1.0 - beta) * *x + beta * r;
    }
}

/// Moving-average estimates of the inner mean for a client's positives.
#[derive(Clone, Debug, PartialEq)]
pub struct UTable(BTreeMap<u64, f64>);

impl UTable {
    pub fn zeros(ids: impl IntoIterator<Item = u64>) -> Self {
        UTable(ids.into_iter().map(|id| (id, 0.0)).collect())
    }

    pub fn get(&self, id: u64) -> Result<f64> {
        self.0
            .get(&id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("sample {id} is not in this u-table")))
    }

    pub(crate) fn set(&mut self, id: u64, v: f64) -> Result<()> {
        match self.0.get_mut(&id) {
            Some(slot) => {
                *slot = v;
                Ok(())
            }
            None => Err(Error::invalid(format!("sample {id} is not in this u-table"))),
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }
}

/// `u(z) <- (1 - gamma) u(z) + gamma l(fresh, lazy)`; returns the new value.
pub fn fedx2_u_update(
    loss: &PairwiseLossSpec,
    table: &mut UTable,
    id: u64,
    fresh_score: f64,
    lazy_neg_score: f64,
    gamma: f64,
) -> Result<f64> {
    let old = table.get(id)?;
    let new = (1.0 - gamma) * old + gamma * loss.loss(fresh_score, lazy_neg_score);
    table.set(id, new)?;
    Ok(new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Group;
    use crate::losses::DEFAULT_U_FLOOR;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn sample(id: u64, x: Vec<f64>) -> Sample {
        Sample {
            id,
            features: x,
            group: Group::Positive,
            client: 0,
        }
    }

    fn batch(scorer: &ScorerSpec, w: &[f64], xs: &[Vec<f64>]) -> ActiveBatch {
        let s: Vec<Sample> = xs.iter().enumerate().map(|(i, x)| sample(i as u64, x.clone())).collect();
        let refs: Vec<&Sample> = s.iter().collect();
        score_batch(scorer, w, &refs).unwrap()
    }

    #[test]
    fn psm_equal_scores_give_quarter_slopes() {
        let sc = ScorerSpec::linear(2);
        let w = [0.5, -0.25];
        let a1 = batch(&sc, &w, &[vec![1.0, 2.0]]);
        let a2 = batch(&sc, &w, &[vec![3.0, -1.0]]);
        let s1 = a1.scores[0];
        let s2 = a2.scores[0];
        let g = fedx1_estimate(&PairwiseLossSpec::PsmSigmoid, &a1, &a2, &[s1], &[s2]).unwrap();
        // lazy equals fresh on each side, so each pair sits at margin zero
        assert_eq!(g.to_vec(), vec![-0.25 + 0.25 * 3.0, -0.25 * 2.0 - 0.25]);
    }

    #[test]
    fn square_loss_two_terms_by_hand() {
        // h = w.x, l = (1 - (a - b))^2, dl/da = -2(1 - a + b), dl/db = 2(1 - a + b)
        let sc = ScorerSpec::linear(1);
        let w = [2.0];
        let a1 = batch(&sc, &w, &[vec![0.5]]); // a = 1
        let a2 = batch(&sc, &w, &[vec![-1.0]]); // b = -2
        let g = fedx1_estimate(&PairwiseLossSpec::Square, &a1, &a2, &[0.25], &[3.0]).unwrap();
        // term 1: -2(1 - 1 + 0.25) * 0.5 = -0.25
        // term 2: 2(1 - 3 - 2) * -1 = 8
        assert_eq!(g.to_vec(), vec![7.75]);
    }

    #[test]
    fn mismatched_lazy_lengths_are_rejected() {
        let sc = ScorerSpec::linear(1);
        let a1 = batch(&sc, &[1.0], &[vec![1.0], vec![2.0]]);
        let a2 = batch(&sc, &[1.0], &[vec![0.0]]);
        let loss = PairwiseLossSpec::Square;
        assert!(matches!(fedx1_estimate(&loss, &a1, &a2, &[0.0], &[0.0]), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            fedx2_estimate(&loss, &OuterFnSpec::Identity, &a1, &[0.0], &a2, &[0.0, 0.0], &[0.0], &[0.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn u_update_cases() {
        let kl = PairwiseLossSpec::KlOpauc { lambda: 2.0 };
        let mut t = UTable::zeros([3, 7]);
        // l(0, 0) = exp(1/2)
        let v = fedx2_u_update(&kl, &mut t, 3, 0.0, 0.0, 0.5).unwrap();
        assert!((v - 0.824_360_635_350_064).abs() < 1e-15);
        assert_eq!(t.get(7).unwrap(), 0.0);
        let full = fedx2_u_update(&kl, &mut t, 7, 0.3, -0.2, 1.0).unwrap();
        assert_eq!(full, kl.loss(0.3, -0.2));
        assert!(matches!(fedx2_u_update(&kl, &mut t, 99, 0.0, 0.0, 0.5), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn u_at_floor_gives_finite_slope() {
        let outer = OuterFnSpec::kl_log(2.0);
        let sc = ScorerSpec::linear(1);
        let a = batch(&sc, &[1.0], &[vec![0.0]]);
        let g = fedx2_estimate(
            &PairwiseLossSpec::KlOpauc { lambda: 2.0 },
            &outer,
            &a,
            &[0.0],
            &a,
            &[0.0],
            &[0.0],
            &[DEFAULT_U_FLOOR],
        )
        .unwrap();
        assert!(g.is_finite());
        assert_eq!(outer.derivative(0.0), 2.0 / DEFAULT_U_FLOOR);
    }

    #[test]
    fn sample_batch_modes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut idx = sample_batch(&mut rng, 10, 10).unwrap();
        idx.sort();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
        let many = sample_batch(&mut rng, 3, 50).unwrap();
        assert_eq!(many.len(), 50);
        assert!(many.iter().all(|&i| i < 3));
        assert!(sample_batch(&mut rng, 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn identity_outer_reduces_fedx2_to_fedx1(
            w in prop::collection::vec(-1.0f64..1.0, 11),
            xs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 6),
            lazy in prop::collection::vec(-2.0f64..2.0, 6),
            us in prop::collection::vec(0.1f64..3.0, 6),
        ) {
            let sc = ScorerSpec::mlp1(3, 2);
            let w = &w[..sc.param_count()];
            let a1 = batch(&sc, w, &xs[..2]);
            let a2 = batch(&sc, w, &xs[2..]);
            for loss in [PairwiseLossSpec::PsmSigmoid, PairwiseLossSpec::Square, PairwiseLossSpec::KlOpauc { lambda: 2.0 }] {
                let g1 = fedx1_estimate(&loss, &a1, &a2, &lazy[..2], &lazy[2..]).unwrap();
                let g2 = fedx2_estimate(&loss, &OuterFnSpec::Identity, &a1, &us[..2], &a2, &lazy[..2], &lazy[2..], &us[2..]).unwrap();
                prop_assert_eq!(g1, g2);
            }
        }

        #[test]
        fn momentum_closed_form(g0 in prop::collection::vec(-5.0f64..5.0, 4), raw in prop::collection::vec(-5.0f64..5.0, 4), beta in 0.01f64..1.0, k in 0usize..40) {
            let mut g = ParamVector::from(g0.clone());
            for _ in 0..k {
                momentum_update(&mut g, &raw, beta);
            }
            let q = (1.0 - beta).powi(k as i32);
            for j in 0..4 {
                let expect = q * g0[j] + (1.0 - q) * raw[j];
                prop_assert!((g[j] - expect).abs() <= 1e-12, "{} vs {}", g[j], expect);
            }
        }

        #[test]
        fn beta_one_is_the_raw_estimate(g0 in prop::collection::vec(-5.0f64..5.0, 4), raw in prop::collection::vec(-5.0f64..5.0, 4)) {
            let mut g = ParamVector::from(g0);
            momentum_update(&mut g, &raw, 1.0);
            prop_assert_eq!(g.to_vec(), raw);
        }
    }
}
