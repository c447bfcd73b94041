//! ROC AUC and one-way partial AUC with exact tie handling.

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredEval {
    pub pos_scores: Vec<f64>,
    pub neg_scores: Vec<f64>,
}

impl ScoredEval {
    pub fn new(pos_scores: Vec<f64>, neg_scores: Vec<f64>) -> Self {
        ScoredEval {
            pos_scores,
            neg_scores,
        }
    }
}

/// Twice the Mann-Whitney U statistic: `2 * wins + ties`, computed by a
/// merged sort in O((P + Q) log(P + Q)).
fn doubled_u(pos: &[f64], neg: &[f64]) -> u64 {
    let mut p: Vec<f64> = pos.to_vec();
    let mut q: Vec<f64> = neg.to_vec();
    p.sort_by(f64::total_cmp);
    q.sort_by(f64::total_cmp);
    let mut total = 0u64;
    let mut below = 0usize; // negatives strictly below the current positive
    let mut j = 0usize;
    let mut i = 0usize;
    while i < p.len() {
        let v = p[i];
        while below < q.len() && q[below] < v {
            below += 1;
        }
        j = j.max(below);
        while j < q.len() && q[j] == v {
            j += 1;
        }
        let ties = (j - below) as u64;
        let mut run = 0u64;
        while i < p.len() && p[i] == v {
            run += 1;
            i += 1;
        }
        total += run * (2 * below as u64 + ties);
    }
    total
}

fn check(eval: &ScoredEval) -> Result<()> {
    if eval.pos_scores.is_empty() || eval.neg_scores.is_empty() {
        return Err(Error::invalid("AUC needs at least one positive and one negative score"));
    }
    if eval.pos_scores.iter().chain(&eval.neg_scores).any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    Ok(())
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auc(eval: &ScoredEval) -> Result<f64> {
    check(eval)?;
    let pairs = 2 * eval.pos_scores.len() as u64 * eval.neg_scores.len() as u64;
    Ok(doubled_u(&eval.pos_scores, &eval.neg_scores) as f64 / pairs as f64)
}

/// Number of hardest negatives kept for a given FPR cap.
pub fn hardest_count(fpr_max: f64, n_neg: usize) -> usize {
    // epsilon absorbs products such as 0.3 * 10 landing just below an integer
    ((fpr_max * n_neg as f64) + 1e-9).floor() as usize
}

/// One-way partial AUC restricted to FPR <= `fpr_max`.
///
/// Keeps the `floor(fpr_max * Q)` highest-scoring negatives (ties at the cut
/// broken by lower index first) and returns the win rate of all positives
/// against exactly those negatives, normalized to [0, 1].
pub fn partial_auc(eval: &ScoredEval, fpr_max: f64) -> Result<f64> {
    check(eval)?;
    if !(fpr_max > 0.0 && fpr_max <= 1.0) {
        return Err(Error::invalid("fpr_max must lie in (0, 1]"));
    }
    let keep = hardest_count(fpr_max, eval.neg_scores.len());
    if keep == 0 {
        return Err(Error::invalid(format!(
            "fpr_max {fpr_max} keeps no negatives out of {}",
            eval.neg_scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..eval.neg_scores.len()).collect();
    order.sort_by(|&a, &b| {
        eval.neg_scores[b]
            .total_cmp(&eval.neg_scores[a])
            .then(a.cmp(&b))
    });
    let hardest: Vec<f64> = order[..keep].iter().map(|&k| eval.neg_scores[k]).collect();
    let pairs = 2 * eval.pos_scores.len() as u64 * keep as u64;
    Ok(doubled_u(&eval.pos_scores, &hardest) as f64 / pairs as f64)
}
