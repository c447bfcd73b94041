//! Pairwise surrogate losses, outer functions, and exact full-data oracles
//! for the compositional pairwise risk
//!
//! ```text
//! F(w) = mean_{z in S1} f( mean_{z' in S2} l(h(w, z), h(w, z')) )
//! ```

use crate::error::{Error, Result};
use crate::model::{ParamVector, ScorerSpec};
use crate::parallel::{tree_sum, tree_sum_vectors, Executor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairwiseLossSpec {
    /// `1 / (1 + exp(a - b))`
    PsmSigmoid,
    /// `exp(((b + 1 - a)_+)^2 / lambda)`
    KlOpauc { lambda: f64 },
    /// `(1 - (a - b))^2`
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OuterFnSpec {
    Identity,
    /// `lambda * log(max(s, u_floor))`
    KlLog { lambda: f64, u_floor: f64 },
}

pub const DEFAULT_U_FLOOR: f64 = 1e-8;

impl PairwiseLossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PairwiseLossSpec::KlOpauc { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                Err(Error::invalid("kl_opauc lambda must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PairwiseLossSpec::PsmSigmoid => "psm_sigmoid",
            PairwiseLossSpec::KlOpauc { .. } => "kl_opauc",
            PairwiseLossSpec::Square => "square",
        }
    }

    /// `l(a, b)` for a positive score `a` and a negative score `b`.
    #[inline]
    pub fn loss(&self, a: f64, b: f64) -> f64 {
        match *self {
            PairwiseLossSpec::PsmSigmoid => sigmoid(b - a),
            PairwiseLossSpec::KlOpauc { lambda } => {
                let t = (b + 1.0 - a).max(0.0);
                (t * t / lambda).exp()
            }
            PairwiseLossSpec::Square => {
                let r = 1.0 - (a - b);
                r * r
            }
        }
    }

    /// `(dl/da, dl/db)`.
    #[inline]
    pub fn grads(&self, a: f64, b: f64) -> (f64, f64) {
        match *self {
            PairwiseLossSpec::PsmSigmoid => {
                let s = sigmoid(b - a);
                let d = s * (1.0 - s);
                (-d, d)
            }
            PairwiseLossSpec::KlOpauc { lambda } => {
                let t = b + 1.0 - a;
                if t <= 0.0 {
                    return (0.0, 0.0);
                }
                let d = (t * t / lambda).exp() * 2.0 * t / lambda;
                (-d, d)
            }
            PairwiseLossSpec::Square => {
                let r = 1.0 - (a - b);
                (-2.0 * r, 2.0 * r)
            }
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl OuterFnSpec {
    pub fn kl_log(lambda: f64) -> Self {
        OuterFnSpec::KlLog {
            lambda,
            u_floor: DEFAULT_U_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OuterFnSpec::Identity => Ok(()),
            OuterFnSpec::KlLog { lambda, u_floor } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::invalid("kl_log lambda must be positive"));
                }
                if !(u_floor > 0.0 && u_floor.is_finite()) {
                    return Err(Error::invalid("kl_log u_floor must be positive"));
                }
                Ok(())
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, OuterFnSpec::Identity)
    }

    pub fn name(&self) -> &'static str {
        match self {
            OuterFnSpec::Identity => "identity",
            OuterFnSpec::KlLog { .. } => "kl_log",
        }
    }

    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            OuterFnSpec::Identity => s,
            OuterFnSpec::KlLog { lambda, u_floor } => lambda * s.max(u_floor).ln(),
        }
    }

    #[inline]
    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            OuterFnSpec::Identity => 1.0,
            OuterFnSpec::KlLog { lambda, u_floor } => lambda / s.max(u_floor),
        }
    }
}

/// Logistic loss `log(1 + exp(-y s))` with `y = +1` for positives and `-1` for negatives.
pub fn logistic_loss(score: f64, positive: bool) -> f64 {
    let m = if positive { score } else { -score };
    // log(1 + e^{-m}) without overflow
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// Derivative of [`logistic_loss`] with respect to the score.
pub fn logistic_dscore(score: f64, positive: bool) -> f64 {
    if positive {
        -sigmoid(-score)
    } else {
        sigmoid(score)
    }
}

fn check_sets(s1: &[&[f64]], s2: &[&[f64]]) -> Result<()> {
    if s1.is_empty() {
        return Err(Error::invalid("positive set S1 is empty"));
    }
    if s2.is_empty() {
        return Err(Error::invalid("negative set S2 is empty"));
    }
    Ok(())
}

/// `g(w, z, S2) = mean_{z'} l(h(w, z), h(w, z'))`, by exhaustive summation.
pub fn exact_inner(
    loss: &PairwiseLossSpec,
    scorer: &ScorerSpec,
    w: &[f64],
    z: &[f64],
    s2: &[&[f64]],
) -> Result<f64> {
    if s2.is_empty() {
        return Err(Error::invalid("negative set S2 is empty"));
    }
    let a = scorer.score(w, z)?;
    let mut total = 0.0;
    for x in s2 {
        total += loss.loss(a, scorer.score(w, x)?);
    }
    Ok(total / s2.len() as f64)
}

fn all_scores(ex: &Executor, scorer: &ScorerSpec, w: &[f64], xs: &[&[f64]]) -> Result<Vec<f64>> {
    ex.map_range(xs.len(), |i| scorer.score(w, xs[i])).into_iter().collect()
}

fn inner_from_scores(loss: &PairwiseLossSpec, a: f64, neg: &[f64]) -> f64 {
    let mut total = 0.0;
    for &b in neg {
        total += loss.loss(a, b);
    }
    total / neg.len() as f64
}

/// Exact `F(w)` over the full positive and negative sets.
pub fn exact_objective(
    loss: &PairwiseLossSpec,
    outer: &OuterFnSpec,
    scorer: &ScorerSpec,
    w: &[f64],
    s1: &[&[f64]],
    s2: &[&[f64]],
) -> Result<f64> {
    exact_objective_with(&Executor::serial(), loss, outer, scorer, w, s1, s2)
}

pub fn exact_objective_with(
    ex: &Executor,
    loss: &PairwiseLossSpec,
    outer: &OuterFnSpec,
    scorer: &ScorerSpec,
    w: &[f64],
    s1: &[&[f64]],
    s2: &[&[f64]],
) -> Result<f64> {
    check_sets(s1, s2)?;
    let pos = all_scores(ex, scorer, w, s1)?;
    let neg = all_scores(ex, scorer, w, s2)?;
    let terms = ex.map_range(pos.len(), |i| outer.value(inner_from_scores(loss, pos[i], &neg)));
    Ok(tree_sum(&terms) / pos.len() as f64)
}

/// Exact `∇F(w)`; the reference every stochastic estimator is checked against.
pub fn exact_grad(
    loss: &PairwiseLossSpec,
    outer: &OuterFnSpec,
    scorer: &ScorerSpec,
    w: &[f64],
    s1: &[&[f64]],
    s2: &[&[f64]],
) -> Result<ParamVector> {
    exact_grad_with(&Executor::serial(), loss, outer, scorer, w, s1, s2)
}

pub fn exact_grad_with(
    ex: &Executor,
    loss: &PairwiseLossSpec,
    outer: &OuterFnSpec,
    scorer: &ScorerSpec,
    w: &[f64],
    s1: &[&[f64]],
    s2: &[&[f64]],
) -> Result<ParamVector> {
    check_sets(s1, s2)?;
    let d = w.len();
    let scored = |xs: &[&[f64]]| -> Result<Vec<(f64, Vec<f64>)>> {
        ex.map_range(xs.len(), |i| {
            let mut g = vec![0.0; d];
            scorer.score_with_grad(w, xs[i], &mut g).map(|s| (s, g))
        })
        .into_iter()
        .collect()
    };
    let pos = scored(s1)?;
    let neg = scored(s2)?;
    let neg_scores: Vec<f64> = neg.iter().map(|(s, _)| *s).collect();
    let (n1, n2) = (pos.len() as f64, neg.len() as f64);

    // f'(g(w, z, S2)) per positive
    let outer_slope: Vec<f64> = ex.map_range(pos.len(), |i| {
        outer.derivative(inner_from_scores(loss, pos[i].0, &neg_scores))
    });

    // coefficient on ∇h(w, z) for each positive z
    let pos_coef: Vec<f64> = ex.map_range(pos.len(), |i| {
        let a = pos[i].0;
        let mut acc = 0.0;
        for &b in &neg_scores {
            acc += loss.grads(a, b).0;
        }
        outer_slope[i] * acc / n2
    });
    // coefficient on ∇h(w, z') for each negative z'
    let neg_coef: Vec<f64> = ex.map_range(neg.len(), |j| {
        let b = neg[j].0;
        let mut acc = 0.0;
        for (i, (a, _)) in pos.iter().enumerate() {
            acc += outer_slope[i] * loss.grads(*a, b).1;
        }
        acc / n1
    });

    let scaled = |items: &[(f64, Vec<f64>)], coef: &[f64], norm: f64| -> Vec<f64> {
        let parts: Vec<Vec<f64>> = ex.map_range(items.len(), |i| {
            items[i].1.iter().map(|g| coef[i] * g).collect()
        });
        let refs: Vec<&[f64]> = parts.iter().map(|v| v.as_slice()).collect();
        let mut sum = tree_sum_vectors(&refs, d);
        for v in &mut sum {
            *v /= norm;
        }
        sum
    };
    let mut grad = scaled(&pos, &pos_coef, n1);
    let neg_part = scaled(&neg, &neg_coef, n2);
    for (g, v) in grad.iter_mut().zip(&neg_part) {
        *g += *v;
    }
    Ok(ParamVector::from(grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::finite_diff_grad;
    use proptest::prelude::*;

    const KL2: PairwiseLossSpec = PairwiseLossSpec::KlOpauc { lambda: 2.0 };

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / norm.max(1.0)
    }

    #[test]
    fn loss_values_by_hand() {
        assert_eq!(PairwiseLossSpec::PsmSigmoid.loss(0.7, 0.7), 0.5);
        assert_eq!(KL2.loss(1.5, 0.5), 1.0);
        assert_eq!(PairwiseLossSpec::Square.loss(2.0, 1.0), 0.0);
        // e^{0.5} = 1.6487212707001282 (high-precision value 1.64872127070012814684...)
        assert!((KL2.loss(0.0, 0.0) - 1.648_721_270_700_128_1).abs() < 1e-15);
    }

    #[test]
    fn loss_grads_by_hand() {
        assert_eq!(PairwiseLossSpec::PsmSigmoid.grads(0.3, 0.3), (-0.25, 0.25));
        assert_eq!(KL2.grads(3.0, 1.0), (0.0, 0.0));
        assert_eq!(KL2.grads(2.0, 1.0), (0.0, 0.0));
    }

    #[test]
    fn psm_saturates_instead_of_overflowing() {
        let l = PairwiseLossSpec::PsmSigmoid;
        assert_eq!(l.loss(1e4, 0.0), 0.0);
        assert_eq!(l.loss(-1e4, 0.0), 1.0);
        let (da, db) = l.grads(1e4, 0.0);
        assert!(da == 0.0 && db == 0.0);
    }

    #[test]
    fn outer_functions() {
        let kl = OuterFnSpec::kl_log(2.0);
        assert_eq!(kl.value(1.0), 0.0);
        assert_eq!(kl.derivative(0.0), 2.0 / DEFAULT_U_FLOOR);
        assert!(kl.derivative(0.0).is_finite());
        assert_eq!(OuterFnSpec::Identity.derivative(-5.0), 1.0);
        assert_eq!(OuterFnSpec::Identity.value(-5.0), -5.0);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        for &s in &[-30.0, -2.0, -0.1, 0.0, 0.4, 3.0, 25.0] {
            for &pos in &[true, false] {
                let fd = (logistic_loss(s + 1e-6, pos) - logistic_loss(s - 1e-6, pos)) / 2e-6;
                let g = logistic_dscore(s, pos);
                assert!((g - fd).abs() <= 1e-5 * g.abs().max(1.0), "s={s} pos={pos}");
            }
        }
    }

    #[test]
    fn exact_inner_cases() {
        let lin = ScorerSpec::linear(1);
        let w = [1.0];
        let z = [0.4];
        let one: [&[f64]; 1] = [&[0.1]];
        let got = exact_inner(&KL2, &lin, &w, &z, &one).unwrap();
        assert_eq!(got, KL2.loss(0.4, 0.1));

        let same: [&[f64]; 3] = [&[0.4], &[0.4], &[0.4]];
        let sq = exact_inner(&PairwiseLossSpec::Square, &lin, &w, &z, &same).unwrap();
        assert_eq!(sq, 1.0);

        // three negatives with scores 0.0, 1.0, -0.5 against a = 0.4 under psm:
        // sigmoid(-0.4) = 0.401312339887548, sigmoid(0.6) = 0.645656306225795,
        // sigmoid(-0.9) = 0.289050497374996
        let three: [&[f64]; 3] = [&[0.0], &[1.0], &[-0.5]];
        let psm = exact_inner(&PairwiseLossSpec::PsmSigmoid, &lin, &w, &z, &three).unwrap();
        let want = (0.401_312_339_887_548 + 0.645_656_306_225_795_4 + 0.289_050_497_374_996) / 3.0;
        assert!((psm - want).abs() < 1e-14);

        assert!(exact_inner(&KL2, &lin, &w, &z, &[]).is_err());
    }

    #[test]
    fn exact_objective_cases() {
        let lin = ScorerSpec::linear(1);
        let w = [1.0];
        let p: [&[f64]; 1] = [&[2.0]];
        let n: [&[f64]; 1] = [&[0.5]];
        let v = exact_objective(&KL2, &OuterFnSpec::Identity, &lin, &w, &p, &n).unwrap();
        assert_eq!(v, KL2.loss(2.0, 0.5));

        // every pair exactly at the hinge: a = b + 1 gives l = 1, f(1) = 0
        let kl1 = PairwiseLossSpec::KlOpauc { lambda: 1.0 };
        let p: [&[f64]; 2] = [&[1.0], &[1.0]];
        let n: [&[f64]; 2] = [&[0.0], &[0.0]];
        let v = exact_objective(&kl1, &OuterFnSpec::kl_log(1.0), &lin, &w, &p, &n).unwrap();
        assert_eq!(v, 0.0);

        assert!(exact_objective(&KL2, &OuterFnSpec::Identity, &lin, &w, &[], &n).is_err());
        assert!(exact_objective(&KL2, &OuterFnSpec::Identity, &lin, &w, &p, &[]).is_err());
    }

    #[test]
    fn exact_objective_two_by_three_unrolled() {
        // positives score 1.0, -0.5; negatives score 0.0, 0.5, 2.0; kl_opauc λ=2, kl_log λ=2.
        // hinge values t = b + 1 - a:
        //   a=1.0:  0.0, 0.5, 2.0      -> l = 1, e^{0.125}, e^{2}
        //   a=-0.5: 1.5, 2.0, 3.5      -> l = e^{1.125}, e^{2}, e^{6.125}
        let lin = ScorerSpec::linear(1);
        let w = [1.0];
        let p: [&[f64]; 2] = [&[1.0], &[-0.5]];
        let n: [&[f64]; 3] = [&[0.0], &[0.5], &[2.0]];
        let g1 = (1.0 + 0.125f64.exp() + 2.0f64.exp()) / 3.0;
        let g2 = (1.125f64.exp() + 2.0f64.exp() + 6.125f64.exp()) / 3.0;
        let want = (2.0 * g1.ln() + 2.0 * g2.ln()) / 2.0;
        let got = exact_objective(&KL2, &OuterFnSpec::kl_log(2.0), &lin, &w, &p, &n).unwrap();
        assert!((got - want).abs() < 1e-13, "{got} vs {want}");
    }

    #[test]
    fn exact_grad_vanishes_at_square_margin() {
        // linear scorer with w = [1]; positives at 1, negatives at 0: every margin is 1
        let lin = ScorerSpec::linear(1);
        let p: [&[f64]; 2] = [&[1.0], &[1.0]];
        let n: [&[f64]; 3] = [&[0.0], &[0.0], &[0.0]];
        let g = exact_grad(&PairwiseLossSpec::Square, &OuterFnSpec::Identity, &lin, &[1.0], &p, &n).unwrap();
        assert_eq!(g.to_vec(), vec![0.0]);
    }

    #[test]
    fn exact_grad_identity_is_mean_of_pair_gradients() {
        let lin = ScorerSpec::linear(2);
        let w = [0.3, -0.7];
        let p: [&[f64]; 2] = [&[1.0, 0.5], &[-0.2, 0.3]];
        let n: [&[f64]; 2] = [&[0.1, 0.1], &[0.9, -1.0]];
        let loss = PairwiseLossSpec::PsmSigmoid;
        let mut want = [0.0; 2];
        for x in &p {
            for y in &n {
                let (a, b) = (lin.score(&w, x).unwrap(), lin.score(&w, y).unwrap());
                let (da, db) = loss.grads(a, b);
                for k in 0..2 {
                    want[k] += (da * x[k] + db * y[k]) / 4.0;
                }
            }
        }
        let got = exact_grad(&loss, &OuterFnSpec::Identity, &lin, &w, &p, &n).unwrap();
        assert!(rel_err(&got, &want) < 1e-14);
    }

    #[test]
    fn parallel_oracles_are_bitwise_serial() {
        let lin = ScorerSpec::mlp1(2, 3);
        let w: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin()).collect();
        let pts: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).cos(), (i as f64 * 0.5).sin()]).collect();
        let p: Vec<&[f64]> = pts[..13].iter().map(|v| v.as_slice()).collect();
        let n: Vec<&[f64]> = pts[13..].iter().map(|v| v.as_slice()).collect();
        let outer = OuterFnSpec::kl_log(2.0);
        let ex = Executor::new(3).unwrap();
        let a = exact_grad(&KL2, &outer, &lin, &w, &p, &n).unwrap();
        let b = exact_grad_with(&ex, &KL2, &outer, &lin, &w, &p, &n).unwrap();
        assert_eq!(a, b);
        let fa = exact_objective(&KL2, &outer, &lin, &w, &p, &n).unwrap();
        let fb = exact_objective_with(&ex, &KL2, &outer, &lin, &w, &p, &n).unwrap();
        assert_eq!(fa.to_bits(), fb.to_bits());
    }

    fn any_loss() -> impl Strategy<Value = PairwiseLossSpec> {
        prop_oneof![
            Just(PairwiseLossSpec::PsmSigmoid),
            Just(PairwiseLossSpec::Square),
            (1.0f64..5.0).prop_map(|lambda| PairwiseLossSpec::KlOpauc { lambda }),
        ]
    }

    proptest! {
        #[test]
        fn psm_is_symmetric(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let l = PairwiseLossSpec::PsmSigmoid;
            prop_assert!((l.loss(a, b) + l.loss(b, a) - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn kl_opauc_bounds_and_flat_region(a in -3.0f64..3.0, b in -3.0f64..3.0, lambda in 1.0f64..5.0) {
            let l = PairwiseLossSpec::KlOpauc { lambda };
            prop_assert!(l.loss(a, b) >= 1.0);
            if a >= b + 1.0 {
                prop_assert_eq!(l.grads(a, b), (0.0, 0.0));
            }
        }

        #[test]
        fn kl_opauc_nondecreasing_in_negative_score(a in -3.0f64..3.0, b in -3.0f64..3.0, db in 0.0f64..2.0, lambda in 1.0f64..5.0) {
            let l = PairwiseLossSpec::KlOpauc { lambda };
            prop_assert!(l.loss(a, b + db) >= l.loss(a, b));
        }

        #[test]
        fn loss_grads_match_finite_differences(loss in any_loss(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let h = 1e-6;
            let (da, db) = loss.grads(a, b);
            let fa = (loss.loss(a + h, b) - loss.loss(a - h, b)) / (2.0 * h);
            let fb = (loss.loss(a, b + h) - loss.loss(a, b - h)) / (2.0 * h);
            prop_assert!((da - fa).abs() <= 1e-5 * da.abs().max(1.0), "da {} fd {}", da, fa);
            prop_assert!((db - fb).abs() <= 1e-5 * db.abs().max(1.0), "db {} fd {}", db, fb);
        }

        #[test]
        fn exact_grad_matches_finite_differences_of_objective(
            seed_pts in prop::collection::vec(-1.5f64..1.5, 6 * 2),
            w in prop::collection::vec(-1.0f64..1.0, 2 * 2 + 2),
            loss in any_loss(),
            nonlinear in any::<bool>(),
            mlp in any::<bool>(),
        ) {
            let scorer = if mlp { ScorerSpec::mlp1(2, 2) } else { ScorerSpec::linear(2) };
            let w = &w[..scorer.param_count()];
            let pts: Vec<&[f64]> = seed_pts.chunks(2).collect();
            let (p, n) = pts.split_at(2);
            let outer = if nonlinear { OuterFnSpec::kl_log(1.5) } else { OuterFnSpec::Identity };
            let g = exact_grad(&loss, &outer, &scorer, w, p, n).unwrap();
            let fd = finite_diff_grad(|v| exact_objective(&loss, &outer, &scorer, v, p, n).unwrap(), w, 1e-6);
            prop_assert!(rel_err(&g, &fd) <= 1e-5, "rel err {}", rel_err(&g, &fd));
        }
    }
}
