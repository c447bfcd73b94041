//! Scalar scoring functions `h(w, x)` and their parameter gradients.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Dense model parameter vector.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) {
        debug_assert_eq!(self.0.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.0 {
            *a *= alpha;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScorerKind {
    Linear,
    /// One tanh hidden layer, no biases.
    Mlp1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    pub input_dim: usize,
    /// Ignored by the linear scorer.
    pub hidden_dim: usize,
}

impl ScorerSpec {
    pub fn linear(input_dim: usize) -> Self {
        ScorerSpec {
            kind: ScorerKind::Linear,
            input_dim,
            hidden_dim: 0,
        }
    }

    pub fn mlp1(input_dim: usize, hidden_dim: usize) -> Self {
        ScorerSpec {
            kind: ScorerKind::Mlp1,
            input_dim,
            hidden_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ScorerKind::Linear => self.input_dim,
            ScorerKind::Mlp1 => self.input_dim * self.hidden_dim + self.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("scorer input_dim must be positive"));
        }
        if self.kind == ScorerKind::Mlp1 && self.hidden_dim == 0 {
            return Err(Error::invalid("mlp1 hidden_dim must be positive"));
        }
        Ok(())
    }

    fn check(&self, w: &[f64], x: &[f64]) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "parameter length {} does not match scorer ({})",
                w.len(),
                self.param_count()
            )));
        }
        if x.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "feature length {} does not match input_dim {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// `h(w, x)`.
    pub fn score(&self, w: &[f64], x: &[f64]) -> Result<f64> {
        self.check(w, x)?;
        Ok(self.score_unchecked(w, x))
    }

    /// `∇_w h(w, x)`.
    pub fn score_grad(&self, w: &[f64], x: &[f64]) -> Result<ParamVector> {
        self.check(w, x)?;
        let mut g = ParamVector::zeros(w.len());
        self.score_with_grad_unchecked(w, x, &mut g);
        Ok(g)
    }

    /// Score and gradient in one pass; `grad` is overwritten.
    pub fn score_with_grad(&self, w: &[f64], x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check(w, x)?;
        if grad.len() != w.len() {
            return Err(Error::invalid("gradient buffer length mismatch"));
        }
        Ok(self.score_with_grad_unchecked(w, x, grad))
    }

    pub(crate) fn score_unchecked(&self, w: &[f64], x: &[f64]) -> f64 {
        match self.kind {
            ScorerKind::Linear => dot(w, x),
            ScorerKind::Mlp1 => {
                let (hidden, out) = w.split_at(self.input_dim * self.hidden_dim);
                hidden
                    .chunks_exact(self.input_dim)
                    .zip(out)
                    .map(|(row, v)| v * dot(row, x).tanh())
                    .sum()
            }
        }
    }

    pub(crate) fn score_with_grad_unchecked(&self, w: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
        match self.kind {
            ScorerKind::Linear => {
                grad.copy_from_slice(x);
                dot(w, x)
            }
            ScorerKind::Mlp1 => {
                let split = self.input_dim * self.hidden_dim;
                let (hidden, out) = w.split_at(split);
                let (g_hidden, g_out) = grad.split_at_mut(split);
                let mut s = 0.0;
                for (j, (row, g_row)) in hidden
                    .chunks_exact(self.input_dim)
                    .zip(g_hidden.chunks_exact_mut(self.input_dim))
                    .enumerate()
                {
                    let a = dot(row, x).tanh();
                    s += out[j] * a;
                    g_out[j] = a;
                    let back = out[j] * (1.0 - a * a);
                    for (g, xi) in g_row.iter_mut().zip(x) {
                        *g = back * xi;
                    }
                }
                s
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central finite differences, one coordinate at a time.
pub fn finite_diff_grad<F>(f: F, w: &[f64], step: f64) -> ParamVector
where
    F: Fn(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = w.to_vec();
    let mut out = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        probe[i] = w[i] + step;
        let up = f(&probe);
        probe[i] = w[i] - step;
        let down = f(&probe);
        probe[i] = w[i];
        out.push((up - down) / (2.0 * step));
    }
    ParamVector(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Scalar-by-scalar recomputation of the mlp1 score, written
    /// independently of `score_unchecked`.
    fn mlp1_reference(input_dim: usize, hidden_dim: usize, w: &[f64], x: &[f64]) -> f64 {
        let mut total = 0.0;
        for j in 0..hidden_dim {
            let mut pre = 0.0;
            for k in 0..input_dim {
                pre += w[j * input_dim + k] * x[k];
            }
            total += w[input_dim * hidden_dim + j] * pre.tanh();
        }
        total
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / norm.max(1.0)
    }

    #[test]
    fn linear_score_by_hand() {
        let s = ScorerSpec::linear(2);
        assert_eq!(s.score(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(s.score_grad(&[9.0, -1.0], &[3.0, 4.0]).unwrap().to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn mlp1_zero_weights() {
        let s = ScorerSpec::mlp1(3, 2);
        let w = vec![0.0; s.param_count()];
        let x = [0.3, -1.2, 2.0];
        assert_eq!(s.score(&w, &x).unwrap(), 0.0);
        assert!(s.score_grad(&w, &x).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn param_counts() {
        assert_eq!(ScorerSpec::linear(7).param_count(), 7);
        assert_eq!(ScorerSpec::mlp1(7, 3).param_count(), 24);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let s = ScorerSpec::linear(2);
        assert!(matches!(s.score(&[1.0], &[1.0, 2.0]), Err(Error::InvalidArgument(_))));
        assert!(matches!(s.score_grad(&[1.0, 2.0], &[1.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn finite_diff_quadratic_and_constant() {
        let g = finite_diff_grad(|w| dot(w, w), &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let z = finite_diff_grad(|_| 3.5, &[1.0, 2.0, 3.0], 1e-5);
        assert!(z.iter().all(|v| *v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn mlp1_matches_reference(
            w in prop::collection::vec(-2.0f64..2.0, 8),
            x in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            let s = ScorerSpec::mlp1(3, 2);
            let got = s.score(&w, &x).unwrap();
            let want = mlp1_reference(3, 2, &w, &x);
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }

        #[test]
        fn gradients_match_finite_differences(
            w in prop::collection::vec(-1.5f64..1.5, 16),
            x in prop::collection::vec(-2.0f64..2.0, 3),
            use_mlp in any::<bool>(),
        ) {
            let s = if use_mlp { ScorerSpec::mlp1(3, 4) } else { ScorerSpec::linear(3) };
            let w = &w[..s.param_count()];
            let g = s.score_grad(w, &x).unwrap();
            let fd = finite_diff_grad(|v| s.score(v, &x).unwrap(), w, 1e-5);
            prop_assert!(rel_err(&g, &fd) <= 1e-5, "rel err {}", rel_err(&g, &fd));
        }

        #[test]
        fn linear_is_homogeneous_in_x(
            w in prop::collection::vec(-3.0f64..3.0, 4),
            x in prop::collection::vec(-3.0f64..3.0, 4),
            alpha in -10.0f64..10.0,
        ) {
            let s = ScorerSpec::linear(4);
            let ax: Vec<f64> = x.iter().map(|v| alpha * v).collect();
            let lhs = s.score(&w, &ax).unwrap();
            let rhs = alpha * s.score(&w, &x).unwrap();
            let scale = w.iter().zip(&ax).map(|(a, b)| (a * b).abs()).sum::<f64>().max(1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn score_is_deterministic(
            w in prop::collection::vec(-2.0f64..2.0, 15),
            x in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            let s = ScorerSpec::mlp1(2, 5);
            prop_assert_eq!(s.score(&w, &x).unwrap().to_bits(), s.score(&w, &x).unwrap().to_bits());
        }
    }
}
