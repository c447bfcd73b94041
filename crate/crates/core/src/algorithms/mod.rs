//! FedX1, FedX2, the local and centralized baselines, and the shared
//! machinery they run on: hyperparameters, stochastic estimators, the
//! u-table, and the round driver that produces a [`RunTrace`].

mod baselines;
mod driver;
mod estimators;
mod fedx1;
mod fedx2;
mod schedule;

pub use baselines::{centralized_run, local_pair_run, local_sgd_run, LocalPairClient, LocalSgdClient};
pub use driver::{initial_model, EvalPlan, RunSetup};
pub use estimators::{
    fedx1_estimate, fedx2_estimate, fedx2_u_update, momentum_update, sample_batch, score_batch, ActiveBatch, UTable,
};
pub use fedx1::{fedx1_run, Fedx1Client};
pub use fedx2::{fedx2_run, Fedx2Client};
pub use schedule::{theory_schedule, ScheduleKind};

use crate::error::{Error, Result};
use crate::losses::{OuterFnSpec, PairwiseLossSpec};
use crate::model::ScorerSpec;

#[cfg(doc)]
use crate::trace::RunTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Fedx1,
    Fedx2,
    LocalSgd,
    LocalPair,
    Centralized,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Fedx1 => "fedx1",
            Algorithm::Fedx2 => "fedx2",
            Algorithm::LocalSgd => "local_sgd",
            Algorithm::LocalPair => "local_pair",
            Algorithm::Centralized => "centralized",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "fedx1" => Algorithm::Fedx1,
            "fedx2" => Algorithm::Fedx2,
            "local_sgd" => Algorithm::LocalSgd,
            "local_pair" => Algorithm::LocalPair,
            "centralized" => Algorithm::Centralized,
            _ => return None,
        })
    }
}

/// Which samples the FedX2 histories are computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistorySamples {
    /// Fresh draws, independent of the update minibatch.
    Independent,
    /// The update minibatch itself.
    Reuse,
}

/// Starting value of every FedX2 u-table entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UInit {
    /// `u(z) = 0`.
    Zero,
    /// `u(z) = l(h(w0, z), h(w0, z'))` for one random bootstrap negative `z'`.
    Bootstrap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    /// Local step size.
    pub eta: f64,
    /// Local steps per round (K).
    pub local_steps: usize,
    /// Communication rounds (R).
    pub rounds: usize,
    /// Positive minibatch size (B1).
    pub b1: usize,
    /// Negative minibatch size (B2).
    pub b2: usize,
    /// u moving-average weight.
    pub gamma: f64,
    /// Gradient momentum weight.
    pub beta: f64,
    /// Multiply the step size by `lr_decay_factor` every this many local iterations.
    pub lr_decay_every: Option<usize>,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub history_samples: HistorySamples,
    pub u_init: UInit,
    /// Std of the Gaussian initial weights.
    pub init_scale: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            eta: 0.03,
            local_steps: 32,
            rounds: 20,
            b1: 32,
            b2: 32,
            gamma: 0.9,
            beta: 0.1,
            lr_decay_every: None,
            lr_decay_factor: 0.1,
            seed: 0,
            history_samples: HistorySamples::Independent,
            u_init: UInit::Bootstrap,
            init_scale: 0.1,
        }
    }
}

impl HyperParams {
    /// Defaults plus the experimental protocol's step-size decay
    /// (x0.1 every 5000 local iterations).
    pub fn benchmark_protocol() -> Self {
        HyperParams {
            lr_decay_every: Some(5000),
            ..HyperParams::default()
        }
    }

    /// Checks every field; errors name the offending `hyper.*` key.
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::config("hyper.eta", "must be a finite non-negative real"));
        }
        for (key, v) in [
            ("hyper.K", self.local_steps),
            ("hyper.R", self.rounds),
            ("hyper.B1", self.b1),
            ("hyper.B2", self.b2),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be a positive integer"));
            }
        }
        for (key, v) in [("hyper.gamma", self.gamma), ("hyper.beta", self.beta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(key, "must lie in (0, 1]"));
            }
        }
        if self.lr_decay_every == Some(0) {
            return Err(Error::config("hyper.lr_decay_every", "must be positive or none"));
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 0.0) {
            return Err(Error::config("hyper.lr_decay_factor", "must be a positive real"));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::config("hyper.init_scale", "must be a finite non-negative real"));
        }
        Ok(())
    }

    /// Step size in effect at local iteration `k` of `round` (1-based).
    pub fn step_size(&self, round: usize, k: usize) -> f64 {
        match self.lr_decay_every {
            Some(every) => {
                let t = (round.saturating_sub(1)) * self.local_steps + k;
                self.eta * self.lr_decay_factor.powi((t / every) as i32)
            }
            None => self.eta,
        }
    }
}

/// Scorer, pairwise loss and outer function: everything that defines `F`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub scorer: ScorerSpec,
    pub loss: PairwiseLossSpec,
    pub outer: OuterFnSpec,
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        self.scorer.validate()?;
        self.loss.validate()?;
        self.outer.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_names_the_key() {
        let bad = |h: HyperParams, key: &str| match h.validate() {
            Err(Error::Config { key: k, .. }) => assert_eq!(k, key),
            other => panic!("expected config error for {key}, got {other:?}"),
        };
        bad(HyperParams { local_steps: 0, ..Default::default() }, "hyper.K");
        bad(HyperParams { rounds: 0, ..Default::default() }, "hyper.R");
        bad(HyperParams { b2: 0, ..Default::default() }, "hyper.B2");
        bad(HyperParams { gamma: 0.0, ..Default::default() }, "hyper.gamma");
        bad(HyperParams { beta: 1.5, ..Default::default() }, "hyper.beta");
        bad(HyperParams { eta: f64::NAN, ..Default::default() }, "hyper.eta");
        HyperParams::default().validate().unwrap();
        HyperParams::benchmark_protocol().validate().unwrap();
    }

    #[test]
    fn step_size_decays_on_global_iteration_count() {
        let h = HyperParams {
            eta: 1.0,
            local_steps: 4,
            lr_decay_every: Some(6),
            lr_decay_factor: 0.5,
            ..Default::default()
        };
        assert_eq!(h.step_size(1, 0), 1.0);
        assert_eq!(h.step_size(2, 1), 1.0);
        assert_eq!(h.step_size(2, 2), 0.5);
        assert_eq!(h.step_size(4, 0), 0.25);
        assert_eq!(HyperParams::default().step_size(99, 3), 0.03);
    }
}
