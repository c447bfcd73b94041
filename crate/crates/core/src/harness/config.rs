//! Flat `section.key = value` configuration.
//!
//! ```text
//! # comments run to end of line
//! algorithm = fedx2
//! seed = 7
//! data.n_clients = 4
//! loss.kind = kl_opauc
//! loss.lambda = 2
//! outer.kind = kl_log
//! hyper.K = 8
//! ```
//!
//! Every key is optional; an empty file is the default configuration.
//! `seed` sets both `data.seed` and `hyper.seed` unless those are given.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::algorithms::{Algorithm, EvalPlan, HistorySamples, HyperParams, Objective, UInit};
use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::losses::{OuterFnSpec, PairwiseLossSpec, DEFAULT_U_FLOOR};
use crate::model::{ScorerKind, ScorerSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub data: DataConfig,
    pub scorer: ScorerSpec,
    pub loss: PairwiseLossSpec,
    pub outer: OuterFnSpec,
    pub hyper: HyperParams,
    pub plan: EvalPlan,
    pub output_path: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DataConfig::default();
        RunConfig {
            algorithm: Algorithm::Fedx1,
            scorer: ScorerSpec::linear(data.input_dim),
            data,
            loss: PairwiseLossSpec::PsmSigmoid,
            outer: OuterFnSpec::Identity,
            hyper: HyperParams::default(),
            plan: EvalPlan::default(),
            output_path: None,
        }
    }
}

const KEYS: &[&str] = &[
    "algorithm",
    "seed",
    "output_path",
    "eval_every_rounds",
    "oracle_every_rounds",
    "pauc_fprs",
    "log_iterations",
    "data.n_pos_per_client",
    "data.n_neg_per_client",
    "data.input_dim",
    "data.n_clients",
    "data.hetero_step",
    "data.hetero_base",
    "data.hetero_var",
    "data.flip_fraction",
    "data.seed",
    "data.separation",
    "data.outlier_fraction",
    "data.outlier_distance",
    "data.n_eval_pos",
    "data.n_eval_neg",
    "scorer.kind",
    "scorer.hidden_dim",
    "loss.kind",
    "loss.lambda",
    "outer.kind",
    "outer.lambda",
    "outer.u_floor",
    "hyper.eta",
    "hyper.K",
    "hyper.R",
    "hyper.B1",
    "hyper.B2",
    "hyper.gamma",
    "hyper.beta",
    "hyper.lr_decay_every",
    "hyper.lr_decay_factor",
    "hyper.seed",
    "hyper.history_samples",
    "hyper.u_init",
    "hyper.init_scale",
];

struct Entries(BTreeMap<String, String>);

impl Entries {
    fn take<T: FromStr>(&mut self, key: &str, what: &str) -> Result<Option<T>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::config(key, format!("expected {what}, got `{v}`"))),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, what: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key, what)? {
            *slot = v;
        }
        Ok(())
    }

    fn word(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }
}

fn bad_choice(key: &str, v: &str, choices: &str) -> Error {
    Error::config(key, format!("`{v}` is not one of {choices}"))
}

fn config_err(key: &str, e: Error) -> Error {
    match e {
        Error::InvalidArgument(msg) => Error::config(key, msg),
        other => other,
    }
}

/// Parse and fully validate a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut raw = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n + 1,
            msg: "expected `key = value`".into(),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::config(k, "unknown key"));
        }
        if raw.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::config(k, "given more than once"));
        }
    }
    let mut e = Entries(raw);
    let mut cfg = RunConfig::default();

    if let Some(v) = e.word("algorithm") {
        cfg.algorithm = Algorithm::parse(&v)
            .ok_or_else(|| bad_choice("algorithm", &v, "fedx1, fedx2, local_sgd, local_pair, centralized"))?;
    }
    if let Some(seed) = e.take::<u64>("seed", "an unsigned integer")? {
        cfg.data.seed = seed;
        cfg.hyper.seed = seed;
    }
    cfg.output_path = e.word("output_path");
    e.set("eval_every_rounds", "a positive integer", &mut cfg.plan.eval_every)?;
    e.set("oracle_every_rounds", "a positive integer", &mut cfg.plan.oracle_every)?;
    e.set("log_iterations", "true or false", &mut cfg.plan.log_iterations)?;
    if let Some(v) = e.word("pauc_fprs") {
        cfg.plan.pauc_fprs = v
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config("pauc_fprs", format!("expected a comma-separated list of reals, got `{v}`")))?;
    }

    let d = &mut cfg.data;
    let int = "a non-negative integer";
    let real = "a real number";
    e.set("data.n_pos_per_client", int, &mut d.n_pos_per_client)?;
    e.set("data.n_neg_per_client", int, &mut d.n_neg_per_client)?;
    e.set("data.input_dim", int, &mut d.input_dim)?;
    e.set("data.n_clients", int, &mut d.n_clients)?;
    e.set("data.hetero_step", real, &mut d.hetero_step)?;
    e.set("data.hetero_base", real, &mut d.hetero_base)?;
    e.set("data.hetero_var", real, &mut d.hetero_var)?;
    e.set("data.flip_fraction", real, &mut d.flip_fraction)?;
    e.set("data.seed", "an unsigned integer", &mut d.seed)?;
    e.set("data.separation", real, &mut d.separation)?;
    e.set("data.outlier_fraction", real, &mut d.outlier_fraction)?;
    e.set("data.outlier_distance", real, &mut d.outlier_distance)?;
    e.set("data.n_eval_pos", int, &mut d.n_eval_pos)?;
    e.set("data.n_eval_neg", int, &mut d.n_eval_neg)?;

    let kind = match e.word("scorer.kind").as_deref() {
        None | Some("linear") => ScorerKind::Linear,
        Some("mlp1") => ScorerKind::Mlp1,
        Some(v) => return Err(bad_choice("scorer.kind", v, "linear, mlp1")),
    };
    let mut hidden = 8;
    e.set("scorer.hidden_dim", int, &mut hidden)?;
    cfg.scorer = match kind {
        ScorerKind::Linear => ScorerSpec::linear(cfg.data.input_dim),
        ScorerKind::Mlp1 => ScorerSpec::mlp1(cfg.data.input_dim, hidden),
    };

    let loss_lambda = e.take::<f64>("loss.lambda", real)?;
    cfg.loss = match e.word("loss.kind").as_deref() {
        None | Some("psm_sigmoid") => PairwiseLossSpec::PsmSigmoid,
        Some("square") => PairwiseLossSpec::Square,
        Some("kl_opauc") => PairwiseLossSpec::KlOpauc {
            lambda: loss_lambda.unwrap_or(1.0),
        },
        Some(v) => return Err(bad_choice("loss.kind", v, "psm_sigmoid, kl_opauc, square")),
    };
    let outer_lambda = e.take::<f64>("outer.lambda", real)?;
    let u_floor = e.take::<f64>("outer.u_floor", real)?;
    cfg.outer = match e.word("outer.kind").as_deref() {
        None | Some("identity") => OuterFnSpec::Identity,
        Some("kl_log") => OuterFnSpec::KlLog {
            // the outer λ follows the loss λ unless set separately
            lambda: outer_lambda.or(loss_lambda).unwrap_or(1.0),
            u_floor: u_floor.unwrap_or(DEFAULT_U_FLOOR),
        },
        Some(v) => return Err(bad_choice("outer.kind", v, "identity, kl_log")),
    };

    let h = &mut cfg.hyper;
    e.set("hyper.eta", real, &mut h.eta)?;
    e.set("hyper.K", int, &mut h.local_steps)?;
    e.set("hyper.R", int, &mut h.rounds)?;
    e.set("hyper.B1", int, &mut h.b1)?;
    e.set("hyper.B2", int, &mut h.b2)?;
    e.set("hyper.gamma", real, &mut h.gamma)?;
    e.set("hyper.beta", real, &mut h.beta)?;
    if let Some(v) = e.word("hyper.lr_decay_every") {
        h.lr_decay_every = if v == "none" {
            None
        } else {
            Some(v.parse().map_err(|_| {
                Error::config("hyper.lr_decay_every", format!("expected an integer or `none`, got `{v}`"))
            })?)
        };
    }
    e.set("hyper.lr_decay_factor", real, &mut h.lr_decay_factor)?;
    e.set("hyper.seed", "an unsigned integer", &mut h.seed)?;
    if let Some(v) = e.word("hyper.history_samples") {
        h.history_samples = match v.as_str() {
            "independent" => HistorySamples::Independent,
            "reuse" => HistorySamples::Reuse,
            _ => return Err(bad_choice("hyper.history_samples", &v, "independent, reuse")),
        };
    }
    if let Some(v) = e.word("hyper.u_init") {
        h.u_init = match v.as_str() {
            "zero" => UInit::Zero,
            "bootstrap" => UInit::Bootstrap,
            _ => return Err(bad_choice("hyper.u_init", &v, "zero, bootstrap")),
        };
    }
    e.set("hyper.init_scale", real, &mut h.init_scale)?;
    debug_assert!(e.0.is_empty(), "unhandled keys: {:?}", e.0.keys());

    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn objective(&self) -> Objective {
        Objective {
            scorer: self.scorer,
            loss: self.loss,
            outer: self.outer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.scorer.validate().map_err(|e| config_err("scorer.hidden_dim", e))?;
        self.loss.validate().map_err(|e| config_err("loss.lambda", e))?;
        self.outer.validate().map_err(|e| config_err("outer.lambda", e))?;
        self.hyper.validate()?;
        self.plan.validate()?;
        match (self.algorithm, self.outer.is_identity()) {
            (Algorithm::Fedx1, false) => Err(Error::config("outer.kind", "fedx1 requires outer.kind = identity")),
            (Algorithm::Fedx2, true) => Err(Error::config("outer.kind", "fedx2 requires outer.kind = kl_log")),
            _ => Ok(()),
        }
    }

    /// Every resolved key that affects the computation, in canonical order.
    /// `output_path` is left out so traces of the same experiment written
    /// to different places are byte-identical.
    pub fn resolved(&self) -> Vec<(&'static str, String)> {
        fn s(v: impl Display) -> String {
            v.to_string()
        }
        let d = &self.data;
        let h = &self.hyper;
        let mut out = vec![
            ("algorithm", s(self.algorithm.name())),
            (
                "pauc_fprs",
                self.plan.pauc_fprs.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("eval_every_rounds", s(self.plan.eval_every)),
            ("oracle_every_rounds", s(self.plan.oracle_every)),
            ("log_iterations", s(self.plan.log_iterations)),
            ("data.n_pos_per_client", s(d.n_pos_per_client)),
            ("data.n_neg_per_client", s(d.n_neg_per_client)),
            ("data.input_dim", s(d.input_dim)),
            ("data.n_clients", s(d.n_clients)),
            ("data.hetero_step", s(d.hetero_step)),
            ("data.hetero_base", s(d.hetero_base)),
            ("data.hetero_var", s(d.hetero_var)),
            ("data.flip_fraction", s(d.flip_fraction)),
            ("data.seed", s(d.seed)),
            ("data.separation", s(d.separation)),
            ("data.outlier_fraction", s(d.outlier_fraction)),
            ("data.outlier_distance", s(d.outlier_distance)),
            ("data.n_eval_pos", s(d.n_eval_pos)),
            ("data.n_eval_neg", s(d.n_eval_neg)),
            (
                "scorer.kind",
                s(match self.scorer.kind {
                    ScorerKind::Linear => "linear",
                    ScorerKind::Mlp1 => "mlp1",
                }),
            ),
        ];
        if self.scorer.kind == ScorerKind::Mlp1 {
            out.push(("scorer.hidden_dim", s(self.scorer.hidden_dim)));
        }
        out.push(("loss.kind", s(self.loss.name())));
        if let PairwiseLossSpec::KlOpauc { lambda } = self.loss {
            out.push(("loss.lambda", s(lambda)));
        }
        out.push(("outer.kind", s(self.outer.name())));
        if let OuterFnSpec::KlLog { lambda, u_floor } = self.outer {
            out.push(("outer.lambda", s(lambda)));
            out.push(("outer.u_floor", s(u_floor)));
        }
        out.extend([
            ("hyper.eta", s(h.eta)),
            ("hyper.K", s(h.local_steps)),
            ("hyper.R", s(h.rounds)),
            ("hyper.B1", s(h.b1)),
            ("hyper.B2", s(h.b2)),
            ("hyper.gamma", s(h.gamma)),
            ("hyper.beta", s(h.beta)),
            ("hyper.lr_decay_every", h.lr_decay_every.map_or("none".into(), s)),
            ("hyper.lr_decay_factor", s(h.lr_decay_factor)),
            ("hyper.seed", s(h.seed)),
            (
                "hyper.history_samples",
                s(match h.history_samples {
                    HistorySamples::Independent => "independent",
                    HistorySamples::Reuse => "reuse",
                }),
            ),
            (
                "hyper.u_init",
                s(match h.u_init {
                    UInit::Zero => "zero",
                    UInit::Bootstrap => "bootstrap",
                }),
            ),
            ("hyper.init_scale", s(h.init_scale)),
        ]);
        out
    }

    /// One-line form for the trace header.
    pub fn echo(&self) -> String {
        self.resolved()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("; ")
    }

    /// Multi-line form accepted by [`parse_config`]; reproduces this
    /// configuration exactly.
    pub fn to_config_text(&self) -> String {
        let mut text: String = self.resolved().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        if let Some(p) = &self.output_path {
            text.push_str(&format!("output_path = {p}\n"));
        }
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(r: Result<RunConfig>) -> String {
        match r {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_all_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.data.n_clients, 16);
        assert_eq!(c.hyper.local_steps, 32);
        assert_eq!((c.hyper.b1, c.hyper.b2), (32, 32));
        assert_eq!(c.hyper.beta, 0.1);
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of(parse_config("hyper.K = 0")), "hyper.K");
        assert_eq!(key_of(parse_config("algorithm = fedx1\nouter.kind = kl_log")), "outer.kind");
        assert_eq!(key_of(parse_config("algorithm = fedx2")), "outer.kind");
        assert_eq!(key_of(parse_config("hyper.nope = 1")), "hyper.nope");
        assert_eq!(key_of(parse_config("hyper.eta = fast")), "hyper.eta");
        assert_eq!(key_of(parse_config("hyper.gamma = 0")), "hyper.gamma");
        assert_eq!(key_of(parse_config("loss.kind = hinge")), "loss.kind");
        assert_eq!(key_of(parse_config("loss.kind = kl_opauc\nloss.lambda = -1")), "loss.lambda");
        assert_eq!(key_of(parse_config("data.n_clients = 0")), "data.n_clients");
        assert_eq!(key_of(parse_config("pauc_fprs = 0.3, 2")), "pauc_fprs");
        assert_eq!(key_of(parse_config("hyper.K = 2\nhyper.K = 3")), "hyper.K");
        assert!(matches!(parse_config("just words"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn comments_seed_and_lambda_sharing() {
        let c = parse_config(
            "# header\nalgorithm = fedx2 # trailing\nseed = 9\nhyper.seed = 4\nloss.kind = kl_opauc\nloss.lambda = 2\nouter.kind = kl_log\nscorer.kind = mlp1\n",
        )
        .unwrap();
        assert_eq!(c.algorithm, Algorithm::Fedx2);
        assert_eq!((c.data.seed, c.hyper.seed), (9, 4));
        assert_eq!(c.outer, OuterFnSpec::kl_log(2.0));
        assert_eq!(c.scorer, ScorerSpec::mlp1(10, 8));
    }

    #[test]
    fn resolved_text_round_trips() {
        let c = parse_config(
            "algorithm = fedx2\nloss.kind = kl_opauc\nloss.lambda = 2\nouter.kind = kl_log\nhyper.lr_decay_every = 50\noutput_path = /tmp/x.csv\nhyper.eta = 0.123456789012345678",
        )
        .unwrap();
        assert_eq!(parse_config(&c.to_config_text()).unwrap(), c);
        assert!(c.echo().starts_with("algorithm=fedx2; "));
    }
}
