use std::path::Path;

use super::RunConfig;
use crate::algorithms::{
    centralized_run, fedx1_run, fedx2_run, initial_model, local_pair_run, local_sgd_run, Algorithm, RunSetup,
};
use crate::data::{build, FederatedDataset};
use crate::error::Result;
use crate::losses::{exact_grad_with, exact_objective_with};
use crate::parallel::Executor;
use crate::trace::{fmt_real, CsvTraceWriter, NullSink, RunTrace, TraceSink};

pub fn build_data(cfg: &RunConfig) -> Result<FederatedDataset> {
    build(&cfg.data)
}

/// Run `cfg` on already-built data, streaming records into `sink`.
pub fn run_with_sink(
    cfg: &RunConfig,
    data: &FederatedDataset,
    ex: &Executor,
    sink: &mut dyn TraceSink,
) -> Result<RunTrace> {
    cfg.validate()?;
    let setup = RunSetup {
        data,
        objective: cfg.objective(),
        hyper: cfg.hyper.clone(),
        plan: cfg.plan.clone(),
        executor: ex,
    };
    match cfg.algorithm {
        Algorithm::Fedx1 => fedx1_run(&setup, sink),
        Algorithm::Fedx2 => fedx2_run(&setup, sink),
        Algorithm::LocalSgd => local_sgd_run(&setup, sink),
        Algorithm::LocalPair => local_pair_run(&setup, sink),
        Algorithm::Centralized => centralized_run(&setup, sink),
    }
}

/// Build data and run. When `output_path` is set the trace file is created
/// first, so an unwritable path fails before any work is done.
pub fn run(cfg: &RunConfig, ex: &Executor) -> Result<RunTrace> {
    cfg.validate()?;
    match &cfg.output_path {
        Some(path) => {
            let mut sink = CsvTraceWriter::create(Path::new(path), &cfg.echo(), &cfg.plan.pauc_fprs, cfg.plan.log_iterations)?;
            let data = build_data(cfg)?;
            run_with_sink(cfg, &data, ex, &mut sink)
        }
        None => {
            let data = build_data(cfg)?;
            run_with_sink(cfg, &data, ex, &mut NullSink)
        }
    }
}

/// Final objective, final pAUC at the first FPR cap, total floats sent.
pub fn summary_line(trace: &RunTrace) -> String {
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), fmt_real);
    let pauc = match trace.pauc_fprs.first() {
        Some(&f) => format!("pauc@{f}={}", opt(trace.final_pauc(f))),
        None => "pauc=n/a".into(),
    };
    format!(
        "rounds={} objective={} {} auc={} floats={}",
        trace.rounds.last().map_or(0, |r| r.round),
        opt(trace.final_objective()),
        pauc,
        opt(trace.final_auc()),
        trace.total_floats()
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub objective: f64,
    pub grad: Vec<f64>,
}

/// Exact objective and gradient at the initial model.
pub fn oracle_at_init(cfg: &RunConfig, ex: &Executor) -> Result<OracleReport> {
    cfg.validate()?;
    let data = build_data(cfg)?;
    let (s1, s2) = data.train_sets();
    let w0 = initial_model(&cfg.scorer, &cfg.hyper)?;
    let objective = exact_objective_with(ex, &cfg.loss, &cfg.outer, &cfg.scorer, &w0, &s1, &s2)?;
    let grad = exact_grad_with(ex, &cfg.loss, &cfg.outer, &cfg.scorer, &w0, &s1, &s2)?.into_inner();
    Ok(OracleReport { objective, grad })
}
