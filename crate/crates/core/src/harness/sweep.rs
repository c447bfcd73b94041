use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::run::{run, summary_line};
use super::RunConfig;
use crate::error::{Error, Result};
use crate::parallel::Executor;
use crate::trace::fmt_real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Local steps per round.
    K,
    /// Number of clients, with total data held fixed.
    N,
}

impl SweepAxis {
    fn name(&self) -> &'static str {
        match self {
            SweepAxis::K => "K",
            SweepAxis::N => "N",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    pub trace_path: PathBuf,
    pub final_objective: Option<f64>,
    pub pauc_03: Option<f64>,
    pub pauc_05: Option<f64>,
    pub floats: usize,
}

/// `base` with `axis` set to `value`. Varying N keeps the total positive
/// and negative counts of `base`, so every value must divide them.
pub fn config_for(base: &RunConfig, axis: SweepAxis, value: usize) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::K => cfg.hyper.local_steps = value,
        SweepAxis::N => {
            let d = &base.data;
            let (pos, neg) = (d.n_pos_per_client * d.n_clients, d.n_neg_per_client * d.n_clients);
            if value == 0 || pos % value != 0 || neg % value != 0 {
                return Err(Error::config(
                    "data.n_clients",
                    format!("{value} clients cannot split {pos} positives and {neg} negatives evenly"),
                ));
            }
            cfg.data.n_clients = value;
            cfg.data.n_pos_per_client = pos / value;
            cfg.data.n_neg_per_client = neg / value;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One run per value, each writing `trace_<axis>_<value>.csv` in `out_dir`,
/// then `summary.csv`. Runs are sequential; a failed run stops the sweep and
/// leaves the traces written so far (and the partial summary) in place.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[usize], out_dir: &Path, ex: &Executor) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let configs = values
        .iter()
        .map(|&v| config_for(base, axis, v))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out_dir)?;
    let mut summary = File::create(out_dir.join("summary.csv"))?;
    writeln!(summary, "value,final_objective,final_pauc@0.3,final_pauc@0.5,floats_communicated")?;
    let mut rows = Vec::new();
    for (&value, mut cfg) in values.iter().zip(configs) {
        let path = out_dir.join(format!("trace_{}_{value}.csv", axis.name()));
        cfg.output_path = Some(path.to_string_lossy().into_owned());
        let trace = run(&cfg, ex)?;
        eprintln!("{}={value}: {}", axis.name(), summary_line(&trace));
        let row = SweepRow {
            value,
            trace_path: path,
            final_objective: trace.final_objective(),
            pauc_03: trace.final_pauc(0.3),
            pauc_05: trace.final_pauc(0.5),
            floats: trace.total_floats(),
        };
        let opt = |v: Option<f64>| v.map(fmt_real).unwrap_or_default();
        writeln!(
            summary,
            "{},{},{},{},{}",
            row.value,
            opt(row.final_objective),
            opt(row.pauc_03),
            opt(row.pauc_05),
            row.floats
        )?;
        summary.flush()?;
        rows.push(row);
    }
    Ok(rows)
}
