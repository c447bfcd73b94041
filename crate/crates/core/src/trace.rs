//! Run traces: per-round records, optional per-iteration records, and the
//! CSV writer used by the harness.
//!
//! CSV layout (one file per run):
//!
//! ```text
//! # config: <resolved config, `key=value` pairs joined by `; `>
//! round,wall_seconds,objective,grad_norm_sq,auc,pauc@0.3,pauc@0.5,uplink_floats,downlink_floats,buffer_wraps
//! 0,1.2000000000000000e-3,...
//! ```
//!
//! Reals use 17 significant digits; values not evaluated at a round are empty.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub wall_seconds: f64,
    /// Exact `F(w̄^r)` on the training data.
    pub objective: Option<f64>,
    /// Exact `‖∇F(w̄^r)‖²`.
    pub grad_norm_sq: Option<f64>,
    pub auc: Option<f64>,
    /// Aligned with the run's FPR caps.
    pub pauc: Vec<Option<f64>>,
    /// Summed over all clients.
    pub uplink_floats: usize,
    pub downlink_floats: usize,
    pub buffer_wraps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub client: usize,
    pub round: usize,
    pub iteration: usize,
    pub loss_estimate: f64,
    pub step_size: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub pauc_fprs: Vec<f64>,
    pub rounds: Vec<RoundRecord>,
    pub iterations: Vec<IterationRecord>,
}

impl RunTrace {
    pub fn last(&self) -> Option<&RoundRecord> {
        self.rounds.last()
    }

    /// Last evaluated pAUC at `fpr`.
    pub fn final_pauc(&self, fpr: f64) -> Option<f64> {
        let col = self.pauc_fprs.iter().position(|f| *f == fpr)?;
        self.rounds.iter().rev().find_map(|r| r.pauc[col])
    }

    pub fn final_auc(&self) -> Option<f64> {
        self.rounds.iter().rev().find_map(|r| r.auc)
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.rounds.iter().rev().find_map(|r| r.objective)
    }

    pub fn total_floats(&self) -> usize {
        self.rounds.iter().map(|r| r.uplink_floats + r.downlink_floats).sum()
    }

    /// Running mean of `‖∇F(w̄^r)‖²` over rounds `1..=r`, for every round
    /// where the gradient was evaluated (round 0 excluded).
    pub fn running_grad_norm_mean(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut sum = 0.0;
        let mut n = 0usize;
        for r in self.rounds.iter().filter(|r| r.round >= 1) {
            if let Some(g) = r.grad_norm_sq {
                sum += g;
                n += 1;
                out.push((r.round, sum / n as f64));
            }
        }
        out
    }
}

/// Receives records as a run progresses.
pub trait TraceSink {
    fn round(&mut self, rec: &RoundRecord) -> Result<()>;
    fn iteration(&mut self, _rec: &IterationRecord) -> Result<()> {
        Ok(())
    }
}

pub struct NullSink;

impl TraceSink for NullSink {
    fn round(&mut self, _rec: &RoundRecord) -> Result<()> {
        Ok(())
    }
}

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

pub fn csv_header(pauc_fprs: &[f64]) -> String {
    let mut cols = vec![
        "round".to_string(),
        "wall_seconds".into(),
        "objective".into(),
        "grad_norm_sq".into(),
        "auc".into(),
    ];
    cols.extend(pauc_fprs.iter().map(|f| format!("pauc@{f}")));
    cols.extend(["uplink_floats".into(), "downlink_floats".into(), "buffer_wraps".into()]);
    cols.join(",")
}

pub fn csv_row(rec: &RoundRecord) -> String {
    let mut cols = vec![
        rec.round.to_string(),
        fmt_real(rec.wall_seconds),
        fmt_opt(rec.objective),
        fmt_opt(rec.grad_norm_sq),
        fmt_opt(rec.auc),
    ];
    cols.extend(rec.pauc.iter().map(|p| fmt_opt(*p)));
    cols.extend([
        rec.uplink_floats.to_string(),
        rec.downlink_floats.to_string(),
        rec.buffer_wraps.to_string(),
    ]);
    cols.join(",")
}

/// Append-only CSV trace, flushed after every record so an interrupted run
/// leaves a valid prefix.
pub struct CsvTraceWriter {
    out: BufWriter<File>,
    iterations: Option<BufWriter<File>>,
}

impl CsvTraceWriter {
    /// Opens (truncating) `path` and writes the two header lines. With
    /// `log_iterations`, per-iteration rows go to `<path>.iterations.csv`.
    pub fn create(path: &Path, config_echo: &str, pauc_fprs: &[f64], log_iterations: bool) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# config: {config_echo}")?;
        writeln!(out, "{}", csv_header(pauc_fprs))?;
        out.flush()?;
        let iterations = if log_iterations {
            let mut p = path.as_os_str().to_owned();
            p.push(".iterations.csv");
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "client,round,iteration,loss_estimate,step_size")?;
            Some(w)
        } else {
            None
        };
        Ok(CsvTraceWriter { out, iterations })
    }
}

impl TraceSink for CsvTraceWriter {
    fn round(&mut self, rec: &RoundRecord) -> Result<()> {
        writeln!(self.out, "{}", csv_row(rec))?;
        self.out.flush()?;
        if let Some(w) = self.iterations.as_mut() {
            w.flush()?;
        }
        Ok(())
    }

    fn iteration(&mut self, rec: &IterationRecord) -> Result<()> {
        if let Some(w) = self.iterations.as_mut() {
            writeln!(
                w,
                "{},{},{},{},{}",
                rec.client,
                rec.round,
                rec.iteration,
                fmt_real(rec.loss_estimate),
                fmt_real(rec.step_size)
            )?;
        }
        Ok(())
    }
}

/// Parse a trace CSV back into records (the config comment is returned
/// separately). Used by tests and the sweep summary.
pub fn read_trace_csv(text: &str) -> Result<(String, RunTrace)> {
    let mut lines = text.lines();
    let perr = |line: usize, msg: &str| Error::Parse {
        line,
        msg: msg.to_string(),
    };
    let config = lines
        .next()
        .and_then(|l| l.strip_prefix("# config: "))
        .ok_or_else(|| perr(1, "missing config comment"))?
        .to_string();
    let header = lines.next().ok_or_else(|| perr(2, "missing header"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 8 || cols[0] != "round" {
        return Err(perr(2, "unexpected header"));
    }
    let pauc_fprs = cols[5..cols.len() - 3]
        .iter()
        .map(|c| {
            c.strip_prefix("pauc@")
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| perr(2, "bad pauc column"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut trace = RunTrace {
        pauc_fprs,
        ..RunTrace::default()
    };
    for (i, line) in lines.enumerate() {
        let n = i + 3;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(perr(n, "wrong column count"));
        }
        let real = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|_| perr(n, "bad real"))
            }
        };
        let int = |s: &str| s.parse::<usize>().map_err(|_| perr(n, "bad integer"));
        let k = f.len();
        trace.rounds.push(RoundRecord {
            round: int(f[0])?,
            wall_seconds: real(f[1])?.unwrap_or(0.0),
            objective: real(f[2])?,
            grad_norm_sq: real(f[3])?,
            auc: real(f[4])?,
            pauc: f[5..k - 3].iter().map(|s| real(s)).collect::<Result<Vec<_>>>()?,
            uplink_floats: int(f[k - 3])?,
            downlink_floats: int(f[k - 2])?,
            buffer_wraps: int(f[k - 1])?,
        });
    }
    Ok((config, trace))
}
