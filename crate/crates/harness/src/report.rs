//! CSV reports, one schema per command. Every row starts with
//! `schema_version`; headers change only together with [`SCHEMA_VERSION`].
//!
//! | command | columns after `schema_version` |
//! |---|---|
//! | forward | n, d_model, output_sha256, output_max_abs, score_evals |
//! | oracle-diff | n, pooling, mix, share_projections, oracle, max_rel_err, threshold, pass |
//! | gradcheck | n, pooling, mix, share_projections, tensor, entries, max_rel_err, threshold, pass |
//! | bench | pattern, n, trials, median_ns, per_token_ns, score_evals, peak_bytes |
//! | cost | pattern, n, w1, w2, kappa, xi, globals, score_evals, per_token_mean, pool_reads, bytes_touched, peak_bytes |

use std::io::Write;

use poolattn::CostReport;

use crate::bench::BenchRecord;
use crate::error::Result;
use crate::verify::{DiffReport, GradReport};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRow {
    pub n: usize,
    pub d_model: usize,
    pub output_sha256: String,
    pub output_max_abs: f64,
    pub score_evals: u64,
}

fn writer<W: Write>(out: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::Writer::from_writer(out);
    let mut cols = vec!["schema_version"];
    cols.extend_from_slice(header);
    w.write_record(&cols)?;
    Ok(w)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn v() -> String {
    SCHEMA_VERSION.to_string()
}

pub fn write_forward<W: Write>(out: W, rows: &[ForwardRow]) -> Result<()> {
    let mut w = writer(out, &["n", "d_model", "output_sha256", "output_max_abs", "score_evals"])?;
    for r in rows {
        w.write_record([v(), r.n.to_string(), r.d_model.to_string(), r.output_sha256.clone(), format!("{:e}", r.output_max_abs), r.score_evals.to_string()])?;
    }
    finish(w)
}

pub fn write_oracle_diff<W: Write>(out: W, report: &DiffReport) -> Result<()> {
    let mut w = writer(out, &["n", "pooling", "mix", "share_projections", "oracle", "max_rel_err", "threshold", "pass"])?;
    for r in &report.rows {
        w.write_record([
            v(),
            r.n.to_string(),
            r.pooling.to_string(),
            r.mix.to_string(),
            r.share.to_string(),
            r.oracle.to_string(),
            format!("{:e}", r.max_rel_err),
            format!("{:e}", report.threshold),
            (r.max_rel_err <= report.threshold).to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_gradcheck<W: Write>(out: W, report: &GradReport) -> Result<()> {
    let mut w = writer(out, &["n", "pooling", "mix", "share_projections", "tensor", "entries", "max_rel_err", "threshold", "pass"])?;
    for r in &report.rows {
        w.write_record([
            v(),
            r.n.to_string(),
            r.pooling.to_string(),
            r.mix.to_string(),
            r.share.to_string(),
            r.tensor.clone(),
            r.entries.to_string(),
            format!("{:e}", r.max_rel_err),
            format!("{:e}", report.threshold),
            (r.max_rel_err <= report.threshold).to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_bench<W: Write>(out: W, records: &[BenchRecord]) -> Result<()> {
    let mut w = writer(out, &["pattern", "n", "trials", "median_ns", "per_token_ns", "score_evals", "peak_bytes"])?;
    for r in records {
        w.write_record([
            v(),
            r.pattern.clone(),
            r.n.to_string(),
            r.trials.to_string(),
            r.median_ns.to_string(),
            format!("{:.3}", r.per_token_ns),
            r.score_evals.to_string(),
            r.peak_bytes.to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_cost<W: Write>(out: W, rows: &[(CostReport, u64)]) -> Result<()> {
    let mut w = writer(
        out,
        &["pattern", "n", "w1", "w2", "kappa", "xi", "globals", "score_evals", "per_token_mean", "pool_reads", "bytes_touched", "peak_bytes"],
    )?;
    for (r, peak) in rows {
        w.write_record([
            v(),
            r.pattern.clone(),
            r.n.to_string(),
            r.w1.to_string(),
            r.w2.to_string(),
            r.kappa.to_string(),
            r.xi.to_string(),
            r.globals.to_string(),
            r.score_evals.to_string(),
            format!("{:.4}", r.per_token_mean()),
            r.pool_reads.to_string(),
            r.bytes_touched.to_string(),
            peak.to_string(),
        ])?;
    }
    finish(w)
}
