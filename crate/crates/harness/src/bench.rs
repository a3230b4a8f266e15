//! Wall-clock scaling of the two-level layer against full dense attention.
//!
//! Both patterns run the same projection and attention kernel; the dense
//! baseline is a sliding-only layer whose window covers the whole sequence.
//! Trials run sequentially on the calling thread.

use std::time::Instant;

use poolattn::costmodel::{cost_dense, cost_two_level, peak_bytes, DENSE, TWO_LEVEL};
use poolattn::{layer_output, LayerConfig, LayerKind, LayerParams, SequenceBatch};

use crate::config::RunConfig;
use crate::error::Result;
use crate::synth::synth_batch;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub pattern: String,
    pub n: usize,
    pub trials: usize,
    pub median_ns: u64,
    pub per_token_ns: f64,
    pub score_evals: u64,
    /// Analytic estimate.
    pub peak_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub pattern: String,
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchOutcome {
    pub records: Vec<BenchRecord>,
    pub skipped: Vec<Skipped>,
}

impl BenchOutcome {
    pub fn record(&self, pattern: &str, n: usize) -> Option<&BenchRecord> {
        self.records.iter().find(|r| r.pattern == pattern && r.n == n)
    }

    /// `median(n_{k+1}) / median(n_k)` over consecutive recorded lengths.
    pub fn ratios(&self, pattern: &str, ns: &[usize]) -> Option<Vec<f64>> {
        let times: Option<Vec<f64>> = ns.iter().map(|&n| self.record(pattern, n).map(|r| r.median_ns as f64)).collect();
        Some(times?.windows(2).map(|w| w[1] / w[0]).collect())
    }
}

pub fn median(values: &mut [u64]) -> u64 {
    values.sort_unstable();
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2
    }
}

struct Job {
    pattern: &'static str,
    n: usize,
    batch: SequenceBatch,
    params: LayerParams,
    config: LayerConfig,
    kind: LayerKind,
    score_evals: u64,
    peak_bytes: u64,
    times: Vec<u64>,
}

impl Job {
    fn run(&self) -> Result<u64> {
        let start = Instant::now();
        std::hint::black_box(layer_output(&self.batch, &self.params, &self.config, self.kind)?);
        Ok(start.elapsed().as_nanos() as u64)
    }
}

/// Times the two-level layer at every configured length and the dense
/// baseline at lengths up to `dense_cap`. Runs whose analytic peak exceeds
/// the memory budget are skipped and listed.
///
/// Each run gets one discarded warmup; timed trials then go round-robin over
/// all runs so that drift in machine load is shared across lengths.
pub fn run_bench(cfg: &RunConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let budget = cfg.memory_budget_mb.saturating_mul(1 << 20);
    let (d, h) = (cfg.d_model, cfg.n_heads);
    let mut out = BenchOutcome::default();
    let mut jobs = Vec::new();
    for &n in &cfg.n_list {
        let batch = synth_batch(n, d, cfg.seed, cfg.global_count.min(n))?;
        let g = batch.global_set().len();

        let two = cfg.layer_config();
        let peak = peak_bytes(TWO_LEVEL, n, d, h, two.w1, two.w2, two.xi);
        if peak > budget {
            out.skipped.push(Skipped { pattern: TWO_LEVEL.into(), n, reason: format!("estimated {peak} bytes exceeds budget") });
        } else {
            jobs.push(Job {
                pattern: TWO_LEVEL,
                n,
                params: LayerParams::init(&two, cfg.seed.wrapping_add(1)),
                score_evals: cost_two_level(n, two.w1, two.w2, two.kappa, two.xi, g).score_evals,
                batch: batch.clone(),
                config: two,
                kind: LayerKind::TwoLevel,
                peak_bytes: peak,
                times: Vec::new(),
            });
        }

        if n > cfg.dense_cap {
            continue;
        }
        let peak = peak_bytes(DENSE, n, d, h, n, n, 1);
        if peak > budget {
            out.skipped.push(Skipped { pattern: DENSE.into(), n, reason: format!("estimated {peak} bytes exceeds budget") });
            continue;
        }
        let dense = LayerConfig { alpha_mode: cfg.alpha, ..LayerConfig::new(d, h).with_windows(n, n) };
        jobs.push(Job {
            pattern: DENSE,
            n,
            params: LayerParams::init(&dense, cfg.seed.wrapping_add(1)),
            batch: SequenceBatch::dense(batch.embeddings().clone()),
            config: dense,
            kind: LayerKind::SlidingOnly,
            score_evals: cost_dense(n).score_evals,
            peak_bytes: peak,
            times: Vec::new(),
        });
    }

    for job in &jobs {
        job.run()?;
    }
    for _ in 0..cfg.trials {
        for job in jobs.iter_mut() {
            let t = job.run()?;
            job.times.push(t);
        }
    }
    for mut job in jobs {
        let median_ns = median(&mut job.times);
        out.records.push(BenchRecord {
            pattern: job.pattern.into(),
            n: job.n,
            trials: cfg.trials,
            median_ns,
            per_token_ns: median_ns as f64 / job.n as f64,
            score_evals: job.score_evals,
            peak_bytes: job.peak_bytes,
        });
    }
    Ok(out)
}
