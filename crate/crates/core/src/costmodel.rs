//! Exact operation counts for dense, sliding-window and two-level attention.
//!
//! The unit is one query–key score evaluation (heads counted once); every
//! score is matched by one value accumulation. Boundary clipping is counted
//! exactly. Global tokens are taken to be the first `globals` indices, which
//! is how the harness lays them out.

use crate::attention::AttentionTrace;
use crate::error::{Error, Result};
use crate::windowing::segment_center;

/// Analytic or measured cost of one attention pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub pattern: String,
    pub n: usize,
    pub w1: usize,
    pub w2: usize,
    pub kappa: usize,
    pub xi: usize,
    pub globals: usize,
    pub score_evals: u64,
    pub value_accums: u64,
    /// Source rows read by pooling (keys and values together).
    pub pool_reads: u64,
    /// Bytes moved per unit of feature width: 8 · (2 · score_evals + pool_reads).
    pub bytes_touched: u64,
    pub per_token: Vec<u64>,
}

impl CostReport {
    fn build(pattern: &str, per_token: Vec<u64>, pool_reads: u64) -> Self {
        let score_evals: u64 = per_token.iter().sum();
        Self {
            pattern: pattern.to_string(),
            n: per_token.len(),
            w1: 0,
            w2: 0,
            kappa: 0,
            xi: 0,
            globals: 0,
            score_evals,
            value_accums: score_evals,
            pool_reads,
            bytes_touched: 8 * (2 * score_evals + pool_reads),
            per_token,
        }
    }

    /// Report assembled from measured per-token counts.
    pub fn instrumented(pattern: &str, per_token: Vec<u64>, pool_reads: u64) -> Self {
        Self::build(pattern, per_token, pool_reads)
    }

    /// Counters recorded by a traced forward pass.
    pub fn from_trace(trace: &AttentionTrace) -> Self {
        let pattern = if trace.second.is_some() { TWO_LEVEL } else { SLIDING };
        let per_token = trace.score_evals_per_token().into_iter().map(|c| c as u64).collect();
        let mut r = Self::build(pattern, per_token, trace.pooled_rows_read() as u64);
        let c = &trace.config;
        r.w1 = c.w1;
        r.globals = trace.batch.global_set().len();
        if trace.second.is_some() {
            (r.w2, r.kappa, r.xi) = (c.w2, c.kappa, c.xi);
        }
        r
    }

    pub fn per_token_mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.score_evals as f64 / self.n as f64
        }
    }
}

pub const DENSE: &str = "dense";
pub const SLIDING: &str = "sliding";
pub const TWO_LEVEL: &str = "two-level";

/// Full attention: `n²` scores.
pub fn cost_dense(n: usize) -> CostReport {
    let mut r = CostReport::build(DENSE, vec![n as u64; n], 0);
    r.w1 = n;
    r
}

fn window_per_token(n: usize, w: usize, globals: usize) -> Vec<u64> {
    (0..n)
        .map(|i| {
            if i < globals {
                return n as u64;
            }
            let lo = i.saturating_sub(w);
            let hi = (i + w).min(n - 1);
            // globals are 0..g, all left of i; those inside [lo, hi] are already counted
            (hi - lo + 1 + globals.min(lo)) as u64
        })
        .collect()
}

/// Sliding window of one-side radius `w` plus `globals` leading global tokens.
pub fn cost_single_window(n: usize, w: usize, globals: usize) -> CostReport {
    let mut r = CostReport::build(SLIDING, window_per_token(n, w, globals.min(n)), 0);
    r.w1 = w;
    r.globals = globals.min(n);
    r
}

/// Number of grid centers in `[lo, hi]` for a length-`n` grid.
fn centers_in(lo: usize, hi: usize, n: usize, kappa: usize, xi: usize) -> u64 {
    // Segments j with j·ξ + κ <= n are full; their centers are j·ξ + c0.
    let c0 = segment_center(0, kappa);
    let full = if n >= kappa { (n - kappa) / xi + 1 } else { 0 };
    let mut count = 0u64;
    if full > 0 {
        // smallest j with j·ξ + c0 >= lo, largest with j·ξ + c0 <= hi
        let first = if lo > c0 { (lo - c0).div_ceil(xi) } else { 0 };
        if hi >= c0 {
            let last = ((hi - c0) / xi).min(full - 1);
            if last >= first {
                count += (last - first + 1) as u64;
            }
        }
    }
    let mut start = full * xi;
    while start < n {
        let c = segment_center(start, n - start);
        if (lo..=hi).contains(&c) {
            count += 1;
        }
        start += xi;
    }
    count
}

/// Segments on the kernel-`κ`, stride-`ξ` grid over `n` tokens.
pub fn grid_segments(n: usize, xi: usize) -> usize {
    n.div_ceil(xi)
}

/// Two-level pattern: first-level window with globals plus the pooled second level.
pub fn cost_two_level(n: usize, w1: usize, w2: usize, kappa: usize, xi: usize, globals: usize) -> CostReport {
    let g = globals.min(n);
    let mut per_token = window_per_token(n, w1, g);
    for (i, c) in per_token.iter_mut().enumerate() {
        *c += centers_in(i.saturating_sub(w2), i + w2, n, kappa, xi);
    }
    // rows read per pooled matrix: Σ_j len_j
    let rows: usize = (0..grid_segments(n, xi)).map(|j| kappa.min(n - j * xi)).sum();
    let mut r = CostReport::build(TWO_LEVEL, per_token, 2 * rows as u64);
    (r.w1, r.w2, r.kappa, r.xi, r.globals) = (w1, w2, kappa, xi, g);
    r
}

/// Interior-token score count `(2w1 + 1) + ⌈(2w2 + 1)/ξ⌉`, the upper bound
/// reached by tokens aligned with a segment center.
pub fn interior_bound(w1: usize, w2: usize, xi: usize) -> u64 {
    (2 * w1 + 1) as u64 + (2 * w2 + 1).div_ceil(xi) as u64
}

/// Outcome of comparing an analytic report with measured counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountCheck {
    Match,
    Mismatch { token: usize, analytic: u64, instrumented: u64 },
}

impl CountCheck {
    pub fn is_match(&self) -> bool {
        matches!(self, CountCheck::Match)
    }
}

/// Exact per-token equality of score evaluations.
pub fn verify_counts(report: &CostReport, instrumented: &CostReport) -> Result<CountCheck> {
    if report.pattern != instrumented.pattern {
        return Err(Error::Config(format!(
            "cannot compare {} counts with {} counts",
            report.pattern, instrumented.pattern
        )));
    }
    if report.n != instrumented.n {
        return Err(Error::shape("verify_counts", report.n, instrumented.n));
    }
    let diff = report
        .per_token
        .iter()
        .zip(&instrumented.per_token)
        .position(|(a, b)| a != b);
    Ok(match diff {
        Some(token) => CountCheck::Mismatch {
            token,
            analytic: report.per_token[token],
            instrumented: instrumented.per_token[token],
        },
        None => CountCheck::Match,
    })
}

/// Analytic peak live bytes of a forward pass for width `d` and `heads`.
///
/// Dense materialises one `n × n` score matrix per head. The two-level path
/// keeps `O(n·d)` activations plus the pooled grids and one score buffer.
pub fn peak_bytes(pattern: &str, n: usize, d: usize, heads: usize, w1: usize, w2: usize, xi: usize) -> u64 {
    let (n, d, heads) = (n as u64, d as u64, heads as u64);
    match pattern {
        DENSE => 8 * (heads * n * n + 5 * n * d),
        SLIDING => 8 * (5 * n * d + (2 * w1 as u64 + 1)),
        _ => {
            let segs = n.div_ceil(xi as u64);
            8 * (10 * n * d + 2 * segs * d + (2 * w1 as u64 + 1) + (2 * w2 as u64 + 1).div_ceil(xi as u64))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windowing::{build_pooled_grid, global_neighbor_set, visible_segments};

    #[test]
    fn dense_counts() {
        assert_eq!(cost_dense(1).score_evals, 1);
        assert_eq!(cost_dense(512).score_evals, 262_144);
        assert_eq!(cost_dense(1000).score_evals * 4, cost_dense(2000).score_evals);
    }

    #[test]
    fn single_window_counts() {
        assert_eq!(cost_single_window(50, 60, 0).score_evals, 2500);
        assert_eq!(cost_single_window(50, 0, 0).score_evals, 50);
        let r = cost_single_window(4096, 512, 0);
        let looped: u64 = (0..4096i64)
            .map(|i| ((i + 513).min(4096) - (i - 512).max(0)) as u64)
            .sum();
        assert_eq!(r.score_evals, looped);
        assert_eq!(r.per_token[2000], 1025);
    }

    #[test]
    fn window_counts_match_enumeration_with_globals() {
        for (n, w, g) in [(30, 3, 2), (10, 0, 10), (17, 20, 1), (64, 5, 7)] {
            let globals: Vec<usize> = (0..g).collect();
            let r = cost_single_window(n, w, g);
            for i in 0..n {
                let s = global_neighbor_set(i, w, n, &globals).unwrap();
                assert_eq!(r.per_token[i], s.len() as u64, "n={n} w={w} g={g} i={i}");
            }
        }
    }

    #[test]
    fn center_counts_match_grid_enumeration() {
        for n in [1, 2, 5, 9, 33, 100] {
            for (kappa, xi) in [(1, 1), (2, 1), (3, 2), (5, 4), (5, 5), (9, 8), (4, 2)] {
                let grid = build_pooled_grid(n, kappa, xi).unwrap();
                for w2 in [0, 1, 3, 7, 200] {
                    for i in 0..n {
                        let r = visible_segments(i, w2, &grid);
                        assert_eq!(
                            centers_in(i.saturating_sub(w2), i + w2, n, kappa, xi),
                            r.len() as u64,
                            "n={n} κ={kappa} ξ={xi} w2={w2} i={i}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn identity_pooling_reduces_to_window() {
        let n = 40;
        let two = cost_two_level(n, 0, 6, 1, 1, 0);
        assert_eq!(two.score_evals, cost_single_window(n, 6, 0).score_evals + n as u64);
        assert_eq!(two.pool_reads, 2 * n as u64);
    }

    #[test]
    fn defaults_interior_and_half_of_wide_window() {
        let r = cost_two_level(4096, 128, 512, 5, 4, 0);
        let bound = interior_bound(128, 512, 4);
        assert_eq!(bound, 257 + 257);
        // centers sit at 4j + 2, so a 1025-wide window holds 257 of them iff i ≡ 2 (mod 4)
        assert_eq!(r.per_token[2050], bound);
        assert_eq!(r.per_token[2049], bound - 1);
        let interior: Vec<u64> = r.per_token[1024..3072].to_vec();
        assert_eq!(*interior.iter().max().unwrap(), bound);
        let mean = interior.iter().sum::<u64>() as f64 / interior.len() as f64;
        assert!((mean - (257.0 + 1025.0 / 4.0)).abs() < 1e-9);
        let wide = cost_single_window(4096, 512, 0).per_token[2050] as f64;
        assert!((mean / wide - 0.5).abs() < 0.01);
    }

    #[test]
    fn verify_reports_first_mismatch() {
        let a = cost_single_window(20, 3, 0);
        assert!(verify_counts(&a, &a.clone()).unwrap().is_match());
        let off = cost_single_window(20, 4, 0);
        assert_eq!(
            verify_counts(&a, &off).unwrap(),
            CountCheck::Mismatch { token: 0, analytic: 4, instrumented: 5 }
        );
        assert!(verify_counts(&a, &cost_dense(20)).is_err());
    }

    #[test]
    fn per_token_cost_is_linear_and_dense_ratio_grows() {
        // Boundary tokens save a fixed number of evaluations, so the cost of
        // each added token is constant once n exceeds the windows.
        let total = |n| cost_two_level(n, 128, 512, 5, 4, 0).score_evals as f64;
        let marginal_a = (total(8192) - total(4096)) / 4096.0;
        let marginal_b = (total(16384) - total(8192)) / 8192.0;
        assert!((marginal_a - marginal_b).abs() < 1.0);
        assert_eq!(marginal_b, 257.0 + 1025.0 / 4.0);
        // the mean per token approaches that constant from below
        let mean = |n| total(n) / n as f64;
        assert!(mean(8192) < mean(16384) && mean(16384) < marginal_b);
        assert!((marginal_b - mean(16384)) * 2.0 - (marginal_b - mean(8192)) < 1e-9);

        let mut prev = 0.0;
        for n in [1024, 2048, 4096, 8192] {
            let ratio = cost_dense(n).score_evals as f64 / total(n);
            assert!(ratio > prev);
            prev = ratio;
        }
    }
}
