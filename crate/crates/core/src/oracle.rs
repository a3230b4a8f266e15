//! Brute-force reference implementations.
//!
//! Nothing here shares code with the fast path beyond the value types:
//! projections are triple loops, segment chunking and pooling are re-derived
//! with scalar loops, and attention runs over explicit `n × n` masks with
//! masked entries excluded from the softmax normalisation. Intended for small
//! `n` only.

use crate::batch::SequenceBatch;
use crate::config::{LayerConfig, PoolingKind};
use crate::costmodel::CostReport;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::LayerParams;

/// Largest sequence the per-token literal oracle accepts.
pub const LITERAL_MAX_LEN: usize = 512;

/// Explicit attention pattern: `allowed(i, j)` iff query `i` may attend to
/// key `j`. Rows with `queries[i] == false` produce zero output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
    queries: Vec<bool>,
}

impl DenseMask {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            allowed: vec![false; rows * cols],
            queries: vec![true; rows],
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            allowed: vec![true; n * n],
            ..Self::new(n, n)
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::new(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// `|i − j| ≤ radius`
    pub fn band(n: usize, radius: usize) -> Self {
        let mut m = Self::new(n, n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, i.abs_diff(j) <= radius);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.allowed[i * self.cols + j] = v;
    }

    pub fn is_query(&self, i: usize) -> bool {
        self.queries[i]
    }

    pub fn set_query(&mut self, i: usize, v: bool) {
        self.queries[i] = v;
    }

    pub fn count_allowed(&self) -> usize {
        (0..self.rows)
            .filter(|&i| self.queries[i])
            .map(|i| (0..self.cols).filter(|&j| self.get(i, j)).count())
            .sum()
    }
}

/// Mask of the first level: window ∪ globals for ordinary tokens, the whole
/// sequence for global tokens, padding columns cleared, padding rows inactive.
pub fn mask_from_config(n: usize, w1: usize, globals: &[usize], pad_mask: &[bool]) -> DenseMask {
    let mut m = DenseMask::new(n, n);
    for i in 0..n {
        let is_global = globals.contains(&i);
        for j in 0..n {
            let visible = is_global || i.abs_diff(j) <= w1 || globals.contains(&j);
            m.set(i, j, visible && pad_mask[j]);
        }
        m.set_query(i, pad_mask[i]);
    }
    m
}

/// Single-head masked attention `softmax(α q_i·k_j) v_j` over allowed `j`.
pub fn dense_attention(q: &Matrix, k: &Matrix, v: &Matrix, mask: &DenseMask, alpha: f64) -> Result<Matrix> {
    if q.cols() != k.cols() || k.rows() != v.rows() || mask.rows() != q.rows() || mask.cols() != k.rows() {
        return Err(Error::shape(
            "dense_attention",
            format!("mask {}x{}", q.rows(), k.rows()),
            format!("mask {}x{}", mask.rows(), mask.cols()),
        ));
    }
    let (n, m) = (q.rows(), k.rows());
    let mut out = Matrix::zeros(n, v.cols());
    let mut scores = vec![0.0; m];
    for i in 0..n {
        if !mask.is_query(i) {
            continue;
        }
        if !(0..m).any(|j| mask.get(i, j)) {
            return Err(Error::Batch(format!("mask row {i} is empty")));
        }
        let mut max = f64::NEG_INFINITY;
        for j in 0..m {
            if mask.get(i, j) {
                let mut s = 0.0;
                for c in 0..q.cols() {
                    s += q.get(i, c) * k.get(j, c);
                }
                scores[j] = alpha * s;
                max = max.max(scores[j]);
            }
        }
        let mut total = 0.0;
        for j in 0..m {
            if mask.get(i, j) {
                scores[j] = (scores[j] - max).exp();
                total += scores[j];
            }
        }
        for j in 0..m {
            if mask.get(i, j) {
                let p = scores[j] / total;
                for c in 0..v.cols() {
                    let cur = out.get(i, c);
                    out.set(i, c, cur + p * v.get(j, c));
                }
            }
        }
    }
    Ok(out)
}

/// [`dense_attention`] applied per contiguous head slice, then concatenated.
pub fn dense_multihead(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &DenseMask,
    alpha: f64,
    heads: usize,
) -> Result<Matrix> {
    let d = q.cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!("{d} columns do not split into {heads} heads")));
    }
    let dh = d / heads;
    let mut out = Matrix::zeros(q.rows(), d);
    for h in 0..heads {
        let part = dense_attention(
            &q.column_slice(h * dh, dh),
            &k.column_slice(h * dh, dh),
            &v.column_slice(h * dh, dh),
            mask,
            alpha,
        )?;
        for i in 0..q.rows() {
            for c in 0..dh {
                out.set(i, h * dh + c, part.get(i, c));
            }
        }
    }
    Ok(out)
}

/// Dense multi-head attention that also reports its score evaluations.
pub fn dense_attention_counted(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &DenseMask,
    alpha: f64,
    heads: usize,
) -> Result<(Matrix, CostReport)> {
    let out = dense_multihead(q, k, v, mask, alpha, heads)?;
    let per_token = (0..mask.rows())
        .map(|i| {
            if mask.is_query(i) {
                (0..mask.cols()).filter(|&j| mask.get(i, j)).count() as u64
            } else {
                0
            }
        })
        .collect();
    Ok((out, CostReport::instrumented("dense", per_token, 0)))
}

/// `x_i ↦ W x_i + b` by explicit loops.
pub fn naive_project(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let (n, d) = x.shape();
    let mut out = Matrix::zeros(n, w.rows());
    for i in 0..n {
        for a in 0..w.rows() {
            let mut acc = b[a];
            for c in 0..d {
                acc += w.get(a, c) * x.get(i, c);
            }
            out.set(i, a, acc);
        }
    }
    out
}

/// Scalar-loop pooling of `rows` (each a `d`-vector).
pub fn naive_pool(kind: PoolingKind, weight: Option<&Matrix>, rows: &[Vec<f64>]) -> Vec<f64> {
    let len = rows.len();
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    match kind {
        PoolingKind::Mean => {
            for c in 0..d {
                let mut s = 0.0;
                for r in rows {
                    s += r[c];
                }
                out[c] = s / len as f64;
            }
        }
        PoolingKind::Max => {
            for c in 0..d {
                out[c] = rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
            }
        }
        PoolingKind::LDConv | PoolingKind::MeanLDConv => {
            let w = weight.expect("dynamic pooling needs weights");
            let ctx: Vec<f64> = if kind == PoolingKind::LDConv {
                // ⌈(1 + len)/2⌉, 1-based
                let centre = (1 + len).div_ceil(2) - 1;
                rows[centre].clone()
            } else {
                (0..d).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / len as f64).collect()
            };
            let logits: Vec<f64> = (0..len)
                .map(|k| (0..d).map(|c| w.get(k, c) * ctx[c]).sum())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            for (k, r) in rows.iter().enumerate() {
                let delta = (logits[k] - max).exp() / total;
                for c in 0..d {
                    out[c] += delta * r[c];
                }
            }
        }
    }
    out
}

/// Segments `[start, end)` chunked from `[lo, hi]` with kernel `κ`, stride `ξ`.
fn chunk(lo: usize, hi: usize, kappa: usize, xi: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = lo;
    while start <= hi {
        out.push((start, (start + kappa).min(hi + 1)));
        start += xi;
    }
    out
}

struct Pooled {
    keys: Matrix,
    values: Matrix,
    centers: Vec<usize>,
}

fn pool_segments(
    segments: &[(usize, usize)],
    k: &Matrix,
    v: &Matrix,
    pad_mask: &[bool],
    params: &LayerParams,
    kind: PoolingKind,
) -> Pooled {
    let d = k.cols();
    let mut keys = Vec::new();
    let mut values = Vec::new();
    let mut centers = Vec::new();
    for &(start, end) in segments {
        let real: Vec<usize> = (start..end).filter(|&r| pad_mask[r]).collect();
        if real.is_empty() {
            continue;
        }
        let krows: Vec<Vec<f64>> = real.iter().map(|&r| k.row(r).to_vec()).collect();
        let vrows: Vec<Vec<f64>> = real.iter().map(|&r| v.row(r).to_vec()).collect();
        keys.extend(naive_pool(kind, params.pool_k.as_ref(), &krows));
        values.extend(naive_pool(kind, params.pool_v.as_ref(), &vrows));
        let len = end - start;
        centers.push(start + (1 + len).div_ceil(2) - 1);
    }
    let rows = centers.len();
    Pooled {
        keys: Matrix::new(rows, d, keys).expect("finite pooled keys"),
        values: Matrix::new(rows, d, values).expect("finite pooled values"),
        centers,
    }
}

fn second_projections(input: &Matrix, params: &LayerParams) -> (Matrix, Matrix, Matrix) {
    let p = params.second.as_ref().unwrap_or(&params.first);
    (
        naive_project(input, &p.wq, &p.bq),
        naive_project(input, &p.wk, &p.bk),
        naive_project(input, &p.wv, &p.bv),
    )
}

/// Per-token reading of the second level: each token chunks its own window
/// `[i − w2, i + w2]` starting at the window's left edge, pools the chunks
/// and attends over them.
pub fn literal_pooling_attention(
    batch: &SequenceBatch,
    input: &Matrix,
    params: &LayerParams,
    config: &LayerConfig,
) -> Result<Matrix> {
    let n = batch.len();
    if n > LITERAL_MAX_LEN {
        return Err(Error::Config(format!(
            "literal pooling oracle limited to n <= {LITERAL_MAX_LEN}, got {n}"
        )));
    }
    let (q, k, v) = second_projections(input, params);
    let pad = batch.pad_mask();
    let mut out = Matrix::zeros(n, config.d_model);
    for i in 0..n {
        if !pad[i] {
            continue;
        }
        let lo = i.saturating_sub(config.w2);
        let hi = (i + config.w2).min(n - 1);
        let pooled = pool_segments(&chunk(lo, hi, config.kappa, config.xi), &k, &v, pad, params, config.pooling);
        let m = pooled.centers.len();
        let mut mask = DenseMask::new(1, m);
        for j in 0..m {
            mask.set(0, j, true);
        }
        let qi = Matrix::new(1, config.d_model, q.row(i).to_vec())?;
        let zi = dense_multihead(&qi, &pooled.keys, &pooled.values, &mask, config.alpha(), config.n_heads)?;
        out.row_mut(i).copy_from_slice(zi.row(0));
    }
    Ok(out)
}

/// Brute-force shared-grid second level: pool once from index 0, then a
/// dense mask allows pooled row `j` for token `i` iff `|center_j − i| ≤ w2`.
/// Tokens with no visible row get a zero output.
pub fn shared_grid_attention(
    batch: &SequenceBatch,
    input: &Matrix,
    params: &LayerParams,
    config: &LayerConfig,
) -> Result<Matrix> {
    let n = batch.len();
    let (q, k, v) = second_projections(input, params);
    let pad = batch.pad_mask();
    let pooled = pool_segments(&chunk(0, n - 1, config.kappa, config.xi), &k, &v, pad, params, config.pooling);
    let mut mask = DenseMask::new(n, pooled.centers.len());
    for i in 0..n {
        let mut any = false;
        for (j, &c) in pooled.centers.iter().enumerate() {
            let ok = c.abs_diff(i) <= config.w2;
            mask.set(i, j, ok);
            any |= ok;
        }
        mask.set_query(i, pad[i] && any);
    }
    dense_multihead(&q, &pooled.keys, &pooled.values, &mask, config.alpha(), config.n_heads)
}

/// Dense first level under the global/window mask.
pub fn reference_first_level(batch: &SequenceBatch, params: &LayerParams, config: &LayerConfig) -> Result<Matrix> {
    let x = batch.embeddings();
    let p = &params.first;
    let (q, k, v) = (
        naive_project(x, &p.wq, &p.bq),
        naive_project(x, &p.wk, &p.bk),
        naive_project(x, &p.wv, &p.bv),
    );
    let mask = mask_from_config(batch.len(), config.w1, batch.global_set(), batch.pad_mask());
    dense_multihead(&q, &k, &v, &mask, config.alpha(), config.n_heads)
}

/// Brute-force two-level layer: dense first level plus shared-grid second level.
pub fn reference_layer(batch: &SequenceBatch, params: &LayerParams, config: &LayerConfig) -> Result<Matrix> {
    let y = reference_first_level(batch, params, config)?;
    let input = if config.is_mix() { batch.embeddings().clone() } else { y.clone() };
    let z = shared_grid_attention(batch, &input, params, config)?;
    y.add(&z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0)).unwrap()
    }

    #[test]
    fn single_token_and_identity_mask() {
        let v = random(1, 3, 1);
        let out = dense_attention(&random(1, 3, 2), &random(1, 3, 3), &v, &DenseMask::full(1), 0.5).unwrap();
        assert_eq!(out, v);

        let (q, k, v) = (random(5, 2, 4), random(5, 2, 5), random(5, 2, 6));
        let out = dense_attention(&q, &k, &v, &DenseMask::identity(5), 1.0).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn full_mask_matches_textbook_loop() {
        let (q, k, v) = (random(6, 4, 7), random(6, 4, 8), random(6, 4, 9));
        let alpha = 0.5;
        let out = dense_attention(&q, &k, &v, &DenseMask::full(6), alpha).unwrap();
        for i in 0..6 {
            let s: Vec<f64> = (0..6)
                .map(|j| alpha * (0..4).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>())
                .collect();
            let z: f64 = s.iter().map(|x| x.exp()).sum();
            for c in 0..4 {
                let e: f64 = (0..6).map(|j| s[j].exp() / z * v.get(j, c)).sum();
                assert!((out.get(i, c) - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn empty_row_is_rejected() {
        let m = DenseMask::new(2, 2);
        let x = random(2, 2, 1);
        assert!(dense_attention(&x, &x, &x, &m, 1.0).is_err());
    }

    #[test]
    fn mask_examples() {
        let n = 5;
        let all: Vec<usize> = (0..n).collect();
        let m = mask_from_config(n, 0, &all, &[true, true, false, true, true]);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(m.get(i, j), j != 2);
            }
        }
        assert!(!m.is_query(2));
        assert_eq!(mask_from_config(4, 0, &[], &[true; 4]), DenseMask::identity(4));

        // n=6, w1=1, G={5}
        let m = mask_from_config(6, 1, &[5], &[true; 6]);
        let expect = [
            "110001", "111001", "011101", "001111", "000111", "111111",
        ];
        for (i, row) in expect.iter().enumerate() {
            let got: String = (0..6).map(|j| if m.get(i, j) { '1' } else { '0' }).collect();
            assert_eq!(&got, row, "row {i}");
        }
    }

    #[test]
    fn chunking_from_window_edge() {
        assert_eq!(chunk(0, 8, 5, 4), vec![(0, 5), (4, 9), (8, 9)]);
        assert_eq!(chunk(3, 7, 2, 2), vec![(3, 5), (5, 7), (7, 8)]);
    }

    #[test]
    fn literal_guard() {
        let cfg = LayerConfig::new(2, 1).with_windows(1, 1);
        let batch = SequenceBatch::dense(Matrix::zeros(LITERAL_MAX_LEN + 1, 2));
        let params = LayerParams::init(&cfg, 0);
        assert!(literal_pooling_attention(&batch, batch.embeddings(), &params, &cfg).is_err());
    }
}
