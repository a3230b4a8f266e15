//! Segment pooling operators that compress key/value blocks.
//!
//! LDConv computes `κ` logits `W_p · c` from a context row `c` (the
//! segment's center row, or its mean row for MeanLDConv), softmaxes the first
//! `len` of them and returns the weighted sum of the segment rows.

use crate::config::PoolingKind;
use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};
use crate::ops::{softmax_backward_in_place, softmax_in_place};
use crate::windowing::PooledGrid;

/// A pooling operator with its dynamic-weight generator, if any.
#[derive(Debug, Clone, Copy)]
pub struct PoolingOp<'a> {
    kind: PoolingKind,
    weight: Option<&'a Matrix>,
}

impl<'a> PoolingOp<'a> {
    pub fn new(kind: PoolingKind, weight: Option<&'a Matrix>) -> Result<Self> {
        match (kind.is_learnable(), weight) {
            (true, None) => Err(Error::Config(format!("{kind} pooling needs a weight matrix"))),
            (false, Some(_)) => Err(Error::Config(format!("{kind} pooling takes no weight matrix"))),
            _ => Ok(Self { kind, weight }),
        }
    }

    pub fn mean() -> Self {
        Self { kind: PoolingKind::Mean, weight: None }
    }

    pub fn max() -> Self {
        Self { kind: PoolingKind::Max, weight: None }
    }

    pub fn kind(&self) -> PoolingKind {
        self.kind
    }

    pub fn weight(&self) -> Option<&'a Matrix> {
        self.weight
    }

    /// Largest segment this operator accepts.
    pub fn kernel(&self) -> Option<usize> {
        self.weight.map(Matrix::rows)
    }

    fn check(&self, len: usize, d: usize, op: &'static str) -> Result<()> {
        if len == 0 {
            return Err(Error::Empty { op });
        }
        if let Some(w) = self.weight {
            if w.cols() != d {
                return Err(Error::shape(op, format!("W_p with {d} columns"), w.cols()));
            }
            if len > w.rows() {
                return Err(Error::shape(op, format!("at most {} rows", w.rows()), len));
            }
        }
        Ok(())
    }
}

/// Index of the LDConv context row in a block of `len` rows.
#[inline]
pub fn center_row(len: usize) -> usize {
    (len + 2) / 2 - 1
}

/// Pools one block (`len × d`) into a `d`-vector.
pub fn pool_segment(op: &PoolingOp<'_>, block: &Matrix) -> Result<Vec<f64>> {
    op.check(block.rows(), block.cols(), "pool_segment")?;
    let rows: Vec<&[f64]> = block.row_iter().collect();
    let mut out = vec![0.0; block.cols()];
    pool_rows(op, &rows, &mut out);
    Ok(out)
}

/// Dynamic weights `δ` of an LDConv kind for the given rows.
pub fn dynamic_weights(op: &PoolingOp<'_>, rows: &[&[f64]]) -> Option<Vec<f64>> {
    let w = op.weight?;
    let ctx = context_row(op.kind, rows);
    let mut delta: Vec<f64> = (0..rows.len()).map(|k| dot(w.row(k), &ctx)).collect();
    softmax_in_place(&mut delta);
    Some(delta)
}

fn context_row(kind: PoolingKind, rows: &[&[f64]]) -> Vec<f64> {
    match kind {
        PoolingKind::LDConv => rows[center_row(rows.len())].to_vec(),
        PoolingKind::MeanLDConv => {
            let mut mean = vec![0.0; rows[0].len()];
            for r in rows {
                axpy(&mut mean, 1.0, r);
            }
            let inv = 1.0 / rows.len() as f64;
            mean.iter_mut().for_each(|v| *v *= inv);
            mean
        }
        _ => unreachable!("context row only exists for LDConv kinds"),
    }
}

pub(crate) fn pool_rows(op: &PoolingOp<'_>, rows: &[&[f64]], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    match op.kind {
        PoolingKind::Mean => {
            for r in rows {
                axpy(out, 1.0, r);
            }
            let inv = 1.0 / rows.len() as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        PoolingKind::Max => {
            out.copy_from_slice(rows[0]);
            for r in &rows[1..] {
                for (o, &v) in out.iter_mut().zip(r.iter()) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
        }
        PoolingKind::LDConv | PoolingKind::MeanLDConv => {
            let delta = dynamic_weights(op, rows).expect("learnable op carries weights");
            for (r, &dk) in rows.iter().zip(&delta) {
                axpy(out, dk, r);
            }
        }
    }
}

/// Reverse of [`pool_rows`]: adds `d out / d rows` into `grad_rows` and the
/// `W_p` gradient into `grad_weight`.
pub(crate) fn pool_rows_backward(
    op: &PoolingOp<'_>,
    rows: &[&[f64]],
    upstream: &[f64],
    grad_rows: &mut [&mut [f64]],
    grad_weight: Option<&mut Matrix>,
) {
    let len = rows.len();
    match op.kind {
        PoolingKind::Mean => {
            let inv = 1.0 / len as f64;
            for g in grad_rows.iter_mut() {
                axpy(g, inv, upstream);
            }
        }
        PoolingKind::Max => {
            for (col, &u) in upstream.iter().enumerate() {
                let mut best = 0;
                for k in 1..len {
                    if rows[k][col] > rows[best][col] {
                        best = k;
                    }
                }
                grad_rows[best][col] += u;
            }
        }
        PoolingKind::LDConv | PoolingKind::MeanLDConv => {
            let w = op.weight.expect("learnable op carries weights");
            let ctx = context_row(op.kind, rows);
            let mut delta: Vec<f64> = (0..len).map(|k| dot(w.row(k), &ctx)).collect();
            softmax_in_place(&mut delta);

            // weighted-sum branch
            let mut d_logits: Vec<f64> = rows.iter().map(|r| dot(upstream, r)).collect();
            for (g, &dk) in grad_rows.iter_mut().zip(&delta) {
                axpy(g, dk, upstream);
            }
            softmax_backward_in_place(&delta, &mut d_logits);

            // logits = W_p[..len] · ctx
            let mut d_ctx = vec![0.0; ctx.len()];
            for (k, &dl) in d_logits.iter().enumerate() {
                axpy(&mut d_ctx, dl, w.row(k));
            }
            if let Some(gw) = grad_weight {
                for (k, &dl) in d_logits.iter().enumerate() {
                    axpy(gw.row_mut(k), dl, &ctx);
                }
            }
            match op.kind {
                PoolingKind::LDConv => axpy(grad_rows[center_row(len)], 1.0, &d_ctx),
                _ => {
                    let inv = 1.0 / len as f64;
                    for g in grad_rows.iter_mut() {
                        axpy(g, inv, &d_ctx);
                    }
                }
            }
        }
    }
}

/// Gradients of [`pool_segment`] with respect to the block and `W_p`.
pub fn pool_segment_backward(
    op: &PoolingOp<'_>,
    block: &Matrix,
    upstream: &[f64],
) -> Result<(Matrix, Option<Matrix>)> {
    op.check(block.rows(), block.cols(), "pool_segment_backward")?;
    if upstream.len() != block.cols() {
        return Err(Error::shape("pool_segment_backward", block.cols(), upstream.len()));
    }
    let rows: Vec<&[f64]> = block.row_iter().collect();
    let mut grad_block = Matrix::zeros(block.rows(), block.cols());
    let mut grad_weight = op.weight.map(|w| Matrix::zeros(w.rows(), w.cols()));
    {
        let d = block.cols().max(1);
        let mut grad_rows: Vec<&mut [f64]> = grad_block.as_mut_slice().chunks_exact_mut(d).collect();
        pool_rows_backward(op, &rows, upstream, &mut grad_rows, grad_weight.as_mut());
    }
    Ok((grad_block, grad_weight))
}

fn real_rows<'m>(source: &'m Matrix, grid: &PooledGrid, j: usize, pad_mask: &[bool]) -> Vec<&'m [f64]> {
    grid.segment(j).filter(|&r| pad_mask[r]).map(|r| source.row(r)).collect()
}

/// Pools every grid segment of `source`, skipping padding rows.
pub fn pool_grid(op: &PoolingOp<'_>, source: &Matrix, grid: &PooledGrid, pad_mask: &[bool]) -> Result<Matrix> {
    if pad_mask.len() != source.rows() {
        return Err(Error::shape("pool_grid", source.rows(), pad_mask.len()));
    }
    if let Some(last) = grid.segment_starts.len().checked_sub(1) {
        if grid.segment(last).end > source.rows() {
            return Err(Error::shape("pool_grid", format!("grid over {} rows", source.rows()), grid.segment(last).end));
        }
    }
    let d = source.cols();
    let mut out = Matrix::zeros(grid.len(), d);
    for j in 0..grid.len() {
        let rows = real_rows(source, grid, j, pad_mask);
        if rows.is_empty() {
            return Err(Error::Internal(format!("segment {j} is all padding")));
        }
        op.check(rows.len(), d, "pool_grid")?;
        pool_rows(op, &rows, out.row_mut(j));
    }
    out.debug_check_finite();
    Ok(out)
}

/// Reverse of [`pool_grid`]: returns the source gradient and the `W_p`
/// gradient for an upstream gradient on the pooled rows.
pub fn pool_grid_backward(
    op: &PoolingOp<'_>,
    source: &Matrix,
    grid: &PooledGrid,
    pad_mask: &[bool],
    upstream: &Matrix,
) -> Result<(Matrix, Option<Matrix>)> {
    if upstream.shape() != (grid.len(), source.cols()) {
        return Err(Error::shape(
            "pool_grid_backward",
            format!("{}x{}", grid.len(), source.cols()),
            format!("{:?}", upstream.shape()),
        ));
    }
    let d = source.cols();
    let mut grad_source = Matrix::zeros(source.rows(), d);
    let mut grad_weight = op.weight.map(|w| Matrix::zeros(w.rows(), w.cols()));
    for j in 0..grid.len() {
        let idx: Vec<usize> = grid.segment(j).filter(|&r| pad_mask[r]).collect();
        if idx.is_empty() {
            return Err(Error::Internal(format!("segment {j} is all padding")));
        }
        let rows: Vec<&[f64]> = idx.iter().map(|&r| source.row(r)).collect();
        // Segments overlap when κ > ξ, so accumulate through a local buffer.
        let mut local = vec![0.0; idx.len() * d];
        {
            let mut grad_rows: Vec<&mut [f64]> = local.chunks_exact_mut(d.max(1)).collect();
            pool_rows_backward(op, &rows, upstream.row(j), &mut grad_rows, grad_weight.as_mut());
        }
        for (k, &r) in idx.iter().enumerate() {
            axpy(grad_source.row_mut(r), 1.0, &local[k * d..(k + 1) * d]);
        }
    }
    Ok((grad_source, grad_weight))
}
