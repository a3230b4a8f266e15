//! Shared numerical building blocks: stable softmax, token projections and
//! cyclic position-table extension.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::Projections;

/// Max-subtracted softmax of a score vector.
pub fn softmax_row(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Empty { op: "softmax_row" });
    }
    if let Some(col) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: 0, col });
    }
    let mut out = scores.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// In-place variant for hot loops; `v` must be non-empty and finite.
#[inline]
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
}

/// Reverse of softmax: given probabilities `p` and `dL/dp`, overwrite `grad`
/// with `dL/dlogits = p ⊙ (dp − ⟨p, dp⟩)`.
#[inline]
pub(crate) fn softmax_backward_in_place(p: &[f64], grad: &mut [f64]) {
    let centre: f64 = p.iter().zip(grad.iter()).map(|(a, b)| a * b).sum();
    for (g, &pi) in grad.iter_mut().zip(p) {
        *g = pi * (*g - centre);
    }
}

/// Applies one `d × d` projection to every token row: `x_i ↦ W x_i + b`.
pub fn project(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let d = x.cols();
    if w.shape() != (d, d) {
        return Err(Error::shape("project", format!("{d}x{d} weight"), format!("{:?}", w.shape())));
    }
    if b.len() != d {
        return Err(Error::shape("project", format!("bias of length {d}"), b.len()));
    }
    let mut out = x.matmul_transposed(w)?;
    for r in 0..out.rows() {
        for (o, bias) in out.row_mut(r).iter_mut().zip(b) {
            *o += bias;
        }
    }
    out.debug_check_finite();
    Ok(out)
}

/// Query, key and value projections of one attention level.
#[derive(Debug, Clone, PartialEq)]
pub struct Qkv {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

pub fn project_qkv(x: &Matrix, p: &Projections) -> Result<Qkv> {
    Ok(Qkv {
        q: project(x, &p.wq, &p.bq)?,
        k: project(x, &p.wk, &p.bk)?,
        v: project(x, &p.wv, &p.bv)?,
    })
}

/// Tiles a position table cyclically: row `i` of the result is row `i mod m`.
pub fn extend_positions(table: &Matrix, target_len: usize) -> Result<Matrix> {
    if table.rows() == 0 {
        return Err(Error::Empty { op: "extend_positions" });
    }
    let m = table.rows();
    let mut out = Matrix::zeros(target_len, table.cols());
    for i in 0..target_len {
        out.row_mut(i).copy_from_slice(table.row(i % m));
    }
    Ok(out)
}
