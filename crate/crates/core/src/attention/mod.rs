//! The two-level attention layer.
//!
//! First level: every real token attends, per head, to the real tokens of
//! its clipped window `[i − w1, i + w1]` united with the global set; global
//! tokens attend to the whole sequence.
//!
//! Second level: the chosen input (`Y`, or `X` under Mix) is projected again,
//! keys and values are pooled once on the shared grid, and token `i` attends
//! to the pooled rows whose segment center lies within `w2` of it.
//!
//! Padding tokens produce zero rows and are never keys or values.

mod backward;
mod kernel;
mod stack;

use std::ops::Range;

pub use backward::{layer_backward, layer_backward_with_fault, LayerGrads};
pub use kernel::RaggedAttention;
pub use stack::{placement_schedule, stack_forward};

use crate::batch::SequenceBatch;
use crate::config::{LayerConfig, LayerKind};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ops::{project_qkv, Qkv};
use crate::params::LayerParams;
use crate::pooling::{pool_grid, PoolingOp};
use crate::windowing::{global_neighbor_set, visible_segments, PooledGrid};

use kernel::Kernel;

/// Deliberate defects for mutation tests of the verification suites.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Second level drops the last visible segment.
    VisibleSegmentsOffByOne,
    /// Backward omits the `−⟨p, dp⟩` term of the softmax Jacobian.
    DropSoftmaxCentering,
}

/// Activations of the first level.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstLevelTrace {
    pub qkv: Qkv,
    pub attention: RaggedAttention,
}

/// Activations of the second level.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondLevelTrace {
    pub qkv: Qkv,
    pub grid: PooledGrid,
    pub pooled_k: Matrix,
    pub pooled_v: Matrix,
    /// Keys are pooled-row indices.
    pub attention: RaggedAttention,
    /// Real tokens with no visible segment; their `Z` row is zero.
    pub empty_tokens: Vec<usize>,
}

/// Everything the backward pass and the oracle diffs need from a forward run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub config: LayerConfig,
    pub params: LayerParams,
    pub kind: LayerKind,
    pub batch: SequenceBatch,
    pub first: FirstLevelTrace,
    pub y: Matrix,
    pub second: Option<SecondLevelTrace>,
    pub z: Matrix,
    pub output: Matrix,
}

impl AttentionTrace {
    /// Query–key score evaluations per token, both levels.
    pub fn score_evals_per_token(&self) -> Vec<usize> {
        let mut counts = self.first.attention.counts();
        if let Some(s) = &self.second {
            for (c, s) in counts.iter_mut().zip(s.attention.counts()) {
                *c += s;
            }
        }
        counts
    }

    /// Source rows read by pooling, summed over the key and value grids.
    pub fn pooled_rows_read(&self) -> usize {
        self.second.as_ref().map_or(0, |s| {
            let real: usize = (0..s.grid.len())
                .map(|j| s.grid.segment(j).filter(|&r| self.batch.is_real(r)).count())
                .sum();
            2 * real
        })
    }
}

fn kernel(config: &LayerConfig) -> Kernel {
    Kernel {
        heads: config.n_heads,
        head_dim: config.head_dim(),
        alpha: config.alpha(),
    }
}

fn check_inputs(batch: &SequenceBatch, params: &LayerParams, config: &LayerConfig) -> Result<()> {
    config.validate()?;
    params.validate(config)?;
    if batch.is_empty() {
        return Err(Error::Empty { op: "attention" });
    }
    if batch.d_model() != config.d_model {
        return Err(Error::shape("attention", config.d_model, batch.d_model()));
    }
    Ok(())
}

/// Sliding-window attention with global tokens. Returns `Y` and its trace.
pub fn first_level_forward(
    batch: &SequenceBatch,
    params: &LayerParams,
    config: &LayerConfig,
) -> Result<(Matrix, FirstLevelTrace)> {
    check_inputs(batch, params, config)?;
    first_level(batch, params, config, true)
}

fn first_level(
    batch: &SequenceBatch,
    params: &LayerParams,
    config: &LayerConfig,
    keep: bool,
) -> Result<(Matrix, FirstLevelTrace)> {
    let n = batch.len();
    let d = config.d_model;
    let qkv = project_qkv(batch.embeddings(), &params.first)?;
    let kern = kernel(config);
    let mut y = Matrix::zeros(n, d);
    let mut attention = RaggedAttention::new(n, config.n_heads);
    let (mut keys, mut scores) = (Vec::new(), Vec::new());
    for i in 0..n {
        if batch.is_real(i) {
            let field = global_neighbor_set(i, config.w1, n, batch.global_set())?;
            keys.clear();
            keys.extend(field.indices().filter(|&j| batch.is_real(j)));
            if keys.is_empty() {
                return Err(Error::Batch(format!("token {i} sees only padding")));
            }
            let sink = keep.then_some(&mut attention.probs);
            kern.attend(qkv.q.row(i), &keys, &qkv.k, &qkv.v, y.row_mut(i), &mut scores, sink);
            if keep {
                attention.keys.extend_from_slice(&keys);
            }
        }
        attention.offsets.push(if keep { attention.keys.len() } else { 0 });
    }
    y.debug_check_finite();
    Ok((y, FirstLevelTrace { qkv, attention }))
}

/// Pooled attention over `input` (`Y`, or `X` under Mix). Returns `Z`.
pub fn second_level_forward(
    batch: &SequenceBatch,
    input: &Matrix,
    params: &LayerParams,
    config: &LayerConfig,
) -> Result<(Matrix, SecondLevelTrace)> {
    check_inputs(batch, params, config)?;
    if input.shape() != batch.embeddings().shape() {
        return Err(Error::shape(
            "second_level_forward",
            format!("{:?}", batch.embeddings().shape()),
            format!("{:?}", input.shape()),
        ));
    }
    second_level(batch, input, params, config, true, Fault::None)
}

fn second_level(
    batch: &SequenceBatch,
    input: &Matrix,
    params: &LayerParams,
    config: &LayerConfig,
    keep: bool,
    fault: Fault,
) -> Result<(Matrix, SecondLevelTrace)> {
    let n = batch.len();
    let qkv = project_qkv(input, params.second_level())?;
    let grid = PooledGrid::build_masked(batch.pad_mask(), config.kappa, config.xi)?;
    let op_k = PoolingOp::new(config.pooling, params.pool_k.as_ref())?;
    let op_v = PoolingOp::new(config.pooling, params.pool_v.as_ref())?;
    let pooled_k = pool_grid(&op_k, &qkv.k, &grid, batch.pad_mask())?;
    let pooled_v = pool_grid(&op_v, &qkv.v, &grid, batch.pad_mask())?;

    let kern = kernel(config);
    let mut z = Matrix::zeros(n, config.d_model);
    let mut attention = RaggedAttention::new(n, config.n_heads);
    let mut empty_tokens = Vec::new();
    let (mut keys, mut scores) = (Vec::new(), Vec::new());
    for i in 0..n {
        if batch.is_real(i) {
            let range = select_segments(i, config.w2, &grid, fault);
            if range.is_empty() {
                empty_tokens.push(i);
            } else {
                keys.clear();
                keys.extend(range);
                let sink = keep.then_some(&mut attention.probs);
                kern.attend(qkv.q.row(i), &keys, &pooled_k, &pooled_v, z.row_mut(i), &mut scores, sink);
                if keep {
                    attention.keys.extend_from_slice(&keys);
                }
            }
        }
        attention.offsets.push(if keep { attention.keys.len() } else { 0 });
    }
    z.debug_check_finite();
    Ok((
        z,
        SecondLevelTrace {
            qkv,
            grid,
            pooled_k,
            pooled_v,
            attention,
            empty_tokens,
        },
    ))
}

fn select_segments(i: usize, w2: usize, grid: &PooledGrid, fault: Fault) -> Range<usize> {
    let r = visible_segments(i, w2, grid);
    match fault {
        Fault::VisibleSegmentsOffByOne if !r.is_empty() => r.start..r.end - 1,
        _ => r,
    }
}

/// Full two-level layer: `output = Y + Z`.
pub fn layer_forward(
    batch: &SequenceBatch,
    params: &LayerParams,
    config: &LayerConfig,
) -> Result<(Matrix, AttentionTrace)> {
    forward_traced(batch, params, config, LayerKind::TwoLevel, Fault::None)
}

#[doc(hidden)]
pub fn layer_forward_with_fault(
    batch: &SequenceBatch,
    params: &LayerParams,
    config: &LayerConfig,
    fault: Fault,
) -> Result<(Matrix, AttentionTrace)> {
    forward_traced(batch, params, config, LayerKind::TwoLevel, fault)
}

/// Forward pass of a layer run with `kind`, keeping the trace.
pub fn layer_forward_kind(
    batch: &SequenceBatch,
    params: &LayerParams,
    config: &LayerConfig,
    kind: LayerKind,
) -> Result<(Matrix, AttentionTrace)> {
    forward_traced(batch, params, config, kind, Fault::None)
}

fn forward_traced(
    batch: &SequenceBatch,
    params: &LayerParams,
    config: &LayerConfig,
    kind: LayerKind,
    fault: Fault,
) -> Result<(Matrix, AttentionTrace)> {
    check_inputs(batch, params, config)?;
    let (y, first) = first_level(batch, params, config, true)?;
    let (z, second) = match kind {
        LayerKind::SlidingOnly => (Matrix::zeros(batch.len(), config.d_model), None),
        LayerKind::TwoLevel => {
            let input = if config.is_mix() { batch.embeddings() } else { &y };
            let (z, s) = second_level(batch, input, params, config, true, fault)?;
            (z, Some(s))
        }
    };
    let output = y.add(&z)?;
    let trace = AttentionTrace {
        config: config.clone(),
        params: params.clone(),
        kind,
        batch: batch.clone(),
        first,
        y,
        second,
        z,
        output: output.clone(),
    };
    Ok((output, trace))
}

/// Forward pass without retaining attention weights; memory stays `O(n·d)`.
pub fn layer_output(
    batch: &SequenceBatch,
    params: &LayerParams,
    config: &LayerConfig,
    kind: LayerKind,
) -> Result<Matrix> {
    check_inputs(batch, params, config)?;
    let (mut y, _) = first_level(batch, params, config, false)?;
    if kind == LayerKind::TwoLevel {
        let input = if config.is_mix() { batch.embeddings() } else { &y };
        let (z, _) = second_level(batch, input, params, config, false, Fault::None)?;
        y.add_assign(&z)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests;
