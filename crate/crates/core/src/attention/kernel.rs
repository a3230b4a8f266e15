//! Per-query multi-head attention over an explicit key list, plus its reverse.

use crate::matrix::{axpy, dot, Matrix};
use crate::ops::{softmax_backward_in_place, softmax_in_place};

/// Attention probabilities of every query, stored ragged.
///
/// Query `i` attends to `keys[offsets[i]..offsets[i + 1]]`; its weights for
/// head `h` are the matching block of `probs`, laid out head-major per query.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RaggedAttention {
    pub heads: usize,
    pub offsets: Vec<usize>,
    pub keys: Vec<usize>,
    pub probs: Vec<f64>,
}

impl RaggedAttention {
    pub(crate) fn new(n: usize, heads: usize) -> Self {
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        Self {
            heads,
            offsets,
            keys: Vec::new(),
            probs: Vec::new(),
        }
    }

    pub fn queries(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn keys_of(&self, i: usize) -> &[usize] {
        &self.keys[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Weights of query `i`, head `h`, aligned with [`keys_of`](Self::keys_of).
    pub fn probs_of(&self, i: usize, h: usize) -> &[f64] {
        let len = self.offsets[i + 1] - self.offsets[i];
        let base = self.offsets[i] * self.heads + h * len;
        &self.probs[base..base + len]
    }

    /// Number of query–key score evaluations per query (heads counted once).
    pub fn counts(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Kernel {
    pub heads: usize,
    pub head_dim: usize,
    pub alpha: f64,
}

impl Kernel {
    /// Writes the attention output of query `q` over rows `keys` of `k`/`v`
    /// into `out`, optionally appending the weights to `sink`.
    #[allow(clippy::too_many_arguments)]
    pub fn attend(
        &self,
        q: &[f64],
        keys: &[usize],
        k: &Matrix,
        v: &Matrix,
        out: &mut [f64],
        scores: &mut Vec<f64>,
        mut sink: Option<&mut Vec<f64>>,
    ) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for h in 0..self.heads {
            let cols = h * self.head_dim..(h + 1) * self.head_dim;
            let qh = &q[cols.clone()];
            scores.clear();
            scores.extend(keys.iter().map(|&j| self.alpha * dot(qh, &k.row(j)[cols.clone()])));
            softmax_in_place(scores);
            let oh = &mut out[cols.clone()];
            for (&p, &j) in scores.iter().zip(keys) {
                axpy(oh, p, &v.row(j)[cols.clone()]);
            }
            if let Some(s) = sink.as_deref_mut() {
                s.extend_from_slice(scores);
            }
        }
    }

    /// Accumulates gradients of one attention level given its stored weights.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        attn: &RaggedAttention,
        q: &Matrix,
        k: &Matrix,
        v: &Matrix,
        upstream: &Matrix,
        dq: &mut Matrix,
        dk: &mut Matrix,
        dv: &mut Matrix,
        centred: bool,
    ) {
        let mut dlogits = Vec::new();
        for i in 0..attn.queries() {
            let keys = attn.keys_of(i);
            if keys.is_empty() {
                continue;
            }
            for h in 0..self.heads {
                let cols = h * self.head_dim..(h + 1) * self.head_dim;
                let p = attn.probs_of(i, h);
                let g = &upstream.row(i)[cols.clone()];
                dlogits.clear();
                dlogits.extend(keys.iter().map(|&j| dot(g, &v.row(j)[cols.clone()])));
                for (&pk, &j) in p.iter().zip(keys) {
                    axpy(&mut dv.row_mut(j)[cols.clone()], pk, g);
                }
                if centred {
                    softmax_backward_in_place(p, &mut dlogits);
                } else {
                    for (d, &pk) in dlogits.iter_mut().zip(p) {
                        *d *= pk;
                    }
                }
                let qh = &q.row(i)[cols.clone()];
                for (&dl, &j) in dlogits.iter().zip(keys) {
                    let s = self.alpha * dl;
                    axpy(&mut dq.row_mut(i)[cols.clone()], s, &k.row(j)[cols.clone()]);
                    axpy(&mut dk.row_mut(j)[cols.clone()], s, qh);
                }
            }
        }
    }
}
