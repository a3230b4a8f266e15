use crate::config::LayerKind;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{LayerParams, Projections};
use crate::pooling::{pool_grid_backward, PoolingOp};

use super::{kernel, AttentionTrace, Fault};

/// Gradients of a scalar loss with respect to every learnable tensor and the
/// layer input. `params` mirrors the layer's [`LayerParams`] layout; with
/// shared projections both levels' contributions land in `params.first`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub params: LayerParams,
    pub input: Matrix,
}

/// Reverse pass of [`layer_forward`](super::layer_forward) for `upstream = dL/d output`.
pub fn layer_backward(trace: &AttentionTrace, upstream: &Matrix) -> Result<LayerGrads> {
    backward(trace, upstream, Fault::None)
}

#[doc(hidden)]
pub fn layer_backward_with_fault(trace: &AttentionTrace, upstream: &Matrix, fault: Fault) -> Result<LayerGrads> {
    backward(trace, upstream, fault)
}

fn backward(trace: &AttentionTrace, upstream: &Matrix, fault: Fault) -> Result<LayerGrads> {
    let (n, d) = trace.output.shape();
    if upstream.shape() != (n, d) {
        return Err(Error::shape(
            "layer_backward",
            format!("{n}x{d}"),
            format!("{:?}", upstream.shape()),
        ));
    }
    let config = &trace.config;
    let params = &trace.params;
    let kern = kernel(config);
    let centred = fault != Fault::DropSoftmaxCentering;
    let x = trace.batch.embeddings();

    let mut grads = LayerParams::zeros(config);
    let mut dx = Matrix::zeros(n, d);
    let mut dy = upstream.clone();

    if let (LayerKind::TwoLevel, Some(second)) = (trace.kind, &trace.second) {
        let mut dq = Matrix::zeros(n, d);
        let mut dk_bar = Matrix::zeros(second.grid.len(), d);
        let mut dv_bar = Matrix::zeros(second.grid.len(), d);
        kern.backward(
            &second.attention,
            &second.qkv.q,
            &second.pooled_k,
            &second.pooled_v,
            upstream,
            &mut dq,
            &mut dk_bar,
            &mut dv_bar,
            centred,
        );
        let pad = trace.batch.pad_mask();
        let op_k = PoolingOp::new(config.pooling, params.pool_k.as_ref())?;
        let op_v = PoolingOp::new(config.pooling, params.pool_v.as_ref())?;
        let (dk, dwk) = pool_grid_backward(&op_k, &second.qkv.k, &second.grid, pad, &dk_bar)?;
        let (dv, dwv) = pool_grid_backward(&op_v, &second.qkv.v, &second.grid, pad, &dv_bar)?;
        grads.pool_k = dwk;
        grads.pool_v = dwv;

        let input = if config.is_mix() { x } else { &trace.y };
        let mut second_grads = Projections::zeros(d);
        let d_input = projection_backward(params.second_level(), input, [&dq, &dk, &dv], &mut second_grads)?;
        match grads.second.as_mut() {
            Some(g) => *g = second_grads,
            None => grads.first.accumulate(&second_grads),
        }
        if config.is_mix() {
            dx.add_assign(&d_input)?;
        } else {
            dy.add_assign(&d_input)?;
        }
    }

    let first = &trace.first;
    let mut dq = Matrix::zeros(n, d);
    let mut dk = Matrix::zeros(n, d);
    let mut dv = Matrix::zeros(n, d);
    kern.backward(
        &first.attention,
        &first.qkv.q,
        &first.qkv.k,
        &first.qkv.v,
        &dy,
        &mut dq,
        &mut dk,
        &mut dv,
        centred,
    );
    let mut first_grads = Projections::zeros(d);
    let d_x = projection_backward(&params.first, x, [&dq, &dk, &dv], &mut first_grads)?;
    grads.first.accumulate(&first_grads);
    dx.add_assign(&d_x)?;

    Ok(LayerGrads { params: grads, input: dx })
}

/// For `out = S Wᵀ + b` per role, adds `dW = dOutᵀ S` and `db = Σ dOut` into
/// `grads` and returns `dS = Σ_roles dOut W`.
fn projection_backward(p: &Projections, s: &Matrix, d_out: [&Matrix; 3], grads: &mut Projections) -> Result<Matrix> {
    let mut ds = Matrix::zeros(s.rows(), s.cols());
    let roles = [
        (&p.wq, &mut grads.wq, &mut grads.bq),
        (&p.wk, &mut grads.wk, &mut grads.bk),
        (&p.wv, &mut grads.wv, &mut grads.bv),
    ];
    for ((w, gw, gb), g) in roles.into_iter().zip(d_out) {
        gw.add_assign(&g.transpose().matmul(s)?)?;
        for row in g.row_iter() {
            for (b, v) in gb.iter_mut().zip(row) {
                *b += v;
            }
        }
        ds.add_assign(&g.matmul(w)?)?;
    }
    Ok(ds)
}
