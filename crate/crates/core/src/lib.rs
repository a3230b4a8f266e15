//! Two-level long-sequence attention.
//!
//! The first level is sliding-window attention with optional global tokens.
//! The second level attends, over a wider window, to keys and values that
//! have been compressed by a kernel-`κ`, stride-`ξ` pooling operator. The
//! layer output is the sum of both levels.
//!
//! The crate also carries analytic gradients for every learnable tensor,
//! brute-force reference implementations in [`oracle`] and an exact
//! operation-count model in [`costmodel`].

pub mod attention;
pub mod batch;
pub mod config;
pub mod costmodel;
pub mod error;
pub mod matrix;
pub mod ops;
pub mod oracle;
pub mod params;
pub mod pooling;
pub mod rng;
pub mod windowing;

pub use attention::{
    layer_forward_kind,
    first_level_forward, layer_backward, layer_forward, layer_output, second_level_forward, stack_forward,
    AttentionTrace, LayerGrads,
};
pub use batch::SequenceBatch;
pub use config::{AlphaMode, LayerConfig, LayerKind, PoolingKind, SecondLevelInput};
pub use costmodel::CostReport;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use ops::{extend_positions, project_qkv, softmax_row, Qkv};
pub use params::{LayerParams, Projections};
pub use pooling::PoolingOp;
pub use windowing::{NeighborSpec, PooledGrid};
