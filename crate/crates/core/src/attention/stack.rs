use crate::batch::SequenceBatch;
use crate::config::{LayerConfig, LayerKind};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::LayerParams;

use super::layer_output;

/// Runs layers in sequence; each layer reads the previous output with the
/// batch's padding mask and global set. `SlidingOnly` layers skip the second
/// level entirely.
pub fn stack_forward(
    batch: &SequenceBatch,
    layers: &[(LayerConfig, LayerParams)],
    schedule: &[LayerKind],
) -> Result<Matrix> {
    if layers.len() != schedule.len() {
        return Err(Error::shape("stack_forward", format!("{} schedule entries", layers.len()), schedule.len()));
    }
    if let Some((cfg, _)) = layers.iter().find(|(c, _)| c.d_model != batch.d_model()) {
        return Err(Error::Config(format!(
            "layer width {} does not match embeddings width {}",
            cfg.d_model,
            batch.d_model()
        )));
    }
    let mut current = batch.embeddings().clone();
    for ((config, params), &kind) in layers.iter().zip(schedule) {
        let input = batch.with_embeddings(current)?;
        current = layer_output(&input, params, config, kind)?;
    }
    Ok(current)
}

/// Schedule with `two_level` consecutive two-level layers starting at `first`.
pub fn placement_schedule(total: usize, first: usize, two_level: usize) -> Vec<LayerKind> {
    (0..total)
        .map(|l| {
            if (first..first + two_level).contains(&l) {
                LayerKind::TwoLevel
            } else {
                LayerKind::SlidingOnly
            }
        })
        .collect()
}
