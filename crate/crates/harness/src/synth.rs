//! Seeded synthetic batches.

use poolattn::rng::SplitMix64;
use poolattn::{Matrix, SequenceBatch};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// `n × d` embeddings drawn uniformly from `[-1, 1]` in row-major order, with
/// the first `global_count` tokens global.
pub fn synth_batch(n: usize, d: usize, seed: u64, global_count: usize) -> Result<SequenceBatch> {
    if n == 0 {
        return Err(HarnessError::key("n_list", "sequence length must be >= 1"));
    }
    if global_count > n {
        return Err(HarnessError::key(
            "global_count",
            format!("{global_count} global tokens do not fit in length {n}"),
        ));
    }
    let mut rng = SplitMix64::new(seed);
    let x = Matrix::from_fn(n, d, |_, _| rng.uniform(-1.0, 1.0))?;
    Ok(SequenceBatch::dense(x).with_globals((0..global_count).collect())?)
}

/// SHA-256 over the little-endian bytes of `m`'s shape and entries.
pub fn matrix_digest(m: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((m.rows() as u64).to_le_bytes());
    h.update((m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Digest of a batch: embeddings, then the global indices as `u64`.
pub fn batch_digest(b: &SequenceBatch) -> String {
    let mut h = Sha256::new();
    h.update(matrix_digest(b.embeddings()).as_bytes());
    for &g in b.global_set() {
        h.update((g as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_batch(16, 4, 7, 2).unwrap();
        let b = synth_batch(16, 4, 7, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(batch_digest(&a), batch_digest(&b));
        assert_ne!(batch_digest(&a), batch_digest(&synth_batch(16, 4, 8, 2).unwrap()));
        assert_eq!(a.global_set(), &[0, 1]);
    }

    #[test]
    fn no_globals_and_range() {
        let b = synth_batch(50, 3, 1, 0).unwrap();
        assert!(b.global_set().is_empty());
        assert!(b.embeddings().as_slice().iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn first_value_follows_the_generator() {
        let b = synth_batch(1, 1, 42, 0).unwrap();
        let expected = SplitMix64::new(42).uniform(-1.0, 1.0);
        assert_eq!(b.embeddings().get(0, 0), expected);
    }

    #[test]
    fn bad_requests() {
        assert!(synth_batch(0, 4, 1, 0).is_err());
        assert!(synth_batch(3, 4, 1, 4).is_err());
    }
}
