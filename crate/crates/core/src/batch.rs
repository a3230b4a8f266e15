use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Embeddings of one sequence with its padding mask and global-token set.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    embeddings: Matrix,
    pad_mask: Vec<bool>,
    global_set: Vec<usize>,
}

impl SequenceBatch {
    /// `pad_mask[i]` is true for real tokens. The global set is sorted and
    /// deduplicated; every index must name a real token.
    pub fn new(embeddings: Matrix, pad_mask: Vec<bool>, mut global_set: Vec<usize>) -> Result<Self> {
        let n = embeddings.rows();
        if pad_mask.len() != n {
            return Err(Error::shape("SequenceBatch::new", format!("pad mask of length {n}"), pad_mask.len()));
        }
        global_set.sort_unstable();
        global_set.dedup();
        for &g in &global_set {
            if g >= n {
                return Err(Error::OutOfRange { index: g, len: n });
            }
            if !pad_mask[g] {
                return Err(Error::Batch(format!("global token {g} is padding")));
            }
        }
        Ok(Self {
            embeddings,
            pad_mask,
            global_set,
        })
    }

    /// All tokens real, no globals.
    pub fn dense(embeddings: Matrix) -> Self {
        let n = embeddings.rows();
        Self {
            embeddings,
            pad_mask: vec![true; n],
            global_set: Vec::new(),
        }
    }

    pub fn with_globals(self, globals: Vec<usize>) -> Result<Self> {
        Self::new(self.embeddings, self.pad_mask, globals)
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_model(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn pad_mask(&self) -> &[bool] {
        &self.pad_mask
    }

    pub fn global_set(&self) -> &[usize] {
        &self.global_set
    }

    pub fn is_global(&self, i: usize) -> bool {
        self.global_set.binary_search(&i).is_ok()
    }

    pub fn is_real(&self, i: usize) -> bool {
        self.pad_mask[i]
    }

    /// Same mask and globals over different embeddings (used between stacked layers).
    pub fn with_embeddings(&self, embeddings: Matrix) -> Result<Self> {
        if embeddings.rows() != self.len() {
            return Err(Error::shape("with_embeddings", self.len(), embeddings.rows()));
        }
        Ok(Self {
            embeddings,
            pad_mask: self.pad_mask.clone(),
            global_set: self.global_set.clone(),
        })
    }
}
