use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Operator used to compress each key/value segment into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolingKind {
    Mean,
    Max,
    /// Dynamic weights from the segment's center row.
    LDConv,
    /// Dynamic weights from the segment's mean row.
    MeanLDConv,
}

impl PoolingKind {
    pub const ALL: [PoolingKind; 4] = [
        PoolingKind::Mean,
        PoolingKind::Max,
        PoolingKind::LDConv,
        PoolingKind::MeanLDConv,
    ];

    /// Whether the operator carries a learnable `κ × d` weight.
    pub fn is_learnable(self) -> bool {
        matches!(self, PoolingKind::LDConv | PoolingKind::MeanLDConv)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PoolingKind::Mean => "mean",
            PoolingKind::Max => "max",
            PoolingKind::LDConv => "ldconv",
            PoolingKind::MeanLDConv => "mean-ldconv",
        }
    }
}

impl fmt::Display for PoolingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "mean" => Ok(PoolingKind::Mean),
            "max" => Ok(PoolingKind::Max),
            "ldconv" => Ok(PoolingKind::LDConv),
            "mean-ldconv" | "meanldconv" => Ok(PoolingKind::MeanLDConv),
            other => Err(Error::Config(format!("unknown pooling kind `{other}`"))),
        }
    }
}

/// What the second level projects from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SecondLevelInput {
    /// The first-level output `Y` (stacked levels).
    #[default]
    FirstLevelOutput,
    /// The raw layer input `X` (the "Mix" ablation).
    RawEmbeddings,
}

/// Scaling constant applied to query–key products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AlphaMode {
    /// `1/√d`
    PerModel,
    /// `1/√(d/h)`; identical to `PerModel` for a single head.
    #[default]
    PerHead,
}

/// Hyperparameters of one two-level attention layer.
///
/// Windows are one-side radii: a token at `i` sees `[i − w, i + w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub w1: usize,
    pub w2: usize,
    pub kappa: usize,
    pub xi: usize,
    pub pooling: PoolingKind,
    pub second_level_input: SecondLevelInput,
    pub share_projections: bool,
    pub alpha_mode: AlphaMode,
}

impl LayerConfig {
    pub const DEFAULT_W1: usize = 128;
    pub const DEFAULT_W2: usize = 512;
    pub const DEFAULT_KAPPA: usize = 5;
    pub const DEFAULT_XI: usize = 4;

    /// Default windows and pooling geometry for the given width.
    pub fn new(d_model: usize, n_heads: usize) -> Self {
        Self {
            d_model,
            n_heads,
            w1: Self::DEFAULT_W1,
            w2: Self::DEFAULT_W2,
            kappa: Self::DEFAULT_KAPPA,
            xi: Self::DEFAULT_XI,
            pooling: PoolingKind::LDConv,
            second_level_input: SecondLevelInput::FirstLevelOutput,
            share_projections: false,
            alpha_mode: AlphaMode::PerHead,
        }
    }

    pub fn with_windows(mut self, w1: usize, w2: usize) -> Self {
        self.w1 = w1;
        self.w2 = w2;
        self
    }

    pub fn with_pooling(mut self, kind: PoolingKind, kappa: usize, xi: usize) -> Self {
        self.pooling = kind;
        self.kappa = kappa;
        self.xi = xi;
        self
    }

    pub fn with_mix(mut self, mix: bool) -> Self {
        self.second_level_input = if mix {
            SecondLevelInput::RawEmbeddings
        } else {
            SecondLevelInput::FirstLevelOutput
        };
        self
    }

    pub fn with_shared_projections(mut self, share: bool) -> Self {
        self.share_projections = share;
        self
    }

    pub fn is_mix(&self) -> bool {
        self.second_level_input == SecondLevelInput::RawEmbeddings
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn alpha(&self) -> f64 {
        let width = match self.alpha_mode {
            AlphaMode::PerModel => self.d_model,
            AlphaMode::PerHead => self.head_dim(),
        };
        1.0 / (width as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 {
            return Err(Error::Config("d_model and n_heads must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.w2 < self.w1 {
            return Err(Error::Config(format!("w2 ({}) must be >= w1 ({})", self.w2, self.w1)));
        }
        if self.kappa == 0 {
            return Err(Error::Config("kappa must be >= 1".into()));
        }
        if self.xi == 0 || self.xi > self.kappa {
            return Err(Error::Config(format!(
                "xi ({}) must satisfy 1 <= xi <= kappa ({})",
                self.xi, self.kappa
            )));
        }
        Ok(())
    }
}

/// Which attention levels a layer in a stack runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    SlidingOnly,
    TwoLevel,
}
