//! `key = value` run configuration.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Keys may
//! contain dots but only the names in [`KEYS`] are accepted. Omitted keys take
//! their defaults, so an empty document is a valid config.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use clap::ValueEnum;
use poolattn::{AlphaMode, LayerConfig, PoolingKind};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Forward,
    OracleDiff,
    Gradcheck,
    Bench,
    Cost,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::OracleDiff => "oracle-diff",
            Command::Gradcheck => "gradcheck",
            Command::Bench => "bench",
            Command::Cost => "cost",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const KEYS: &[&str] = &[
    "d_model",
    "n_heads",
    "w1",
    "w2",
    "kappa",
    "xi",
    "compression",
    "pooling",
    "mix",
    "share_projections",
    "alpha",
    "n_list",
    "seed",
    "trials",
    "global_count",
    "dense_cap",
    "memory_budget_mb",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub w1: usize,
    pub w2: usize,
    pub kappa: usize,
    pub xi: usize,
    pub pooling: PoolingKind,
    pub mix: bool,
    pub share_projections: bool,
    pub alpha: AlphaMode,
    pub n_list: Vec<usize>,
    pub seed: u64,
    pub trials: usize,
    /// Leading tokens treated as global.
    pub global_count: usize,
    /// Largest `n` the dense baseline is run at.
    pub dense_cap: usize,
    /// Bench runs whose analytic peak exceeds this are skipped.
    pub memory_budget_mb: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            w1: LayerConfig::DEFAULT_W1,
            w2: LayerConfig::DEFAULT_W2,
            kappa: LayerConfig::DEFAULT_KAPPA,
            xi: LayerConfig::DEFAULT_XI,
            pooling: PoolingKind::LDConv,
            mix: false,
            share_projections: false,
            alpha: AlphaMode::PerHead,
            n_list: vec![512, 1024, 2048, 4096, 8192, 16384],
            seed: 0,
            trials: 3,
            global_count: 0,
            dense_cap: 2048,
            memory_budget_mb: 4096,
        }
    }
}

fn alpha_str(a: AlphaMode) -> &'static str {
    match a {
        AlphaMode::PerHead => "per-head",
        AlphaMode::PerModel => "per-model",
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| HarnessError::key(key, format!("cannot parse `{raw}`: {e}")))
}

fn boolean(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(HarnessError::key(key, format!("expected true or false, got `{raw}`"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        let mut compression = None;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, raw) = content.split_once('=').ok_or_else(|| HarnessError::Syntax {
                line: line_no,
                msg: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, raw) = (key.trim(), raw.trim());
            if key.is_empty() || key.chars().any(char::is_whitespace) {
                return Err(HarnessError::Syntax { line: line_no, msg: format!("bad key `{key}`") });
            }
            if !KEYS.contains(&key) {
                return Err(HarnessError::key(key, "unknown key"));
            }
            if !seen.insert(key.to_string()) {
                return Err(HarnessError::key(key, format!("duplicate key on line {line_no}")));
            }
            match key {
                "d_model" => cfg.d_model = value(key, raw)?,
                "n_heads" => cfg.n_heads = value(key, raw)?,
                "w1" => cfg.w1 = value(key, raw)?,
                "w2" => cfg.w2 = value(key, raw)?,
                "kappa" => cfg.kappa = value(key, raw)?,
                "xi" => cfg.xi = value(key, raw)?,
                "compression" => compression = Some(value::<usize>(key, raw)?),
                "pooling" => cfg.pooling = value(key, raw)?,
                "mix" => cfg.mix = boolean(key, raw)?,
                "share_projections" => cfg.share_projections = boolean(key, raw)?,
                "alpha" => {
                    cfg.alpha = match raw {
                        "per-head" => AlphaMode::PerHead,
                        "per-model" => AlphaMode::PerModel,
                        _ => return Err(HarnessError::key(key, format!("expected per-head or per-model, got `{raw}`"))),
                    }
                }
                "n_list" => {
                    cfg.n_list = raw
                        .split(',')
                        .map(|s| value::<usize>(key, s.trim()))
                        .collect::<Result<_>>()?
                }
                "seed" => cfg.seed = value(key, raw)?,
                "trials" => cfg.trials = value(key, raw)?,
                "global_count" => cfg.global_count = value(key, raw)?,
                "dense_cap" => cfg.dense_cap = value(key, raw)?,
                "memory_budget_mb" => cfg.memory_budget_mb = value(key, raw)?,
                _ => unreachable!("key list and match arms disagree"),
            }
        }
        if let Some(c) = compression {
            if seen.contains("kappa") || seen.contains("xi") {
                return Err(HarnessError::key("compression", "cannot be combined with kappa or xi"));
            }
            if c == 0 {
                return Err(HarnessError::key("compression", "must be >= 1"));
            }
            cfg.kappa = c + 1;
            cfg.xi = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; every key is written explicitly.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let list: Vec<String> = self.n_list.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "d_model = {}", self.d_model);
        let _ = writeln!(s, "n_heads = {}", self.n_heads);
        let _ = writeln!(s, "w1 = {}", self.w1);
        let _ = writeln!(s, "w2 = {}", self.w2);
        let _ = writeln!(s, "kappa = {}", self.kappa);
        let _ = writeln!(s, "xi = {}", self.xi);
        let _ = writeln!(s, "pooling = {}", self.pooling);
        let _ = writeln!(s, "mix = {}", self.mix);
        let _ = writeln!(s, "share_projections = {}", self.share_projections);
        let _ = writeln!(s, "alpha = {}", alpha_str(self.alpha));
        let _ = writeln!(s, "n_list = {}", list.join(", "));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "global_count = {}", self.global_count);
        let _ = writeln!(s, "dense_cap = {}", self.dense_cap);
        let _ = writeln!(s, "memory_budget_mb = {}", self.memory_budget_mb);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 {
            return Err(HarnessError::key("n_heads", "must be >= 1"));
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(HarnessError::key(
                "d_model",
                format!("must be a positive multiple of n_heads ({})", self.n_heads),
            ));
        }
        if self.w2 < self.w1 {
            return Err(HarnessError::key("w2", format!("must be >= w1 ({} < {})", self.w2, self.w1)));
        }
        if self.kappa == 0 {
            return Err(HarnessError::key("kappa", "must be >= 1"));
        }
        if self.xi == 0 || self.xi > self.kappa {
            return Err(HarnessError::key(
                "xi",
                format!("must satisfy 1 <= xi <= kappa ({} vs kappa {})", self.xi, self.kappa),
            ));
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(HarnessError::key("n_list", "needs at least one length, all >= 1"));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::key("n_list", "lengths must be strictly ascending"));
        }
        if self.trials < 3 {
            return Err(HarnessError::key("trials", format!("must be >= 3, got {}", self.trials)));
        }
        self.layer_config().validate()?;
        Ok(())
    }

    pub fn layer_config(&self) -> LayerConfig {
        LayerConfig {
            alpha_mode: self.alpha,
            ..LayerConfig::new(self.d_model, self.n_heads)
                .with_windows(self.w1, self.w2)
                .with_pooling(self.pooling, self.kappa, self.xi)
                .with_mix(self.mix)
                .with_shared_projections(self.share_projections)
        }
    }
}
