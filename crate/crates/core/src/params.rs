use crate::config::LayerConfig;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

/// Query/key/value projection weights (`d × d`) and biases (`d`).
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub bq: Vec<f64>,
    pub bk: Vec<f64>,
    pub bv: Vec<f64>,
}

impl Projections {
    pub fn zeros(d: usize) -> Self {
        Self {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            bq: vec![0.0; d],
            bk: vec![0.0; d],
            bv: vec![0.0; d],
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            wq: Matrix::identity(d),
            wk: Matrix::identity(d),
            wv: Matrix::identity(d),
            ..Self::zeros(d)
        }
    }

    fn random(d: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut mat = || uniform_matrix(d, d, bound, rng);
        let (wq, wk, wv) = (mat(), mat(), mat());
        let mut vec = || (0..d).map(|_| rng.uniform(-bound, bound)).collect::<Vec<_>>();
        let (bq, bk, bv) = (vec(), vec(), vec());
        Self { wq, wk, wv, bq, bk, bv }
    }

    fn validate(&self, d: usize, level: &str) -> Result<()> {
        for (name, w) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv)] {
            if w.shape() != (d, d) {
                return Err(Error::shape("LayerParams", format!("{level}.{name} {d}x{d}"), format!("{:?}", w.shape())));
            }
        }
        for (name, b) in [("bq", &self.bq), ("bk", &self.bk), ("bv", &self.bv)] {
            if b.len() != d {
                return Err(Error::shape("LayerParams", format!("{level}.{name} of length {d}"), b.len()));
            }
            if let Some(col) = b.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: 0, col });
            }
        }
        Ok(())
    }

    fn named_mut<'a>(&'a mut self, level: &'static str, out: &mut Vec<(String, &'a mut [f64])>) {
        let Projections { wq, wk, wv, bq, bk, bv } = self;
        out.push((format!("{level}.wq"), wq.as_mut_slice()));
        out.push((format!("{level}.wk"), wk.as_mut_slice()));
        out.push((format!("{level}.wv"), wv.as_mut_slice()));
        out.push((format!("{level}.bq"), bq.as_mut_slice()));
        out.push((format!("{level}.bk"), bk.as_mut_slice()));
        out.push((format!("{level}.bv"), bv.as_mut_slice()));
    }

    fn named<'a>(&'a self, level: &'static str, out: &mut Vec<(String, &'a [f64])>) {
        out.push((format!("{level}.wq"), self.wq.as_slice()));
        out.push((format!("{level}.wk"), self.wk.as_slice()));
        out.push((format!("{level}.wv"), self.wv.as_slice()));
        out.push((format!("{level}.bq"), &self.bq));
        out.push((format!("{level}.bk"), &self.bk));
        out.push((format!("{level}.bv"), &self.bv));
    }

    pub(crate) fn accumulate(&mut self, other: &Projections) {
        for (a, b) in [(&mut self.wq, &other.wq), (&mut self.wk, &other.wk), (&mut self.wv, &other.wv)] {
            a.add_assign(b).expect("matching projection shapes");
        }
        for (a, b) in [(&mut self.bq, &other.bq), (&mut self.bk, &other.bk), (&mut self.bv, &other.bv)] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Learnable state of one layer.
///
/// `second` is `None` when the two levels share projections; the second
/// level then reads `first`. `pool_k` / `pool_v` are the `κ × d` dynamic
/// weight generators for keys and values, present only for LDConv kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub first: Projections,
    pub second: Option<Projections>,
    pub pool_k: Option<Matrix>,
    pub pool_v: Option<Matrix>,
}

impl LayerParams {
    /// Seeded uniform initialisation in `[−1/√d, 1/√d]` for every entry.
    pub fn init(config: &LayerConfig, seed: u64) -> Self {
        let d = config.d_model;
        let mut rng = SplitMix64::new(seed);
        let first = Projections::random(d, &mut rng);
        let second = (!config.share_projections).then(|| Projections::random(d, &mut rng));
        let bound = 1.0 / (d as f64).sqrt();
        let (pool_k, pool_v) = if config.pooling.is_learnable() {
            (
                Some(uniform_matrix(config.kappa, d, bound, &mut rng)),
                Some(uniform_matrix(config.kappa, d, bound, &mut rng)),
            )
        } else {
            (None, None)
        };
        Self {
            first,
            second,
            pool_k,
            pool_v,
        }
    }

    /// All-zero parameters laid out for `config`.
    pub fn zeros(config: &LayerConfig) -> Self {
        let d = config.d_model;
        let pool = || config.pooling.is_learnable().then(|| Matrix::zeros(config.kappa, d));
        Self {
            first: Projections::zeros(d),
            second: (!config.share_projections).then(|| Projections::zeros(d)),
            pool_k: pool(),
            pool_v: pool(),
        }
    }

    pub fn second_level(&self) -> &Projections {
        self.second.as_ref().unwrap_or(&self.first)
    }

    pub fn validate(&self, config: &LayerConfig) -> Result<()> {
        let d = config.d_model;
        self.first.validate(d, "first")?;
        match (&self.second, config.share_projections) {
            (Some(p), false) => p.validate(d, "second")?,
            (None, true) => {}
            (Some(_), true) => {
                return Err(Error::Config("shared projections configured but separate second-level weights given".into()))
            }
            (None, false) => return Err(Error::Config("missing second-level projections".into())),
        }
        for (name, w) in [("pool_k", &self.pool_k), ("pool_v", &self.pool_v)] {
            match (w, config.pooling.is_learnable()) {
                (Some(w), true) if w.shape() != (config.kappa, d) => {
                    return Err(Error::shape(
                        "LayerParams",
                        format!("{name} {}x{d}", config.kappa),
                        format!("{:?}", w.shape()),
                    ))
                }
                (Some(_), true) | (None, false) => {}
                (None, true) => return Err(Error::Config(format!("{} pooling needs {name}", config.pooling))),
                (Some(_), false) => return Err(Error::Config(format!("{} pooling takes no {name}", config.pooling))),
            }
        }
        Ok(())
    }

    /// Every learnable tensor as a flat slice, in a fixed order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        let LayerParams {
            first,
            second,
            pool_k,
            pool_v,
        } = self;
        first.named_mut("first", &mut out);
        if let Some(s) = second {
            s.named_mut("second", &mut out);
        }
        if let Some(p) = pool_k {
            out.push(("pool_k".to_string(), p.as_mut_slice()));
        }
        if let Some(p) = pool_v {
            out.push(("pool_v".to_string(), p.as_mut_slice()));
        }
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        self.first.named("first", &mut out);
        if let Some(s) = &self.second {
            s.named("second", &mut out);
        }
        if let Some(p) = &self.pool_k {
            out.push(("pool_k".to_string(), p.as_slice()));
        }
        if let Some(p) = &self.pool_v {
            out.push(("pool_v".to_string(), p.as_slice()));
        }
        out
    }
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut SplitMix64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-bound, bound)).expect("finite uniform draws")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PoolingKind;

    #[test]
    fn init_layout_follows_config() {
        let cfg = LayerConfig::new(8, 2).with_pooling(PoolingKind::LDConv, 3, 2);
        let p = LayerParams::init(&cfg, 7);
        p.validate(&cfg).unwrap();
        assert_eq!(p.pool_k.as_ref().unwrap().shape(), (3, 8));
        assert_eq!(p.named_tensors().len(), 14);
        let bound = 1.0 / 8f64.sqrt();
        assert!(p.named_tensors().iter().all(|(_, t)| t.iter().all(|v| v.abs() <= bound)));

        let shared = cfg.clone().with_shared_projections(true).with_pooling(PoolingKind::Max, 3, 2);
        let p = LayerParams::init(&shared, 7);
        p.validate(&shared).unwrap();
        assert!(p.second.is_none() && p.pool_k.is_none());
        assert!(p.validate(&cfg).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = LayerConfig::new(4, 1);
        assert_eq!(LayerParams::init(&cfg, 3), LayerParams::init(&cfg, 3));
        assert_ne!(LayerParams::init(&cfg, 3), LayerParams::init(&cfg, 4));
    }
}
