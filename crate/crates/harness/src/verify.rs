//! Oracle diffs, finite-difference gradient checks and perturbation reach tests.

use poolattn::attention::{layer_backward_with_fault, layer_forward_with_fault, Fault};
use poolattn::matrix::dot;
use poolattn::oracle::{self, LITERAL_MAX_LEN};
use poolattn::rng::SplitMix64;
use poolattn::{
    layer_forward, layer_output, LayerConfig, LayerKind, LayerParams, Matrix, PoolingKind, SequenceBatch,
};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::synth::synth_batch;

pub const ORACLE_THRESHOLD: f64 = 1e-10;
pub const GRAD_THRESHOLD: f64 = 1e-6;
pub const GRAD_STEP: f64 = 1e-5;
/// Largest length accepted by the gradient check.
pub const GRAD_MAX_LEN: usize = 64;
/// Denominator floor of the gradient relative error.
pub const GRAD_FLOOR: f64 = 1e-3;

const VARIANTS: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

fn variant(cfg: &RunConfig, kind: PoolingKind, mix: bool, share: bool) -> LayerConfig {
    LayerConfig {
        pooling: kind,
        ..cfg.layer_config().with_mix(mix).with_shared_projections(share)
    }
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Result<Matrix> {
    let mut rng = SplitMix64::new(seed);
    Ok(Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffRow {
    pub n: usize,
    pub pooling: PoolingKind,
    pub mix: bool,
    pub share: bool,
    pub oracle: &'static str,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffReport {
    pub threshold: f64,
    pub rows: Vec<DiffRow>,
}

impl DiffReport {
    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.max_rel_err <= self.threshold)
    }
}

/// Fast path against the brute-force oracles for every pooling kind with Mix
/// and weight sharing on and off. The literal per-token oracle is included
/// when `w2 ≥ n − 1`, the range where it coincides with the shared grid.
pub fn run_oracle_diff(cfg: &RunConfig, fault: Fault) -> Result<DiffReport> {
    if let Some(&n) = cfg.n_list.iter().find(|&&n| n > LITERAL_MAX_LEN) {
        return Err(HarnessError::key(
            "n_list",
            format!("oracle-diff accepts lengths up to {LITERAL_MAX_LEN}, got {n}"),
        ));
    }
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        let batch = synth_batch(n, cfg.d_model, cfg.seed, cfg.global_count)?;
        for kind in PoolingKind::ALL {
            for (mix, share) in VARIANTS {
                let c = variant(cfg, kind, mix, share);
                let params = LayerParams::init(&c, cfg.seed.wrapping_add(1));
                let (out, trace) = layer_forward_with_fault(&batch, &params, &c, fault)?;
                let mut push = |oracle, err: f64| {
                    rows.push(DiffRow { n, pooling: kind, mix, share, oracle, max_rel_err: err })
                };
                let first = oracle::reference_first_level(&batch, &params, &c)?;
                push("first-level-dense", trace.y.max_rel_diff(&first)?);
                let full = oracle::reference_layer(&batch, &params, &c)?;
                push("layer-brute-force", out.max_rel_diff(&full)?);
                if c.w2 + 1 >= n {
                    let input = if mix { batch.embeddings() } else { &trace.y };
                    let literal = oracle::literal_pooling_attention(&batch, input, &params, &c)?;
                    push("literal-pooling", trace.z.max_rel_diff(&literal)?);
                }
            }
        }
    }
    Ok(DiffReport { threshold: ORACLE_THRESHOLD, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub n: usize,
    pub pooling: PoolingKind,
    pub mix: bool,
    pub share: bool,
    /// Parameter name, or `input`.
    pub tensor: String,
    pub entries: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub threshold: f64,
    pub rows: Vec<GradRow>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.max_rel_err <= self.threshold)
    }
}

/// `|a − f| / max(|a|, |f|, GRAD_FLOOR)`.
pub fn grad_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn projected_loss(batch: &SequenceBatch, params: &LayerParams, c: &LayerConfig, r: &Matrix) -> Result<f64> {
    let (out, _) = layer_forward(batch, params, c)?;
    Ok(dot(out.as_slice(), r.as_slice()))
}

/// Central differences of `L = ⟨output, R⟩` for every parameter and input
/// entry, over all pooling kinds with Mix and weight sharing on and off. The
/// last token is padding when it is not global, so masked rows are covered.
pub fn run_gradcheck(cfg: &RunConfig, fault: Fault) -> Result<GradReport> {
    if let Some(&n) = cfg.n_list.iter().find(|&&n| n > GRAD_MAX_LEN) {
        return Err(HarnessError::key(
            "n_list",
            format!("gradcheck accepts lengths up to {GRAD_MAX_LEN}, got {n}"),
        ));
    }
    let h = GRAD_STEP;
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        let dense = synth_batch(n, cfg.d_model, cfg.seed, cfg.global_count)?;
        let mut mask = vec![true; n];
        if n >= 3 && cfg.global_count < n {
            mask[n - 1] = false;
        }
        let batch = SequenceBatch::new(dense.embeddings().clone(), mask, dense.global_set().to_vec())?;
        let upstream = random_matrix(n, cfg.d_model, cfg.seed ^ 0x9e37_79b9)?;
        for kind in PoolingKind::ALL {
            for (mix, share) in VARIANTS {
                let c = variant(cfg, kind, mix, share);
                let params = LayerParams::init(&c, cfg.seed.wrapping_add(2));
                let (_, trace) = layer_forward(&batch, &params, &c)?;
                let grads = layer_backward_with_fault(&trace, &upstream, fault)?;

                let mut probe = params.clone();
                let analytic = grads.params.named_tensors();
                for (t, (name, values)) in analytic.iter().enumerate() {
                    let mut worst: f64 = 0.0;
                    for (k, &a) in values.iter().enumerate() {
                        let orig = probe.named_tensors()[t].1[k];
                        probe.named_tensors_mut()[t].1[k] = orig + h;
                        let up = projected_loss(&batch, &probe, &c, &upstream)?;
                        probe.named_tensors_mut()[t].1[k] = orig - h;
                        let down = projected_loss(&batch, &probe, &c, &upstream)?;
                        probe.named_tensors_mut()[t].1[k] = orig;
                        worst = worst.max(grad_rel_err(a, (up - down) / (2.0 * h)));
                    }
                    rows.push(GradRow { n, pooling: kind, mix, share, tensor: name.clone(), entries: values.len(), max_rel_err: worst });
                }

                let x = batch.embeddings();
                let mut worst: f64 = 0.0;
                for (k, &a) in grads.input.as_slice().iter().enumerate() {
                    let mut xp = x.clone();
                    xp.as_mut_slice()[k] += h;
                    let up = projected_loss(&batch.with_embeddings(xp.clone())?, &params, &c, &upstream)?;
                    xp.as_mut_slice()[k] -= 2.0 * h;
                    let down = projected_loss(&batch.with_embeddings(xp)?, &params, &c, &upstream)?;
                    worst = worst.max(grad_rel_err(a, (up - down) / (2.0 * h)));
                }
                rows.push(GradRow { n, pooling: kind, mix, share, tensor: "input".into(), entries: x.as_slice().len(), max_rel_err: worst });
            }
        }
    }
    Ok(GradReport { threshold: GRAD_THRESHOLD, rows })
}

/// Which layer shape a reach check exercised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReachMode {
    SlidingOnly,
    /// Second level reads the raw embeddings.
    TwoLevelMix,
    /// Second level reads the first-level output.
    TwoLevel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachViolation {
    pub mode: ReachMode,
    /// Perturbed source token.
    pub source: usize,
    pub target: usize,
    /// `true` if the target changed outside its allowed set; `false` if a
    /// global relation failed to propagate.
    pub leaked: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReachReport {
    pub pairs_checked: usize,
    pub violations: Vec<ReachViolation>,
    /// A source beyond `w1` of a non-global target, outside every global's
    /// influence, that still changed it.
    pub witness: Option<(usize, usize)>,
}

impl ReachReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.witness.is_some()
    }
}

/// Shape of the perturbation experiment.
#[derive(Debug, Clone)]
pub struct ReachSetup {
    pub n: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub w1: usize,
    pub w2: usize,
    pub kappa: usize,
    pub xi: usize,
    pub globals: Vec<usize>,
}

impl Default for ReachSetup {
    fn default() -> Self {
        Self { n: 48, d_model: 4, n_heads: 2, w1: 2, w2: 6, kappa: 3, xi: 2, globals: vec![20] }
    }
}

/// Perturbs every token in turn and checks which output rows change bitwise.
///
/// Sliding-only: `i` may change only if `|i − j| ≤ w1` or either is global.
/// Mix: additionally `|i − j| ≤ w2 + κ`. Reading `Y`, the second level's
/// sources are themselves first-level outputs, so `j` may reach `i` through
/// any `r` with `|r − i| ≤ w2 + κ` that `j` reaches in the first level.
/// Global targets must change for every source and global sources must
/// change every target.
pub fn run_reach(setup: &ReachSetup, kind: PoolingKind, seed: u64) -> Result<ReachReport> {
    let ReachSetup { n, d_model, n_heads, w1, w2, kappa, xi, .. } = *setup;
    let batch = SequenceBatch::dense(random_matrix(n, d_model, seed)?).with_globals(setup.globals.clone())?;
    let globals = batch.global_set();
    let first = |i: usize, j: usize| i.abs_diff(j) <= w1 || globals.contains(&i) || globals.contains(&j);
    let reach = w2 + kappa;

    let mut report = ReachReport::default();
    let modes = [ReachMode::SlidingOnly, ReachMode::TwoLevelMix, ReachMode::TwoLevel];
    for mode in modes {
        let c = LayerConfig::new(d_model, n_heads)
            .with_windows(w1, w2)
            .with_pooling(kind, kappa, xi)
            .with_mix(mode == ReachMode::TwoLevelMix);
        let layer_kind = if mode == ReachMode::SlidingOnly { LayerKind::SlidingOnly } else { LayerKind::TwoLevel };
        let params = LayerParams::init(&c, seed.wrapping_mul(31).wrapping_add(7));
        let base = layer_output(&batch, &params, &c, layer_kind)?;
        let allowed = |i: usize, j: usize| match mode {
            ReachMode::SlidingOnly => first(i, j),
            ReachMode::TwoLevelMix => first(i, j) || i.abs_diff(j) <= reach,
            ReachMode::TwoLevel => {
                let (lo, hi) = (i.saturating_sub(reach), (i + reach).min(n - 1));
                first(i, j) || (lo..=hi).any(|r| first(r, j))
            }
        };
        for j in 0..n {
            let mut x = batch.embeddings().clone();
            x.row_mut(j).iter_mut().for_each(|v| *v += 0.25);
            let out = layer_output(&batch.with_embeddings(x)?, &params, &c, layer_kind)?;
            for i in 0..n {
                report.pairs_checked += 1;
                let changed = out.row(i).iter().zip(base.row(i)).any(|(a, b)| a.to_bits() != b.to_bits());
                let must = globals.contains(&i) || globals.contains(&j) || i == j;
                if changed && !allowed(i, j) || !changed && must {
                    report.violations.push(ReachViolation { mode, source: j, target: i, leaked: changed });
                }
                let beyond_globals = (0..n).filter(|&r| i.abs_diff(r) <= reach).all(|r| !globals.contains(&r));
                if changed && mode != ReachMode::SlidingOnly && i.abs_diff(j) > w1 && !first(i, j) && beyond_globals {
                    report.witness.get_or_insert((j, i));
                }
            }
        }
    }
    Ok(report)
}
