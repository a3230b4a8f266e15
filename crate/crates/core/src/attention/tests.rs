use super::*;
use crate::config::PoolingKind;
use crate::matrix::dot;
use crate::oracle::{self, DenseMask};
use crate::params::Projections;
use crate::rng::SplitMix64;

fn random(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0)).unwrap()
}

fn batch(n: usize, d: usize, seed: u64) -> SequenceBatch {
    SequenceBatch::dense(random(n, d, &mut SplitMix64::new(seed)))
}

fn cfg(d: usize, h: usize, w1: usize, w2: usize, kind: PoolingKind, kappa: usize, xi: usize) -> LayerConfig {
    LayerConfig::new(d, h).with_windows(w1, w2).with_pooling(kind, kappa, xi)
}

#[test]
fn single_token_returns_its_value() {
    let c = cfg(4, 2, 3, 5, PoolingKind::Mean, 5, 4);
    let b = batch(1, 4, 1);
    let p = LayerParams::init(&c, 2);
    let (y, trace) = first_level_forward(&b, &p, &c).unwrap();
    assert_eq!(y.row(0), trace.qkv.v.row(0));
}

#[test]
fn full_window_is_dense_attention() {
    for h in [1, 2] {
        let c = cfg(4, h, 20, 20, PoolingKind::Mean, 1, 1);
        let b = batch(9, 4, 3);
        let p = LayerParams::init(&c, 4);
        let (y, _) = first_level_forward(&b, &p, &c).unwrap();
        let qkv = project_qkv(b.embeddings(), &p.first).unwrap();
        let dense = oracle::dense_multihead(&qkv.q, &qkv.k, &qkv.v, &DenseMask::full(9), c.alpha(), h).unwrap();
        assert!(y.max_rel_diff(&dense).unwrap() <= 1e-12);
    }
}

#[test]
fn windowed_with_global_matches_masked_dense() {
    let c = cfg(6, 3, 2, 4, PoolingKind::Mean, 3, 2);
    let b = batch(12, 6, 5).with_globals(vec![0]).unwrap();
    let p = LayerParams::init(&c, 6);
    let (y, _) = first_level_forward(&b, &p, &c).unwrap();
    let reference = oracle::reference_first_level(&b, &p, &c).unwrap();
    assert!(y.max_rel_diff(&reference).unwrap() <= 1e-12);
}

#[test]
fn identity_pooling_full_window_is_dense_second_level() {
    let c = cfg(4, 2, 1, 30, PoolingKind::LDConv, 1, 1);
    let b = batch(10, 4, 7);
    let p = LayerParams::init(&c, 8);
    let (y, _) = first_level_forward(&b, &p, &c).unwrap();
    let (z, _) = second_level_forward(&b, &y, &p, &c).unwrap();
    let qkv = project_qkv(&y, p.second_level()).unwrap();
    let dense = oracle::dense_multihead(&qkv.q, &qkv.k, &qkv.v, &DenseMask::full(10), c.alpha(), 2).unwrap();
    assert!(z.max_rel_diff(&dense).unwrap() <= 1e-12);
}

#[test]
fn shared_grid_matches_literal_oracle_when_window_covers_sequence() {
    for kind in PoolingKind::ALL {
        let c = cfg(4, 2, 2, 16, kind, 5, 4);
        let b = batch(16, 4, 9);
        let p = LayerParams::init(&c, 10);
        let (y, _) = first_level_forward(&b, &p, &c).unwrap();
        let (z, _) = second_level_forward(&b, &y, &p, &c).unwrap();
        let literal = oracle::literal_pooling_attention(&b, &y, &p, &c).unwrap();
        assert!(z.max_rel_diff(&literal).unwrap() <= 1e-12, "{kind}");
    }
}

#[test]
fn shared_grid_matches_brute_force_for_narrow_windows() {
    for kind in PoolingKind::ALL {
        for (kappa, xi, w2) in [(3, 2, 6), (5, 4, 5), (2, 1, 3), (4, 4, 2)] {
            let c = cfg(4, 2, 2, w2, kind, kappa, xi);
            let b = batch(20, 4, 11).with_globals(vec![3]).unwrap();
            let p = LayerParams::init(&c, 12);
            let (out, _) = layer_forward(&b, &p, &c).unwrap();
            let reference = oracle::reference_layer(&b, &p, &c).unwrap();
            assert!(out.max_rel_diff(&reference).unwrap() <= 1e-12, "{kind} κ={kappa} ξ={xi}");
        }
    }
}

#[test]
fn literal_and_shared_grid_differ_for_narrow_windows() {
    let c = cfg(4, 1, 2, 6, PoolingKind::Mean, 3, 2);
    let b = batch(20, 4, 13);
    let p = LayerParams::init(&c, 14);
    let (y, _) = first_level_forward(&b, &p, &c).unwrap();
    let (z, _) = second_level_forward(&b, &y, &p, &c).unwrap();
    let literal = oracle::literal_pooling_attention(&b, &y, &p, &c).unwrap();
    assert!(z.max_rel_diff(&literal).unwrap() > 1e-6);
}

#[test]
fn constant_embeddings_give_equal_rows() {
    let c = cfg(4, 2, 1, 8, PoolingKind::Mean, 3, 2);
    let x = Matrix::from_fn(12, 4, |_, col| col as f64 * 0.3 - 0.4).unwrap();
    let b = SequenceBatch::dense(x);
    let p = LayerParams::init(&c, 15);
    let (_, trace) = layer_forward(&b, &p, &c).unwrap();
    let second = trace.second.unwrap();
    for j in 1..second.pooled_k.rows() {
        for (a, b) in second.pooled_k.row(j).iter().zip(second.pooled_k.row(0)) {
            assert!((a - b).abs() < 1e-14);
        }
    }
    for i in 1..12 {
        for (a, b) in trace.z.row(i).iter().zip(trace.z.row(0)) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_second_value_projection_leaves_first_level() {
    let c = cfg(4, 2, 2, 6, PoolingKind::Max, 3, 2);
    let b = batch(11, 4, 16);
    let mut p = LayerParams::init(&c, 17);
    let second = p.second.as_mut().unwrap();
    second.wv = Matrix::zeros(4, 4);
    second.bv = vec![0.0; 4];
    let (out, trace) = layer_forward(&b, &p, &c).unwrap();
    assert_eq!(out, trace.y);
}

/// Weights whose two heads both reproduce the single-head scores: queries
/// and keys repeat one `dh × d` block per head, and the two-head run doubles
/// the query map so that `α·(2q_h)·k_h = α·(q·k)` with `α = 1/√d` in both.
#[test]
fn decoupled_heads_reproduce_single_head() {
    let (d, dh) = (4, 2);
    let mut rng = SplitMix64::new(18);
    let block = |rng: &mut SplitMix64| random(dh, d, rng);
    let stack = |a: &Matrix, s: f64| Matrix::from_fn(d, d, |r, c| s * a.get(r % dh, c)).unwrap();
    let bias = |b: &[f64], s: f64| (0..d).map(|r| s * b[r % dh]).collect::<Vec<_>>();
    let proj = |rng: &mut SplitMix64, s: f64| {
        let (aq, ak) = (block(rng), block(rng));
        let (bq, bk): (Vec<f64>, Vec<f64>) = ((0..dh).map(|_| rng.uniform(-1.0, 1.0)).collect(), (0..dh).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let wv = random(d, d, rng);
        let bv: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        (
            Projections { wq: stack(&aq, 1.0), wk: stack(&ak, 1.0), wv: wv.clone(), bq: bias(&bq, 1.0), bk: bias(&bk, 1.0), bv: bv.clone() },
            Projections { wq: stack(&aq, s), wk: stack(&ak, 1.0), wv, bq: bias(&bq, s), bk: bias(&bk, 1.0), bv },
        )
    };
    let (f1, f2) = proj(&mut rng, 2.0);
    let (s1, s2) = proj(&mut rng, 2.0);
    let one = cfg(d, 1, 2, 6, PoolingKind::Mean, 3, 2);
    let two = LayerConfig { alpha_mode: crate::config::AlphaMode::PerModel, ..cfg(d, 2, 2, 6, PoolingKind::Mean, 3, 2) };
    let p1 = LayerParams { first: f1, second: Some(s1), pool_k: None, pool_v: None };
    let p2 = LayerParams { first: f2, second: Some(s2), pool_k: None, pool_v: None };
    let b = batch(13, d, 19);
    let (o1, _) = layer_forward(&b, &p1, &one).unwrap();
    let (o2, _) = layer_forward(&b, &p2, &two).unwrap();
    assert!(o2.max_rel_diff(&o1).unwrap() < 1e-13);
}

#[test]
fn attention_rows_are_distributions() {
    let c = cfg(6, 3, 2, 7, PoolingKind::LDConv, 3, 2);
    let b = batch(25, 6, 20).with_globals(vec![0, 4]).unwrap();
    let p = LayerParams::init(&c, 21);
    let (out, trace) = layer_forward(&b, &p, &c).unwrap();
    for att in [&trace.first.attention, &trace.second.as_ref().unwrap().attention] {
        for i in 0..att.queries() {
            for h in 0..att.heads {
                let probs = att.probs_of(i, h);
                assert!(probs.iter().all(|&v| v >= 0.0));
                assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }
    assert_eq!(out, trace.y.add(&trace.z).unwrap());
    assert_eq!(trace.first.attention.keys_of(0).len(), 25);
    assert_eq!(trace.first.attention.keys_of(12), &[0, 4, 10, 11, 12, 13, 14]);
}

#[test]
fn padding_rows_are_zero_and_invisible() {
    let c = cfg(4, 2, 2, 6, PoolingKind::LDConv, 3, 2);
    let mut rng = SplitMix64::new(22);
    let x = random(10, 4, &mut rng);
    let mut mask = vec![true; 10];
    mask[3] = false;
    mask[8] = false;
    mask[9] = false;
    let b = SequenceBatch::new(x.clone(), mask.clone(), vec![1]).unwrap();
    let p = LayerParams::init(&c, 23);
    let (out, trace) = layer_forward(&b, &p, &c).unwrap();
    for i in [3, 8, 9] {
        assert!(out.row(i).iter().all(|&v| v == 0.0));
    }
    // changing padding embeddings changes nothing
    let mut x2 = x.clone();
    for i in [3, 8, 9] {
        x2.row_mut(i).iter_mut().for_each(|v| *v = 7.5);
    }
    let b2 = SequenceBatch::new(x2, mask, vec![1]).unwrap();
    assert_eq!(layer_forward(&b2, &p, &c).unwrap().0, out);
    let reference = oracle::reference_layer(&b, &p, &c).unwrap();
    assert!(out.max_rel_diff(&reference).unwrap() <= 1e-12);
    // padding inputs get no gradient
    let g = layer_backward(&trace, &random(10, 4, &mut rng)).unwrap();
    for i in [3, 8, 9] {
        assert!(g.input.row(i).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn all_padding_segment_is_dropped() {
    let c = cfg(2, 1, 1, 8, PoolingKind::Mean, 2, 2);
    let mut mask = vec![true; 8];
    mask[2] = false;
    mask[3] = false;
    let b = SequenceBatch::new(random(8, 2, &mut SplitMix64::new(1)), mask, vec![]).unwrap();
    let p = LayerParams::init(&c, 2);
    let (_, trace) = layer_forward(&b, &p, &c).unwrap();
    assert_eq!(trace.second.unwrap().grid.segment_starts, vec![0, 4, 6]);
}

#[test]
fn degenerate_second_level_window_is_flagged() {
    // centers at 2, 7, 12, …; token 0 with w2 = 1 sees none
    let c = cfg(2, 1, 0, 1, PoolingKind::Mean, 5, 5);
    let b = batch(15, 2, 3);
    let p = LayerParams::init(&c, 4);
    let (_, trace) = layer_forward(&b, &p, &c).unwrap();
    let second = trace.second.as_ref().unwrap();
    assert!(second.empty_tokens.contains(&0));
    assert!(trace.z.row(0).iter().all(|&v| v == 0.0));
}

#[test]
fn input_errors() {
    let c = cfg(4, 2, 2, 6, PoolingKind::Mean, 3, 2);
    let p = LayerParams::init(&c, 1);
    assert!(layer_forward(&batch(5, 3, 1), &p, &c).is_err());
    assert!(layer_forward(&SequenceBatch::dense(Matrix::zeros(0, 4)), &p, &c).is_err());
    let bad = LayerConfig { xi: 4, ..c.clone() };
    assert!(layer_forward(&batch(5, 4, 1), &p, &bad).is_err());
    let (_, trace) = layer_forward(&batch(5, 4, 1), &p, &c).unwrap();
    assert!(layer_backward(&trace, &Matrix::zeros(4, 4)).is_err());
}

#[test]
fn untraced_forward_matches_traced() {
    for mix in [false, true] {
        let c = cfg(4, 2, 2, 6, PoolingKind::MeanLDConv, 3, 2).with_mix(mix);
        let b = batch(17, 4, 30).with_globals(vec![2]).unwrap();
        let p = LayerParams::init(&c, 31);
        let (out, _) = layer_forward(&b, &p, &c).unwrap();
        assert_eq!(layer_output(&b, &p, &c, LayerKind::TwoLevel).unwrap(), out);
    }
}

// ---------------------------------------------------------------------------
// gradients
// ---------------------------------------------------------------------------

fn loss(b: &SequenceBatch, p: &LayerParams, c: &LayerConfig, r: &Matrix) -> f64 {
    let (out, _) = layer_forward(b, p, c).unwrap();
    dot(out.as_slice(), r.as_slice())
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn max_fd_error(b: &SequenceBatch, p: &LayerParams, c: &LayerConfig, r: &Matrix) -> f64 {
    let h = 1e-5;
    let (_, trace) = layer_forward(b, p, c).unwrap();
    let grads = layer_backward(&trace, r).unwrap();
    let mut worst: f64 = 0.0;

    let analytic = grads.params.named_tensors();
    let mut probe = p.clone();
    let names: Vec<(String, usize)> = probe.named_tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    for (t, (name, len)) in names.iter().enumerate() {
        for k in 0..*len {
            let orig = probe.named_tensors()[t].1[k];
            probe.named_tensors_mut()[t].1[k] = orig + h;
            let up = loss(b, &probe, c, r);
            probe.named_tensors_mut()[t].1[k] = orig - h;
            let down = loss(b, &probe, c, r);
            probe.named_tensors_mut()[t].1[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let e = rel_err(analytic[t].1[k], fd);
            assert!(e <= 1e-6, "{name}[{k}]: analytic {} vs fd {fd}", analytic[t].1[k]);
            worst = worst.max(e);
        }
    }
    let x = b.embeddings();
    for k in 0..x.as_slice().len() {
        let mut xp = x.clone();
        xp.as_mut_slice()[k] += h;
        let up = loss(&b.with_embeddings(xp.clone()).unwrap(), p, c, r);
        xp.as_mut_slice()[k] -= 2.0 * h;
        let down = loss(&b.with_embeddings(xp).unwrap(), p, c, r);
        let fd = (up - down) / (2.0 * h);
        let e = rel_err(grads.input.as_slice()[k], fd);
        assert!(e <= 1e-6, "input[{k}]: analytic {} vs fd {fd}", grads.input.as_slice()[k]);
        worst = worst.max(e);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = SplitMix64::new(40);
    for kind in PoolingKind::ALL {
        for (mix, share) in [(false, false), (true, false), (false, true), (true, true)] {
            let c = cfg(4, 2, 2, 6, kind, 3, 2).with_mix(mix).with_shared_projections(share);
            let b = batch(10, 4, 41).with_globals(vec![0]).unwrap();
            let p = LayerParams::init(&c, 42);
            let r = random(10, 4, &mut rng);
            max_fd_error(&b, &p, &c, &r);
        }
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let c = cfg(4, 2, 2, 6, PoolingKind::LDConv, 3, 2);
    let b = batch(10, 4, 43);
    let p = LayerParams::init(&c, 44);
    let (_, trace) = layer_forward(&b, &p, &c).unwrap();
    let g = layer_backward(&trace, &Matrix::zeros(10, 4)).unwrap();
    assert!(g.params.named_tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
    assert_eq!(g.input.max_abs(), 0.0);
}

#[test]
fn shared_gradient_is_sum_of_unshared() {
    let shared_cfg = cfg(4, 2, 2, 6, PoolingKind::LDConv, 3, 2).with_shared_projections(true);
    let split_cfg = shared_cfg.clone().with_shared_projections(false);
    let b = batch(10, 4, 45);
    let shared = LayerParams::init(&shared_cfg, 46);
    let split = LayerParams { second: Some(shared.first.clone()), ..shared.clone() };
    let r = random(10, 4, &mut SplitMix64::new(47));

    let (o1, t1) = layer_forward(&b, &shared, &shared_cfg).unwrap();
    let (o2, t2) = layer_forward(&b, &split, &split_cfg).unwrap();
    assert_eq!(o1, o2);
    let g1 = layer_backward(&t1, &r).unwrap();
    let g2 = layer_backward(&t2, &r).unwrap();
    let mut sum = g2.params.first.clone();
    sum.accumulate(g2.params.second.as_ref().unwrap());
    assert!(g1.params.first.wq.max_rel_diff(&sum.wq).unwrap() < 1e-13);
    assert!(g1.params.first.wv.max_rel_diff(&sum.wv).unwrap() < 1e-13);
    for (a, b) in g1.params.first.bk.iter().zip(&sum.bk) {
        assert!((a - b).abs() < 1e-13);
    }
    assert!(g1.input.max_rel_diff(&g2.input).unwrap() < 1e-13);
}

#[test]
fn dropped_softmax_centering_is_detectable() {
    let c = cfg(4, 2, 2, 6, PoolingKind::Mean, 3, 2);
    let b = batch(10, 4, 48);
    let p = LayerParams::init(&c, 49);
    let r = random(10, 4, &mut SplitMix64::new(50));
    let (_, trace) = layer_forward(&b, &p, &c).unwrap();
    let good = layer_backward(&trace, &r).unwrap();
    let bad = layer_backward_with_fault(&trace, &r, Fault::DropSoftmaxCentering).unwrap();
    assert!(bad.params.first.wq.max_rel_diff(&good.params.first.wq).unwrap() > 1e-3);
}

// ---------------------------------------------------------------------------
// stacks
// ---------------------------------------------------------------------------

#[test]
fn stack_of_one_sliding_layer_is_first_level() {
    let c = cfg(4, 2, 2, 6, PoolingKind::Mean, 3, 2);
    let b = batch(12, 4, 51);
    let p = LayerParams::init(&c, 52);
    let out = stack_forward(&b, &[(c.clone(), p.clone())], &[LayerKind::SlidingOnly]).unwrap();
    assert_eq!(out, first_level_forward(&b, &p, &c).unwrap().0);
}

#[test]
fn schedule_changes_output() {
    let c = cfg(4, 2, 2, 6, PoolingKind::LDConv, 3, 2);
    let b = batch(12, 4, 53);
    let layers = vec![(c.clone(), LayerParams::init(&c, 54)), (c.clone(), LayerParams::init(&c, 55))];
    let a = stack_forward(&b, &layers, &[LayerKind::SlidingOnly, LayerKind::TwoLevel]).unwrap();
    let t = stack_forward(&b, &layers, &[LayerKind::TwoLevel, LayerKind::TwoLevel]).unwrap();
    assert!(a.max_rel_diff(&t).unwrap() > 1e-6);
    assert!(stack_forward(&b, &layers, &[LayerKind::TwoLevel]).is_err());
}

#[test]
fn placement_mirrors_three_of_twelve() {
    let s = placement_schedule(12, 5, 3);
    assert_eq!(s.iter().filter(|&&k| k == LayerKind::TwoLevel).count(), 3);
    assert_eq!(&s[5..8], &[LayerKind::TwoLevel; 3]);
    let c = cfg(4, 1, 1, 4, PoolingKind::Mean, 3, 2);
    let layers: Vec<_> = (0..12).map(|l| (c.clone(), LayerParams::init(&c, 60 + l))).collect();
    let out = stack_forward(&batch(9, 4, 56), &layers, &s).unwrap();
    assert!(out.is_finite());
}
