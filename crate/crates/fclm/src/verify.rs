//! Embedded self-check suite: oracle comparisons, finite-difference
//! gradient checks, and exact identity contracts across the whole crate.
//! The `selftest` subcommand runs everything here; the individual suites
//! are also exercised directly by the acceptance tests.

use crate::adversarial::{
    adversarial_loss, finite_diff_check, grl_apply, grl_forward, Activation, DomainBatch,
    GrlConfig, TinyNet,
};
use crate::compositor::{composite_alpha, make_pair, RgbImage};
use crate::depth_distill::{
    compute_depth_weights, compute_pixel_depth_weights, feature_distance,
    feature_distance_with_grads, kd_loss_depth_aware, kd_loss_depth_aware_with_grads, DepthMap,
    DepthWeightPair, FeatureGrid, MetaNet,
};
use crate::error::Result;
use crate::fg_align::{
    cost_matrix_cosine, ot_loss_with_grads, permutation_lp_optimum, EmpiricalDistribution,
    ForegroundTokenSet, SinkhornConfig,
};
use crate::metrics_dis::{
    e_measure, hce, max_f_measure, s_measure, weighted_f_measure, EMeasureMode,
};
use crate::metrics_matting::{
    connectivity_error, gaussian_derivative_kernels, grad_error, imq, mse_mad, reflect101, sad,
    ImqQuality, InstanceSet,
};
use crate::numerics::DenseMatrix;
use crate::pred_loss::{
    bce_loss, bce_loss_with_grad, iou_loss, iou_loss_with_grad, l1_matte_loss,
    l1_matte_loss_with_grad, laplacian_pyramid_loss, laplacian_pyramid_loss_with_grad, AlphaMatte,
    BinaryMask, GrayMap,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One named check: `value` must stay at or below `threshold`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckResult {
    fn bounded(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            threshold,
            pass: value.is_finite() && value <= threshold,
        }
    }
}

/// Criterion: entropic transport matches the brute-force LP optimum on
/// small instances, with feasible marginals on every returned plan.
pub fn sinkhorn_lp_suite(instances: usize) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51);
    let mut worst_gap = 0.0f64;
    let mut worst_marginal = 0.0f64;
    for case in 0..instances {
        let k = 2 + (case % 3);
        let gen = |rng: &mut ChaCha8Rng| -> Result<ForegroundTokenSet> {
            let data: Vec<f64> = (0..k * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
            ForegroundTokenSet::new(DenseMatrix::from_vec(k, 8, data)?, (0..k).collect())
        };
        let a = gen(&mut rng)?;
        let b = gen(&mut rng)?;
        let out = ot_loss_with_grads(&a, &b, 1e-3, 20000, 1e-4)?;
        let lp = permutation_lp_optimum(&cost_matrix_cosine(&a, &b)?)?;
        worst_gap = worst_gap.max((out.loss - lp).abs());
        let u = EmpiricalDistribution::uniform(k)?;
        let row: f64 = out
            .plan
            .row_marginals()
            .iter()
            .zip(u.weights())
            .map(|(m, w)| (m - w).abs())
            .sum();
        let col: f64 = out
            .plan
            .col_marginals()
            .iter()
            .zip(u.weights())
            .map(|(m, w)| (m - w).abs())
            .sum();
        worst_marginal = worst_marginal.max(row.max(col));
    }
    Ok(vec![
        CheckResult::bounded("sinkhorn_lp_gap", worst_gap, 5e-3),
        CheckResult::bounded("sinkhorn_marginal_residual", worst_marginal, 1e-6),
    ])
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

/// Criterion: every analytic gradient matches central finite differences.
/// With `corrupt` set, the L1 gradient is deliberately damaged so the
/// harness provably detects failures.
pub fn gradient_suite(instances: usize, corrupt: bool) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();

    // Pixel-loss pairs stay away from zero differences and the clamps so
    // the sign maps are stable under the step.
    let separated_pair = |seed: u64, w: usize, h: usize| -> Result<(AlphaMatte, AlphaMatte)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.3..0.7)).collect();
        let pred: Vec<f64> = gt
            .iter()
            .map(|g| {
                let sign = if rng.random_range(0.0..1.0) < 0.5 {
                    -1.0
                } else {
                    1.0
                };
                g + sign * rng.random_range(0.05..0.15)
            })
            .collect();
        Ok((AlphaMatte::new(w, h, pred)?, AlphaMatte::new(w, h, gt)?))
    };

    let mut worst = 0.0f64;
    for i in 0..instances {
        let (pred, gt) = separated_pair(0x1100 + i as u64, 6, 6)?;
        let (_, mut grad) = l1_matte_loss_with_grad(&pred, &gt)?;
        if corrupt {
            grad[0] += 1e-2;
        }
        let err = finite_diff_check(
            |p| l1_matte_loss(&AlphaMatte::new(6, 6, p.to_vec())?, &gt),
            pred.values(),
            &grad,
            FD_STEP,
        )?;
        worst = worst.max(err);
    }
    out.push(CheckResult::bounded("grad_l1", worst, FD_TOL));

    let mut worst = 0.0f64;
    for i in 0..instances {
        let (pred, gt) = separated_pair(0x1200 + i as u64, 8, 8)?;
        let (_, grad) = laplacian_pyramid_loss_with_grad(&pred, &gt, 3)?;
        let err = finite_diff_check(
            |p| laplacian_pyramid_loss(&AlphaMatte::new(8, 8, p.to_vec())?, &gt, 3),
            pred.values(),
            &grad,
            FD_STEP,
        )?;
        worst = worst.max(err);
    }
    out.push(CheckResult::bounded("grad_laplacian", worst, FD_TOL));

    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1300 + i as u64);
        let gt = BinaryMask::from_fn(6, 6, |_, _| rng.random_range(0.0..1.0) < 0.5)?;
        let pred = AlphaMatte::from_fn(6, 6, |_, _| rng.random_range(0.2..0.8))?;
        let (_, grad) = bce_loss_with_grad(&pred, &gt)?;
        let err = finite_diff_check(
            |p| bce_loss(&AlphaMatte::new(6, 6, p.to_vec())?, &gt),
            pred.values(),
            &grad,
            FD_STEP,
        )?;
        worst = worst.max(err);
    }
    out.push(CheckResult::bounded("grad_bce", worst, FD_TOL));

    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1400 + i as u64);
        let gt = BinaryMask::from_fn(6, 6, |_, _| rng.random_range(0.0..1.0) < 0.4)?;
        let pred = AlphaMatte::from_fn(6, 6, |_, _| rng.random_range(0.2..0.8))?;
        let (_, grad) = iou_loss_with_grad(&pred, &gt)?;
        let err = finite_diff_check(
            |p| iou_loss(&AlphaMatte::new(6, 6, p.to_vec())?, &gt),
            pred.values(),
            &grad,
            FD_STEP,
        )?;
        worst = worst.max(err);
    }
    out.push(CheckResult::bounded("grad_iou", worst, FD_TOL));

    let rand_grid = |rng: &mut ChaCha8Rng, gh: usize, gw: usize, d: usize| -> Result<FeatureGrid> {
        let data: Vec<f64> = (0..gh * gw * d)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        FeatureGrid::new(gh, gw, DenseMatrix::from_vec(gh * gw, d, data)?)
    };

    // Plain distillation distance, both sides.
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1500 + i as u64);
        let s = rand_grid(&mut rng, 1, 3, 4)?;
        let t = rand_grid(&mut rng, 1, 3, 4)?;
        let (_, gs, gt_grad) = feature_distance_with_grads(&s, &t, 1.0)?;
        let err_s = finite_diff_check(
            |toks| {
                let g = FeatureGrid::new(1, 3, DenseMatrix::from_vec(3, 4, toks.to_vec())?)?;
                feature_distance(&g, &t, 1.0)
            },
            s.tokens().data(),
            gs.data(),
            FD_STEP,
        )?;
        let err_t = finite_diff_check(
            |toks| {
                let g = FeatureGrid::new(1, 3, DenseMatrix::from_vec(3, 4, toks.to_vec())?)?;
                feature_distance(&s, &g, 1.0)
            },
            t.tokens().data(),
            gt_grad.data(),
            FD_STEP,
        )?;
        worst = worst.max(err_s.max(err_t));
    }
    out.push(CheckResult::bounded("grad_kd_plain", worst, FD_TOL));

    // Depth-aware distillation: meta-net parameters and student tokens.
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1600 + i as u64);
        let s = rand_grid(&mut rng, 1, 3, 4)?;
        let t = rand_grid(&mut rng, 1, 3, 5)?;
        let fg = MetaNet::seeded(5, 6, 4, 0x1601 + i as u64)?;
        let bg = MetaNet::seeded(5, 6, 4, 0x1602 + i as u64)?;
        let w = DepthWeightPair {
            grid_h: 1,
            grid_w: 3,
            d_plus: vec![rng.random_range(0.1..1.0), 0.0, rng.random_range(0.1..1.0)],
            d_minus: vec![0.0, rng.random_range(0.1..1.0), 0.0],
            delta: 0.25,
        };
        let got = kd_loss_depth_aware_with_grads(&s, &t, &w, &fg, &bg, 1.0)?;
        let err_fg = finite_diff_check(
            |p| {
                let mut net = fg.clone();
                net.set_params_flat(p)?;
                kd_loss_depth_aware(&s, &t, &w, &net, &bg, 1.0)
            },
            &fg.params_flat(),
            &got.fg_net_grads.to_flat(),
            FD_STEP,
        )?;
        let err_bg = finite_diff_check(
            |p| {
                let mut net = bg.clone();
                net.set_params_flat(p)?;
                kd_loss_depth_aware(&s, &t, &w, &fg, &net, 1.0)
            },
            &bg.params_flat(),
            &got.bg_net_grads.to_flat(),
            FD_STEP,
        )?;
        let err_s = finite_diff_check(
            |toks| {
                let g = FeatureGrid::new(1, 3, DenseMatrix::from_vec(3, 4, toks.to_vec())?)?;
                kd_loss_depth_aware(&g, &t, &w, &fg, &bg, 1.0)
            },
            s.tokens().data(),
            got.student_grads.data(),
            FD_STEP,
        )?;
        worst = worst.max(err_fg.max(err_bg).max(err_s));
    }
    out.push(CheckResult::bounded("grad_kd_depth_aware", worst, FD_TOL));

    // Adversarial loss: discriminator parameters and input features.
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1700 + i as u64);
        let h = TinyNet::seeded(
            &[3, 8, 1],
            &[Activation::Rectifier, Activation::Sigmoid],
            0x1701 + i as u64,
            0.4,
        )?;
        let batch = DomainBatch {
            features_a: vec![rand_grid(&mut rng, 2, 1, 3)?],
            features_b: vec![rand_grid(&mut rng, 2, 1, 3)?],
        };
        let cfg = GrlConfig::new(1.0)?;
        let got = adversarial_loss(&h, &batch, &cfg)?;
        let err_disc = finite_diff_check(
            |p| {
                let mut net = h.clone();
                net.set_params_flat(p)?;
                Ok(adversarial_loss(&net, &batch, &cfg)?.loss)
            },
            &h.params_flat(),
            &got.disc_grads.to_flat(),
            FD_STEP,
        )?;
        let analytic_feat: Vec<f64> = got.feature_grads_a[0]
            .data()
            .iter()
            .map(|g| g / -cfg.lambda)
            .collect();
        let base = batch.features_a[0].tokens().data().to_vec();
        let err_feat = finite_diff_check(
            |toks| {
                let grid = FeatureGrid::new(2, 1, DenseMatrix::from_vec(2, 3, toks.to_vec())?)?;
                let mut b = batch.clone();
                b.features_a[0] = grid;
                Ok(adversarial_loss(&h, &b, &cfg)?.loss)
            },
            &base,
            &analytic_feat,
            FD_STEP,
        )?;
        worst = worst.max(err_disc.max(err_feat));
    }
    out.push(CheckResult::bounded("grad_adversarial", worst, FD_TOL));

    // Transport loss under the envelope convention: the converged plan is
    // frozen and the finite differences probe the cosine-cost chain rule.
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1800 + i as u64);
        let k = 3;
        let gen = |rng: &mut ChaCha8Rng| -> Result<ForegroundTokenSet> {
            let data: Vec<f64> = (0..k * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
            ForegroundTokenSet::new(DenseMatrix::from_vec(k, 4, data)?, (0..k).collect())
        };
        let a = gen(&mut rng)?;
        let b = gen(&mut rng)?;
        let got = ot_loss_with_grads(&a, &b, 0.05, 5000, 1e-4)?;
        let frozen = got.plan.pi.clone();
        let loss_of = |ta: &[f64], tb: &[f64]| -> Result<f64> {
            let sa = ForegroundTokenSet::new(
                DenseMatrix::from_vec(k, 4, ta.to_vec())?,
                (0..k).collect(),
            )?;
            let sb = ForegroundTokenSet::new(
                DenseMatrix::from_vec(k, 4, tb.to_vec())?,
                (0..k).collect(),
            )?;
            frozen.frobenius_inner(&cost_matrix_cosine(&sa, &sb)?)
        };
        let base_b = b.tokens().data().to_vec();
        let err_a = finite_diff_check(
            |ta| loss_of(ta, &base_b),
            a.tokens().data(),
            got.grad_a.data(),
            FD_STEP,
        )?;
        let base_a = a.tokens().data().to_vec();
        let err_b = finite_diff_check(
            |tb| loss_of(&base_a, tb),
            b.tokens().data(),
            got.grad_b.data(),
            FD_STEP,
        )?;
        worst = worst.max(err_a.max(err_b));
    }
    out.push(CheckResult::bounded("grad_ot_envelope", worst, FD_TOL));

    Ok(out)
}

/// Criterion: the threshold split partitions every pixel and reproduces the
/// hand-derived 2×2 case exactly.
pub fn depth_weight_suite() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x2000);
    let mut partition_violation = 0.0f64;
    let mut equivalence_violation = 0.0f64;
    for _ in 0..50 {
        let delta = rng.random_range(0.05..0.95);
        let values: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let depth = DepthMap::new(8, 8, values.clone())?;
        let w = compute_pixel_depth_weights(&depth, delta)?;
        for i in 0..64 {
            partition_violation = partition_violation.max((w.d_plus[i] * w.d_minus[i]).abs());
            let expect_fg = values[i] > delta;
            if expect_fg != (w.d_plus[i] > 0.0) {
                equivalence_violation = 1.0;
            }
        }
    }
    let depth = DepthMap::new(2, 2, vec![0.8, 0.2, 0.25, 1.0])?;
    let w = compute_depth_weights(&depth, 0.25, (2, 2), false)?;
    let hand_plus = [0.8, 0.0, 0.0, 1.0];
    let hand_minus = [0.0, 0.2, 0.0, 0.0];
    let mut hand_err = 0.0f64;
    for i in 0..4 {
        hand_err = hand_err.max((w.d_plus[i] - hand_plus[i]).abs());
        hand_err = hand_err.max((w.d_minus[i] - hand_minus[i]).abs());
    }
    Ok(vec![
        CheckResult::bounded("depth_partition_product", partition_violation, 0.0),
        CheckResult::bounded("depth_threshold_equivalence", equivalence_violation, 0.0),
        CheckResult::bounded("depth_hand_case", hand_err, 1e-12),
    ])
}

/// Criterion: GRL forward identity is bit-exact and the backward pass is
/// exactly `−λ·g` with exact scaling linearity.
pub fn grl_suite() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3000);
    let g: Vec<f64> = (0..16).map(|_| rng.random_range(-5.0..5.0)).collect();
    let forward_ok = grl_forward(&g)
        .iter()
        .zip(&g)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let mut backward_err = 0.0f64;
    for lambda in [0.0, 0.5, 1.0, 2.0] {
        let cfg = GrlConfig::new(lambda)?;
        for (out, gi) in grl_apply(&g, &cfg).iter().zip(&g) {
            backward_err = backward_err.max((out - (-lambda * gi)).abs());
        }
    }
    let c1 = GrlConfig::new(1.0)?;
    let c3 = GrlConfig::new(3.0)?;
    let linear_exact = grl_apply(&g, &c3)
        .iter()
        .zip(grl_apply(&g, &c1))
        .all(|(a, b)| *a == 3.0 * b);
    Ok(vec![
        CheckResult::bounded(
            "grl_forward_identity",
            if forward_ok { 0.0 } else { 1.0 },
            0.0,
        ),
        CheckResult::bounded("grl_backward_exact", backward_err, 0.0),
        CheckResult::bounded(
            "grl_scaling_linear",
            if linear_exact { 0.0 } else { 1.0 },
            0.0,
        ),
    ])
}

/// Criterion: identical prediction and ground truth hit the exact metric
/// identities.
pub fn metric_identity_suite() -> Result<Vec<CheckResult>> {
    let shapes: Vec<BinaryMask> = vec![
        BinaryMask::from_fn(16, 16, |x, y| (4..12).contains(&x) && (4..12).contains(&y))?,
        BinaryMask::from_fn(16, 16, |x, y| {
            let dx = x as f64 - 8.0;
            let dy = y as f64 - 8.0;
            (dx * dx + dy * dy).sqrt() < 5.0
        })?,
        BinaryMask::from_fn(16, 16, |x, y| x / 4 % 2 == 0 && y > 3 && y < 13)?,
    ];
    let mut worst_matting = 0.0f64;
    let mut worst_imq = 0.0f64;
    let mut worst_dis = 0.0f64;
    let mut worst_hce = 0.0f64;
    for gt in &shapes {
        let alpha = AlphaMatte::new(16, 16, gt.values().to_vec())?;
        let (s, _) = sad(&alpha, &alpha)?;
        let (m, a) = mse_mad(&alpha, &alpha)?;
        let (g, _) = grad_error(&alpha, &alpha)?;
        let (c, _) = connectivity_error(&alpha, &alpha, 0.1)?;
        worst_matting = worst_matting.max(s).max(m).max(a).max(g).max(c);

        let set = InstanceSet::new(vec![alpha.clone()])?;
        for q in [
            ImqQuality::Mse,
            ImqQuality::Mad,
            ImqQuality::Grad,
            ImqQuality::Conn,
        ] {
            worst_imq = worst_imq.max((imq(&set, &set, q)? - 100.0).abs());
        }

        worst_dis = worst_dis
            .max((max_f_measure(&alpha, gt, 0.3)? - 1.0).abs())
            .max((weighted_f_measure(&alpha, gt)? - 1.0).abs())
            .max(crate::metrics_dis::mae(&alpha, gt)?)
            .max((s_measure(&alpha, gt, 0.5)? - 1.0).abs())
            .max((e_measure(&alpha, gt, EMeasureMode::Mean)? - 1.0).abs());
        worst_hce = worst_hce.max(hce(&alpha, gt, 5)? as f64);
    }
    Ok(vec![
        CheckResult::bounded("identity_matting_metrics", worst_matting, 0.0),
        CheckResult::bounded("identity_imq", worst_imq, 1e-9),
        CheckResult::bounded("identity_dis_metrics", worst_dis, 1e-6),
        CheckResult::bounded("identity_hce", worst_hce, 0.0),
    ])
}

/// Independent oracle for the gradient metric: dense 2D convolution with
/// the outer-product kernels.
fn oracle_gradient_error(pred: &AlphaMatte, gt: &AlphaMatte, sigma: f64) -> f64 {
    let (w, h) = (pred.width(), pred.height());
    let (g, dg, radius) = gaussian_derivative_kernels(sigma);
    let k = 2 * radius + 1;
    let conv2d = |vals: &[f64], kern_x: &[f64], kern_y: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; vals.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = reflect101(y as isize + ky as isize - radius as isize, h);
                        let sx = reflect101(x as isize + kx as isize - radius as isize, w);
                        acc += kern_y[ky] * kern_x[kx] * vals[sy * w + sx];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let magnitude = |vals: &[f64]| -> Vec<f64> {
        let gx = conv2d(vals, &dg, &g);
        let gy = conv2d(vals, &g, &dg);
        gx.iter()
            .zip(&gy)
            .map(|(a, b)| (a * a + b * b).sqrt())
            .collect()
    };
    let mp = magnitude(pred.values());
    let mg = magnitude(gt.values());
    mp.iter()
        .zip(&mg)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// Independent oracle for the connectivity metric: recursive flood fill
/// instead of the labeling pass.
fn oracle_connectivity(pred: &AlphaMatte, gt: &AlphaMatte, step: f64) -> f64 {
    let (w, h) = (pred.width(), pred.height());
    fn flood(mask: &[bool], seen: &mut [bool], i: usize, w: usize, h: usize, out: &mut Vec<usize>) {
        if seen[i] || !mask[i] {
            return;
        }
        seen[i] = true;
        out.push(i);
        let (x, y) = (i % w, i / w);
        if x > 0 {
            flood(mask, seen, i - 1, w, h, out);
        }
        if x + 1 < w {
            flood(mask, seen, i + 1, w, h, out);
        }
        if y > 0 {
            flood(mask, seen, i - w, w, h, out);
        }
        if y + 1 < h {
            flood(mask, seen, i + w, w, h, out);
        }
    }
    let n = w * h;
    let mut l_map = vec![-1.0f64; n];
    let steps = (1.0 / step).floor() as usize;
    for k in 1..=steps {
        let theta = k as f64 * step;
        let joint: Vec<bool> = (0..n)
            .map(|i| pred.values()[i] >= theta && gt.values()[i] >= theta)
            .collect();
        let mut seen = vec![false; n];
        let mut best: Vec<usize> = Vec::new();
        for i in 0..n {
            if joint[i] && !seen[i] {
                let mut comp = Vec::new();
                flood(&joint, &mut seen, i, w, h, &mut comp);
                if comp.len() > best.len() {
                    best = comp;
                }
            }
        }
        let mut omega = vec![false; n];
        for i in best {
            omega[i] = true;
        }
        for i in 0..n {
            if l_map[i] == -1.0 && !omega[i] {
                l_map[i] = (k - 1) as f64 * step;
            }
        }
    }
    (0..n)
        .map(|i| {
            let l = if l_map[i] == -1.0 { 1.0 } else { l_map[i] };
            let dp = pred.values()[i] - l;
            let dg = gt.values()[i] - l;
            let phi_p = if dp >= 0.15 { dp } else { 0.0 };
            let phi_g = if dg >= 0.15 { dg } else { 0.0 };
            (phi_p - phi_g).abs()
        })
        .sum()
}

/// Criterion: metric implementations agree with their independent oracles
/// and the four-pixel maximum-F hand case reproduces.
pub fn metric_oracle_suite() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4000);
    let mut grad_gap = 0.0f64;
    for _ in 0..50 {
        let pred = AlphaMatte::from_fn(16, 16, |_, _| rng.random_range(0.0..1.0))?;
        let gt = AlphaMatte::from_fn(16, 16, |_, _| rng.random_range(0.0..1.0))?;
        let (raw, _) = grad_error(&pred, &gt)?;
        grad_gap = grad_gap.max((raw - oracle_gradient_error(&pred, &gt, 1.4)).abs());
    }

    let mut conn_gap = 0.0f64;
    for case in 0..20 {
        // Constructed 8×8 cases: solid shapes with strays for even cases,
        // graded random fields for odd ones.
        let (pred, gt) = if case % 2 == 0 {
            let gt = AlphaMatte::from_fn(8, 8, |x, y| {
                if (2..6).contains(&x) && (2..6).contains(&y) {
                    1.0
                } else {
                    0.0
                }
            })?;
            let stray = (case / 2) % 7;
            let pred = AlphaMatte::from_fn(8, 8, |x, y| {
                if (x, y) == (7, stray) {
                    1.0
                } else {
                    gt.get(x, y)
                }
            })?;
            (pred, gt)
        } else {
            let pred = AlphaMatte::from_fn(8, 8, |_, _| rng.random_range(0.0..1.0))?;
            let gt = AlphaMatte::from_fn(8, 8, |_, _| rng.random_range(0.0..1.0))?;
            (pred, gt)
        };
        let (raw, _) = connectivity_error(&pred, &gt, 0.1)?;
        conn_gap = conn_gap.max((raw - oracle_connectivity(&pred, &gt, 0.1)).abs());
    }

    let gt = BinaryMask::new(4, 1, vec![1.0, 0.0, 0.0, 0.0])?;
    let pred = AlphaMatte::new(4, 1, vec![0.0, 1.0, 1.0, 1.0])?;
    let max_f_gap = (max_f_measure(&pred, &gt, 0.3)? - 0.3023).abs();

    Ok(vec![
        CheckResult::bounded("oracle_grad_error", grad_gap, 1e-9),
        CheckResult::bounded("oracle_connectivity", conn_gap, 1e-12),
        CheckResult::bounded("oracle_max_f_hand_case", max_f_gap, 1e-4),
    ])
}

/// Criterion: compositing algebra — opaque pixels identical across a pair,
/// the half-alpha blend is exact, and the pair difference identity holds
/// within rounding.
pub fn compositor_suite() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5000);
    let size = 24usize;
    let fg = RgbImage::from_fn(size, size, |_, _| {
        [rng.random(), rng.random(), rng.random()]
    })?;
    let alpha = AlphaMatte::from_fn(size, size, |x, y| {
        if x < 8 {
            1.0
        } else if x < 16 {
            rng.random_range(0.0..1.0)
        } else {
            ((x + y) % 5) as f64 / 4.0
        }
    })?;
    let mut pool = Vec::new();
    for _ in 0..3 {
        pool.push(RgbImage::from_fn(size, size, |_, _| {
            [rng.random(), rng.random(), rng.random()]
        })?);
    }
    let pair = make_pair(&fg, &alpha, &pool, 0x77)?;

    let mut opaque_gap = 0.0f64;
    for y in 0..size {
        for x in 0..size {
            if alpha.get(x, y) == 1.0 {
                for c in 0..3 {
                    let d = (pair.image_a.pixel(x, y)[c] as f64
                        - pair.image_b.pixel(x, y)[c] as f64)
                        .abs();
                    opaque_gap = opaque_gap.max(d);
                }
            }
        }
    }

    let f = RgbImage::from_fn(1, 1, |_, _| [200, 200, 200])?;
    let b = RgbImage::from_fn(1, 1, |_, _| [100, 100, 100])?;
    let half = AlphaMatte::constant(1, 1, 0.5)?;
    let blend = composite_alpha(&f, &half, &b)?;
    let half_gap = blend
        .pixel(0, 0)
        .iter()
        .map(|&v| (v as f64 - 150.0).abs())
        .fold(0.0, f64::max);

    let bg_a = pool[pair.background_a_id].center_crop(size, size)?;
    let bg_b = pool[pair.background_b_id].center_crop(size, size)?;
    let mut diff_gap = 0.0f64;
    for y in 0..size {
        for x in 0..size {
            let av = alpha.get(x, y);
            for c in 0..3 {
                let got = pair.image_a.pixel(x, y)[c] as f64 - pair.image_b.pixel(x, y)[c] as f64;
                let want = (1.0 - av) * (bg_a.pixel(x, y)[c] as f64 - bg_b.pixel(x, y)[c] as f64);
                diff_gap = diff_gap.max((got - want).abs());
            }
        }
    }

    Ok(vec![
        CheckResult::bounded("compositor_opaque_identity", opaque_gap, 0.0),
        CheckResult::bounded("compositor_half_blend", half_gap, 0.0),
        CheckResult::bounded("compositor_difference_identity", diff_gap, 1.0),
    ])
}

/// Runs every suite in order; `corrupt_gradient` deliberately breaks one
/// analytic gradient so failure detection itself is testable.
pub fn run_all(corrupt_gradient: bool) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    out.extend(sinkhorn_lp_suite(200)?);
    out.extend(gradient_suite(20, corrupt_gradient)?);
    out.extend(depth_weight_suite()?);
    out.extend(grl_suite()?);
    out.extend(metric_identity_suite()?);
    out.extend(metric_oracle_suite()?);
    out.extend(compositor_suite()?);
    Ok(out)
}

/// Default Sinkhorn configuration used by the `sinkhorn` CLI subcommand.
pub fn default_sinkhorn() -> SinkhornConfig {
    SinkhornConfig::default()
}
