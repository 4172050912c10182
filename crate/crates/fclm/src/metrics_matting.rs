//! Matting evaluation metrics: SAD, MSE, MAD, gradient distortion,
//! connectivity loss, and the instance-level IMQ score.

use crate::error::{Error, Result};
use crate::pred_loss::{AlphaMatte, GrayMap};
use serde::{Deserialize, Serialize};

/// Gaussian sigma of the derivative filters behind [`grad_error`].
pub const GRAD_SIGMA: f64 = 1.4;

/// Threshold step of the connectivity sweep.
pub const CONN_STEP: f64 = 0.1;

/// Minimum alpha drop that counts as connectivity degradation.
const CONN_PHI_THRESHOLD: f64 = 0.15;

/// Per-image matting report. `sad`, `grad`, and `conn` carry the
/// conventional 10³ scaling; the raw sums are available from the individual
/// operations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatteReport {
    pub sad: f64,
    pub mse: f64,
    pub mad: f64,
    pub grad: f64,
    pub conn: f64,
    pub pixel_count: usize,
}

impl MatteReport {
    pub fn compute(pred: &AlphaMatte, gt: &AlphaMatte) -> Result<Self> {
        let (_, sad_scaled) = sad(pred, gt)?;
        let (mse, mad) = mse_mad(pred, gt)?;
        let (_, grad_scaled) = grad_error(pred, gt)?;
        let (_, conn_scaled) = connectivity_error(pred, gt, CONN_STEP)?;
        Ok(Self {
            sad: sad_scaled,
            mse,
            mad,
            grad: grad_scaled,
            conn: conn_scaled,
            pixel_count: pred.values().len(),
        })
    }
}

/// Instance mattes sharing one canvas.
#[derive(Debug, Clone)]
pub struct InstanceSet {
    instances: Vec<AlphaMatte>,
}

impl InstanceSet {
    pub fn new(instances: Vec<AlphaMatte>) -> Result<Self> {
        if let Some(first) = instances.first() {
            let (w, h) = (first.width(), first.height());
            if instances.iter().any(|m| m.width() != w || m.height() != h) {
                return Err(Error::InvalidArgument(
                    "instance mattes must share canvas dimensions".into(),
                ));
            }
        }
        Ok(Self { instances })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[AlphaMatte] {
        &self.instances
    }
}

fn check_dims(pred: &AlphaMatte, gt: &AlphaMatte) -> Result<()> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::ShapeMismatch {
            left: format!("{}x{}", pred.width(), pred.height()),
            right: format!("{}x{}", gt.width(), gt.height()),
        });
    }
    Ok(())
}

/// Sum of absolute differences; returns `(raw, raw/1000)`.
pub fn sad(pred: &AlphaMatte, gt: &AlphaMatte) -> Result<(f64, f64)> {
    check_dims(pred, gt)?;
    let raw: f64 = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(p, g)| (p - g).abs())
        .sum();
    Ok((raw, raw / 1000.0))
}

/// Mean squared and mean absolute difference.
pub fn mse_mad(pred: &AlphaMatte, gt: &AlphaMatte) -> Result<(f64, f64)> {
    check_dims(pred, gt)?;
    let n = pred.values().len() as f64;
    let mut sq = 0.0;
    let mut ab = 0.0;
    for (p, g) in pred.values().iter().zip(gt.values()) {
        let d = p - g;
        sq += d * d;
        ab += d.abs();
    }
    Ok((sq / n, ab / n))
}

/// 1D Gaussian (sum-normalized) and its first derivative, truncated at 3σ.
pub(crate) fn gaussian_derivative_kernels(sigma: f64) -> (Vec<f64>, Vec<f64>, usize) {
    let radius = (3.0 * sigma).floor() as usize;
    let mut g: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    for v in &mut g {
        *v /= total;
    }
    let dg: Vec<f64> = g
        .iter()
        .enumerate()
        .map(|(i, &gv)| {
            let x = i as isize - radius as isize;
            -(x as f64) / (sigma * sigma) * gv
        })
        .collect();
    (g, dg, radius)
}

pub(crate) fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let mut i = i;
    let n = n as isize;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        } else {
            i = 2 * n - 2 - i;
        }
    }
    i as usize
}

fn convolve_axis(
    vals: &[f64],
    w: usize,
    h: usize,
    kernel: &[f64],
    radius: usize,
    along_x: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; vals.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let off = ki as isize - radius as isize;
                let (sx, sy) = if along_x {
                    (reflect101(x as isize + off, w), y)
                } else {
                    (x, reflect101(y as isize + off, h))
                };
                acc += kv * vals[sy * w + sx];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Per-pixel gradient magnitude from separable first-order Gaussian
/// derivative filters.
pub(crate) fn gradient_magnitude(vals: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let (g, dg, radius) = gaussian_derivative_kernels(sigma);
    let gx = convolve_axis(
        &convolve_axis(vals, w, h, &dg, radius, true),
        w,
        h,
        &g,
        radius,
        false,
    );
    let gy = convolve_axis(
        &convolve_axis(vals, w, h, &g, radius, true),
        w,
        h,
        &dg,
        radius,
        false,
    );
    gx.iter()
        .zip(&gy)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .collect()
}

/// Gradient distortion `Σ (‖∇pred‖ − ‖∇gt‖)²` with σ = [`GRAD_SIGMA`];
/// returns `(raw, raw/1000)`.
pub fn grad_error(pred: &AlphaMatte, gt: &AlphaMatte) -> Result<(f64, f64)> {
    grad_error_with_sigma(pred, gt, GRAD_SIGMA)
}

pub fn grad_error_with_sigma(pred: &AlphaMatte, gt: &AlphaMatte, sigma: f64) -> Result<(f64, f64)> {
    check_dims(pred, gt)?;
    if pred.width() < 3 || pred.height() < 3 {
        return Err(Error::InvalidArgument(
            "gradient distortion needs at least a 3x3 image".into(),
        ));
    }
    let (w, h) = (pred.width(), pred.height());
    let gp = gradient_magnitude(pred.values(), w, h, sigma);
    let gg = gradient_magnitude(gt.values(), w, h, sigma);
    let raw: f64 = gp
        .iter()
        .zip(&gg)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum();
    Ok((raw, raw / 1000.0))
}

/// Labels 4-connected components of `mask`; label 0 is background. Returns
/// the label raster and per-label sizes (`sizes[0]` is unused).
pub(crate) fn label_components(mask: &[bool], w: usize, h: usize) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; mask.len()];
    let mut sizes = vec![0usize];
    let mut next = 1u32;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let mut size = 0usize;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |nx: usize, ny: usize| {
                let ni = ny * w + nx;
                if mask[ni] && labels[ni] == 0 {
                    labels[ni] = next;
                    stack.push(ni);
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < w {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < h {
                visit(x, y + 1);
            }
        }
        sizes.push(size);
        next += 1;
    }
    (labels, sizes)
}

/// Largest 4-connected component as a boolean raster; ties resolve to the
/// component discovered first in row-major order. Empty input stays empty.
pub(crate) fn largest_component(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let (labels, sizes) = label_components(mask, w, h);
    let mut best = 0u32;
    let mut best_size = 0usize;
    for (lbl, &size) in sizes.iter().enumerate().skip(1) {
        if size > best_size {
            best_size = size;
            best = lbl as u32;
        }
    }
    labels.iter().map(|&l| best != 0 && l == best).collect()
}

/// Connectivity loss: sweeps thresholds `θ ∈ {step, 2·step, …}`, tracks for
/// each pixel the last threshold at which it stayed inside the largest
/// jointly-connected region, and sums the per-pixel degradation
/// `|φ(pred) − φ(gt)|` where drops below [`CONN_PHI_THRESHOLD`] are ignored.
/// Returns `(raw, raw/1000)`.
pub fn connectivity_error(pred: &AlphaMatte, gt: &AlphaMatte, step: f64) -> Result<(f64, f64)> {
    check_dims(pred, gt)?;
    if step <= 0.0 || step >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "connectivity step must lie in (0, 1), got {step}"
        )));
    }
    let (w, h) = (pred.width(), pred.height());
    let n = w * h;
    let mut l_map = vec![-1.0f64; n];
    let steps = (1.0 / step).floor() as usize;
    for k in 1..=steps {
        let theta = k as f64 * step;
        let joint: Vec<bool> = pred
            .values()
            .iter()
            .zip(gt.values())
            .map(|(&p, &g)| p >= theta && g >= theta)
            .collect();
        let omega = largest_component(&joint, w, h);
        let prev = (k - 1) as f64 * step;
        for i in 0..n {
            if l_map[i] == -1.0 && !omega[i] {
                l_map[i] = prev;
            }
        }
    }
    let mut raw = 0.0;
    for i in 0..n {
        let l = if l_map[i] == -1.0 { 1.0 } else { l_map[i] };
        let dp = pred.values()[i] - l;
        let dg = gt.values()[i] - l;
        let phi_p = if dp >= CONN_PHI_THRESHOLD { dp } else { 0.0 };
        let phi_g = if dg >= CONN_PHI_THRESHOLD { dg } else { 0.0 };
        raw += (phi_p - phi_g).abs();
    }
    Ok((raw, raw / 1000.0))
}

/// Quality measure plugged into the IMQ score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImqQuality {
    Mse,
    Mad,
    Grad,
    Conn,
}

/// Instance Matting Quality: greedy one-to-one matching by descending
/// binarized IoU; matched pairs score `1/(1 + error)`, misses and spurious
/// predictions score 0, and the total is normalized by
/// `num_gt + num_unmatched_pred` (×100).
pub fn imq(
    pred_instances: &InstanceSet,
    gt_instances: &InstanceSet,
    quality: ImqQuality,
) -> Result<f64> {
    if gt_instances.is_empty() {
        return Err(Error::InvalidArgument(
            "IMQ needs at least one ground-truth instance".into(),
        ));
    }
    let n_pred = pred_instances.len();
    let n_gt = gt_instances.len();
    if n_pred == 0 {
        return Ok(0.0);
    }

    let binarize = |m: &AlphaMatte| -> Vec<bool> { m.values().iter().map(|&v| v >= 0.5).collect() };
    let preds_bin: Vec<Vec<bool>> = pred_instances.instances().iter().map(binarize).collect();
    let gts_bin: Vec<Vec<bool>> = gt_instances.instances().iter().map(binarize).collect();

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, pb) in preds_bin.iter().enumerate() {
        for (gi, gb) in gts_bin.iter().enumerate() {
            check_dims(
                &pred_instances.instances()[pi],
                &gt_instances.instances()[gi],
            )?;
            let mut inter = 0usize;
            let mut union = 0usize;
            for (a, b) in pb.iter().zip(gb) {
                inter += (a & b) as usize;
                union += (a | b) as usize;
            }
            let iou = if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            };
            if iou > 0.0 {
                candidates.push((iou, pi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut pred_used = vec![false; n_pred];
    let mut gt_used = vec![false; n_gt];
    let mut score_sum = 0.0;
    let mut matched = 0usize;
    for (_, pi, gi) in candidates {
        if pred_used[pi] || gt_used[gi] {
            continue;
        }
        pred_used[pi] = true;
        gt_used[gi] = true;
        matched += 1;
        let p = &pred_instances.instances()[pi];
        let g = &gt_instances.instances()[gi];
        let err = match quality {
            ImqQuality::Mse => mse_mad(p, g)?.0,
            ImqQuality::Mad => mse_mad(p, g)?.1,
            ImqQuality::Grad => grad_error(p, g)?.1,
            ImqQuality::Conn => connectivity_error(p, g, CONN_STEP)?.1,
        };
        score_sum += 1.0 / (1.0 + err);
    }
    let unmatched_pred = n_pred - matched;
    Ok(100.0 * score_sum / (n_gt + unmatched_pred) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn sad_cases() {
        let a = AlphaMatte::constant(10, 100, 0.5).unwrap();
        assert_eq!(sad(&a, &a).unwrap().0, 0.0);
        let one = AlphaMatte::constant(10, 100, 1.0).unwrap();
        let zero = AlphaMatte::constant(10, 100, 0.0).unwrap();
        let (raw, scaled) = sad(&one, &zero).unwrap();
        assert_eq!(raw, 1000.0);
        assert_eq!(scaled, 1.0);
        let p = AlphaMatte::new(4, 1, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let g = AlphaMatte::new(4, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(sad(&p, &g).unwrap().0, 1.0);
    }

    #[test]
    fn mse_mad_cases() {
        let p = AlphaMatte::new(4, 1, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let g = AlphaMatte::new(4, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(mse_mad(&p, &g).unwrap(), (0.25, 0.25));
        assert_eq!(mse_mad(&g, &g).unwrap(), (0.0, 0.0));
        let half = AlphaMatte::constant(4, 4, 0.5).unwrap();
        let zero = AlphaMatte::constant(4, 4, 0.0).unwrap();
        assert_eq!(mse_mad(&half, &zero).unwrap(), (0.25, 0.5));
    }

    #[test]
    fn metric_symmetry() {
        let p = AlphaMatte::from_fn(8, 8, |x, y| ((x * 3 + y) % 7) as f64 / 6.0).unwrap();
        let g = AlphaMatte::from_fn(8, 8, |x, y| ((x + 2 * y) % 5) as f64 / 4.0).unwrap();
        assert_eq!(sad(&p, &g).unwrap().0, sad(&g, &p).unwrap().0);
        assert_eq!(mse_mad(&p, &g).unwrap(), mse_mad(&g, &p).unwrap());
        assert_close(
            grad_error(&p, &g).unwrap().0,
            grad_error(&g, &p).unwrap().0,
            1e-12,
        );
        assert_close(
            connectivity_error(&p, &g, 0.1).unwrap().0,
            connectivity_error(&g, &p, 0.1).unwrap().0,
            1e-12,
        );
    }

    #[test]
    fn monotone_in_uniform_perturbation() {
        let gt = AlphaMatte::from_fn(8, 8, |x, y| if x * y > 12 { 0.8 } else { 0.1 }).unwrap();
        let mut prev = (0.0, 0.0, 0.0);
        for mag in [0.05, 0.1, 0.15] {
            let pred = AlphaMatte::from_fn(8, 8, |x, y| gt.get(x, y) + mag).unwrap();
            let s = sad(&pred, &gt).unwrap().0;
            let (m, a) = mse_mad(&pred, &gt).unwrap();
            assert!(s > prev.0 && m > prev.1 && a > prev.2);
            prev = (s, m, a);
        }
    }

    #[test]
    fn grad_identical_and_constant_are_zero() {
        let a = AlphaMatte::from_fn(8, 8, |x, _| x as f64 / 7.0).unwrap();
        assert_eq!(grad_error(&a, &a).unwrap().0, 0.0);
        let c1 = AlphaMatte::constant(8, 8, 0.3).unwrap();
        let c2 = AlphaMatte::constant(8, 8, 0.9).unwrap();
        assert_close(grad_error(&c1, &c2).unwrap().0, 0.0, 1e-20);
    }

    #[test]
    fn grad_rejects_tiny_images() {
        let a = AlphaMatte::constant(2, 2, 0.5).unwrap();
        assert!(grad_error(&a, &a).is_err());
    }

    /// Independent oracle: dense 2D convolution with the outer-product
    /// kernels, no separability.
    fn oracle_gradient_magnitude(vals: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
        let (g, dg, radius) = gaussian_derivative_kernels(sigma);
        let k = 2 * radius + 1;
        let conv2d = |kern_x: &[f64], kern_y: &[f64]| -> Vec<f64> {
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
        let gx = conv2d(&dg, &g);
        let gy = conv2d(&g, &dg);
        gx.iter()
            .zip(&gy)
            .map(|(a, b)| (a * a + b * b).sqrt())
            .collect()
    }

    fn oracle_grad_error(pred: &AlphaMatte, gt: &AlphaMatte) -> f64 {
        let (w, h) = (pred.width(), pred.height());
        let gp = oracle_gradient_magnitude(pred.values(), w, h, GRAD_SIGMA);
        let gg = oracle_gradient_magnitude(gt.values(), w, h, GRAD_SIGMA);
        gp.iter()
            .zip(&gg)
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum()
    }

    #[test]
    fn grad_step_edge_vs_blurred_edge_matches_oracle() {
        let step_edge = AlphaMatte::from_fn(16, 16, |x, _| if x < 8 { 0.0 } else { 1.0 }).unwrap();
        let blurred =
            AlphaMatte::from_fn(16, 16, |x, _| 1.0 / (1.0 + (-((x as f64) - 7.5)).exp())).unwrap();
        let (raw, _) = grad_error(&step_edge, &blurred).unwrap();
        assert!(raw > 0.0);
        assert_close(raw, oracle_grad_error(&step_edge, &blurred), 1e-9);
    }

    #[test]
    fn grad_matches_oracle_on_random_images() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let p = AlphaMatte::from_fn(16, 16, |_, _| rng.random_range(0.0..1.0)).unwrap();
            let g = AlphaMatte::from_fn(16, 16, |_, _| rng.random_range(0.0..1.0)).unwrap();
            let (raw, _) = grad_error(&p, &g).unwrap();
            assert_close(raw, oracle_grad_error(&p, &g), 1e-9);
        }
    }

    #[test]
    fn connectivity_identical_and_empty_are_zero() {
        let a = AlphaMatte::from_fn(8, 8, |x, y| if x > 2 && y > 2 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(connectivity_error(&a, &a, 0.1).unwrap().0, 0.0);
        let z = AlphaMatte::constant(8, 8, 0.0).unwrap();
        assert_eq!(connectivity_error(&z, &z, 0.1).unwrap().0, 0.0);
    }

    #[test]
    fn connectivity_rejects_bad_step() {
        let a = AlphaMatte::constant(8, 8, 0.5).unwrap();
        assert!(connectivity_error(&a, &a, 0.0).is_err());
        assert!(connectivity_error(&a, &a, 1.0).is_err());
    }

    /// Independent recursive flood-fill implementation of the same sweep.
    fn oracle_connectivity(pred: &AlphaMatte, gt: &AlphaMatte, step: f64) -> f64 {
        let (w, h) = (pred.width(), pred.height());
        fn flood(
            mask: &[bool],
            seen: &mut [bool],
            i: usize,
            w: usize,
            h: usize,
            out: &mut Vec<usize>,
        ) {
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

    #[test]
    fn connectivity_stray_pixel_matches_flood_fill_oracle() {
        let gt = AlphaMatte::from_fn(8, 8, |x, y| {
            if (2..6).contains(&x) && (2..6).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let pred = AlphaMatte::from_fn(
            8,
            8,
            |x, y| {
                if x == 7 && y == 0 {
                    1.0
                } else {
                    gt.get(x, y)
                }
            },
        )
        .unwrap();
        let (raw, _) = connectivity_error(&pred, &gt, 0.1).unwrap();
        assert!(raw > 0.0);
        assert_close(raw, oracle_connectivity(&pred, &gt, 0.1), 1e-12);
    }

    #[test]
    fn connectivity_matches_oracle_on_graded_cases() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let p = AlphaMatte::from_fn(8, 8, |_, _| rng.random_range(0.0..1.0)).unwrap();
            let g = AlphaMatte::from_fn(8, 8, |_, _| rng.random_range(0.0..1.0)).unwrap();
            let (raw, _) = connectivity_error(&p, &g, 0.1).unwrap();
            assert_close(raw, oracle_connectivity(&p, &g, 0.1), 1e-12);
        }
    }

    fn disc(cx: f64, cy: f64, r: f64) -> AlphaMatte {
        AlphaMatte::from_fn(16, 16, |x, y| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if d <= r {
                1.0
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn imq_perfect_match_is_100() {
        let set = InstanceSet::new(vec![disc(5.0, 5.0, 3.0), disc(11.0, 11.0, 2.5)]).unwrap();
        for q in [
            ImqQuality::Mse,
            ImqQuality::Mad,
            ImqQuality::Grad,
            ImqQuality::Conn,
        ] {
            assert_close(imq(&set, &set, q).unwrap(), 100.0, 1e-9);
        }
    }

    #[test]
    fn imq_no_predictions_is_zero() {
        let gt = InstanceSet::new(vec![disc(5.0, 5.0, 3.0)]).unwrap();
        let pred = InstanceSet::new(vec![]).unwrap();
        assert_eq!(imq(&pred, &gt, ImqQuality::Mse).unwrap(), 0.0);
    }

    #[test]
    fn imq_spurious_prediction_halves_score() {
        let gt = InstanceSet::new(vec![disc(5.0, 5.0, 3.0)]).unwrap();
        let pred = InstanceSet::new(vec![disc(5.0, 5.0, 3.0), disc(12.0, 12.0, 2.0)]).unwrap();
        assert_close(imq(&pred, &gt, ImqQuality::Mse).unwrap(), 50.0, 1e-9);
    }

    #[test]
    fn imq_empty_gt_is_error() {
        let pred = InstanceSet::new(vec![disc(5.0, 5.0, 3.0)]).unwrap();
        let gt = InstanceSet::new(vec![]).unwrap();
        assert!(imq(&pred, &gt, ImqQuality::Mse).is_err());
    }

    #[test]
    fn report_identity() {
        let a = AlphaMatte::from_fn(8, 8, |x, y| if x + y > 6 { 0.9 } else { 0.05 }).unwrap();
        let r = MatteReport::compute(&a, &a).unwrap();
        assert_eq!(
            (r.sad, r.mse, r.mad, r.grad, r.conn),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(r.pixel_count, 64);
    }
}
