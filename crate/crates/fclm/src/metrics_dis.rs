//! Dichotomous-segmentation metrics: maximum and weighted F-measure, MAE,
//! S-measure, E-measure, and a human-correction-effort estimate.

use crate::error::{Error, Result};
use crate::metrics_matting::label_components;
use crate::pred_loss::{AlphaMatte, BinaryMask, GrayMap};
use serde::{Deserialize, Serialize};

const EPS: f64 = 1e-12;

/// E-measure binarization mode; `Mean` averages over the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EMeasureMode {
    Mean,
    Max,
    Adaptive,
}

/// Metric parameters following the conventions of the usual DIS evaluation
/// protocol; every knob is config-exposed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DisConfig {
    /// β² of the maximum F-measure.
    pub max_f_beta_sq: f64,
    /// β² of the weighted F-measure.
    pub weighted_f_beta_sq: f64,
    /// σ of the 7×7 dependency filter inside the weighted F-measure.
    pub weighted_f_sigma: f64,
    /// α mixing object and region structure scores.
    pub s_alpha: f64,
    pub e_mode: EMeasureMode,
    /// Pixel tolerance γ of the correction-effort estimate.
    pub hce_gamma: usize,
}

impl Default for DisConfig {
    fn default() -> Self {
        Self {
            max_f_beta_sq: 0.3,
            weighted_f_beta_sq: 1.0,
            weighted_f_sigma: 5.0,
            s_alpha: 0.5,
            e_mode: EMeasureMode::Mean,
            hce_gamma: 5,
        }
    }
}

/// Per-image DIS report. `hce_approx` flags that the correction-effort
/// number comes from the region-and-contour-click approximation rather than
/// the original benchmark tooling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisReport {
    pub max_f: f64,
    pub weighted_f: f64,
    pub mae: f64,
    pub s_measure: f64,
    pub e_measure: f64,
    pub hce: u64,
    pub hce_approx: bool,
}

impl DisReport {
    pub fn compute(pred: &AlphaMatte, gt: &BinaryMask, cfg: &DisConfig) -> Result<Self> {
        Ok(Self {
            max_f: max_f_measure(pred, gt, cfg.max_f_beta_sq)?,
            weighted_f: weighted_f_measure_with(
                pred,
                gt,
                cfg.weighted_f_beta_sq,
                cfg.weighted_f_sigma,
            )?,
            mae: mae(pred, gt)?,
            s_measure: s_measure(pred, gt, cfg.s_alpha)?,
            e_measure: e_measure(pred, gt, cfg.e_mode)?,
            hce: hce(pred, gt, cfg.hce_gamma)?,
            hce_approx: true,
        })
    }
}

fn check_dims(pred: &AlphaMatte, gt: &BinaryMask) -> Result<()> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::ShapeMismatch {
            left: format!("{}x{}", pred.width(), pred.height()),
            right: format!("{}x{}", gt.width(), gt.height()),
        });
    }
    Ok(())
}

/// Largest grid level `j` such that `p ≥ j/255`.
fn threshold_bin(p: f64) -> usize {
    let mut bin = ((p * 255.0).floor() as isize).clamp(0, 255);
    while bin < 255 && p >= (bin + 1) as f64 / 255.0 {
        bin += 1;
    }
    while bin > 0 && p < bin as f64 / 255.0 {
        bin -= 1;
    }
    bin as usize
}

/// Maximum F-measure over the 256-threshold sweep `t ∈ {0,…,255}/255` of
/// `{pred ≥ t}`, with the 0/0 convention F = 0.
pub fn max_f_measure(pred: &AlphaMatte, gt: &BinaryMask, beta_sq: f64) -> Result<f64> {
    check_dims(pred, gt)?;
    let total_fg: usize = gt.foreground_count();
    if total_fg == 0 {
        return Err(Error::UndefinedRecall);
    }
    // Histogram over quantized levels; cumulating from the top yields the
    // per-threshold positive and true-positive counts of the direct sweep.
    let mut pos = [0usize; 256];
    let mut tp = [0usize; 256];
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        let bin = threshold_bin(p);
        pos[bin] += 1;
        if g == 1.0 {
            tp[bin] += 1;
        }
    }
    let mut best = 0.0f64;
    let mut pos_ge = 0usize;
    let mut tp_ge = 0usize;
    for j in (0..256).rev() {
        pos_ge += pos[j];
        tp_ge += tp[j];
        if pos_ge == 0 || tp_ge == 0 {
            continue;
        }
        let precision = tp_ge as f64 / pos_ge as f64;
        let recall = tp_ge as f64 / total_fg as f64;
        let denom = beta_sq * precision + recall;
        if denom > 0.0 {
            best = best.max((1.0 + beta_sq) * precision * recall / denom);
        }
    }
    Ok(best)
}

/// Exact squared Euclidean distance transform with nearest-source indices.
///
/// Two-stage Felzenszwalb-Huttenlocher parabola envelope; `sources[i]` is
/// the linear index of a nearest `true` pixel (usize::MAX when the mask is
/// empty).
pub(crate) fn edt_with_index(mask: &[bool], w: usize, h: usize) -> (Vec<f64>, Vec<usize>) {
    const INF: f64 = f64::INFINITY;
    // Stage 1: per column, distance to nearest source row.
    let mut col_dist = vec![INF; w * h];
    let mut col_src = vec![usize::MAX; w * h];
    for x in 0..w {
        let sites: Vec<usize> = (0..h).filter(|&y| mask[y * w + x]).collect();
        if sites.is_empty() {
            continue;
        }
        let (d, arg) = dt1d(&sites.iter().map(|&y| (0.0, y)).collect::<Vec<_>>(), h);
        for y in 0..h {
            col_dist[y * w + x] = d[y];
            col_src[y * w + x] = arg[y] * w + x;
        }
    }
    // Stage 2: per row over the column distances.
    let mut dist = vec![INF; w * h];
    let mut src = vec![usize::MAX; w * h];
    for y in 0..h {
        let sites: Vec<(f64, usize)> = (0..w)
            .filter(|&x| col_dist[y * w + x].is_finite())
            .map(|x| (col_dist[y * w + x], x))
            .collect();
        if sites.is_empty() {
            continue;
        }
        let (d, arg) = dt1d(&sites, w);
        for x in 0..w {
            dist[y * w + x] = d[x];
            src[y * w + x] = col_src[y * w + arg[x]];
        }
    }
    (dist, src)
}

/// 1D lower envelope of parabolas `f_s + (i − pos_s)²` over the given
/// finite sites; returns per-cell minima and the winning site position.
fn dt1d(sites: &[(f64, usize)], n: usize) -> (Vec<f64>, Vec<usize>) {
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    for (qi, &(fq, q)) in sites.iter().enumerate() {
        let qf = q as f64;
        loop {
            if v.is_empty() {
                v.push(qi);
                z.clear();
                z.push(f64::NEG_INFINITY);
                z.push(f64::INFINITY);
                break;
            }
            let &(fp, p) = &sites[*v.last().unwrap()];
            let pf = p as f64;
            let s = ((fq + qf * qf) - (fp + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= z[v.len() - 1] {
                v.pop();
                z.pop();
            } else {
                v.push(qi);
                z.pop();
                z.push(s);
                z.push(f64::INFINITY);
                break;
            }
        }
    }
    let mut d = vec![0.0; n];
    let mut arg = vec![0usize; n];
    let mut k = 0usize;
    for i in 0..n {
        let fi = i as f64;
        while z[k + 1] < fi {
            k += 1;
        }
        let (fs, pos) = sites[v[k]];
        d[i] = fs + (fi - pos as f64) * (fi - pos as f64);
        arg[i] = pos;
    }
    (d, arg)
}

/// Weighted F-measure: pixel errors are propagated through a Gaussian
/// dependency filter (7×7, σ configurable) on the foreground and a
/// distance-decay factor `2 − exp(ln(0.5)/5 · d)` on false positives.
pub fn weighted_f_measure(pred: &AlphaMatte, gt: &BinaryMask) -> Result<f64> {
    weighted_f_measure_with(pred, gt, 1.0, 5.0)
}

pub fn weighted_f_measure_with(
    pred: &AlphaMatte,
    gt: &BinaryMask,
    beta_sq: f64,
    sigma: f64,
) -> Result<f64> {
    check_dims(pred, gt)?;
    let fg_count = gt.foreground_count();
    if fg_count == 0 {
        return Err(Error::UndefinedRecall);
    }
    let (w, h) = (pred.width(), pred.height());
    let n = w * h;
    let gt_mask: Vec<bool> = gt.values().iter().map(|&v| v == 1.0).collect();
    let e: Vec<f64> = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(p, g)| (p - g).abs())
        .collect();
    let (dist2, nearest) = edt_with_index(&gt_mask, w, h);

    // Background errors inherit the error of their nearest foreground pixel.
    let mut et = e.clone();
    for i in 0..n {
        if !gt_mask[i] {
            et[i] = e[nearest[i]];
        }
    }

    // 7×7 zero-padded Gaussian dependency filter.
    let radius = 3usize;
    let k = 2 * radius + 1;
    let mut kernel = vec![0.0; k * k];
    let mut ksum = 0.0;
    for dy in 0..k {
        for dx in 0..k {
            let (fx, fy) = (dx as f64 - radius as f64, dy as f64 - radius as f64);
            let v = (-(fx * fx + fy * fy) / (2.0 * sigma * sigma)).exp();
            kernel[dy * k + dx] = v;
            ksum += v;
        }
    }
    for v in &mut kernel {
        *v /= ksum;
    }
    let mut ea = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in 0..k {
                for dx in 0..k {
                    let sx = x as isize + dx as isize - radius as isize;
                    let sy = y as isize + dy as isize - radius as isize;
                    if sx >= 0 && (sx as usize) < w && sy >= 0 && (sy as usize) < h {
                        acc += kernel[dy * k + dx] * et[sy as usize * w + sx as usize];
                    }
                }
            }
            ea[y * w + x] = acc;
        }
    }

    let decay = 0.5f64.ln() / 5.0;
    let mut ew_fg_sum = 0.0;
    let mut ew_bg_sum = 0.0;
    for i in 0..n {
        let min_e_ea = if gt_mask[i] && ea[i] < e[i] {
            ea[i]
        } else {
            e[i]
        };
        if gt_mask[i] {
            ew_fg_sum += min_e_ea;
        } else {
            let b = 2.0 - (decay * dist2[i].sqrt()).exp();
            ew_bg_sum += min_e_ea * b;
        }
    }
    let tpw = fg_count as f64 - ew_fg_sum;
    let fpw = ew_bg_sum;
    let recall = 1.0 - ew_fg_sum / fg_count as f64;
    let precision = tpw / (tpw + fpw + EPS);
    let denom = beta_sq * precision + recall;
    if denom <= EPS {
        return Ok(0.0);
    }
    Ok(((1.0 + beta_sq) * precision * recall / denom).clamp(0.0, 1.0))
}

/// Mean absolute error.
pub fn mae(pred: &AlphaMatte, gt: &BinaryMask) -> Result<f64> {
    check_dims(pred, gt)?;
    let n = pred.values().len() as f64;
    Ok(pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / n)
}

/// Structure measure `α·S_object + (1−α)·S_region` with the standard
/// degenerate conventions for constant ground truth.
pub fn s_measure(pred: &AlphaMatte, gt: &BinaryMask, alpha: f64) -> Result<f64> {
    check_dims(pred, gt)?;
    let n = gt.values().len() as f64;
    let gt_mean = gt.values().iter().sum::<f64>() / n;
    let pred_mean = pred.values().iter().sum::<f64>() / n;
    if gt_mean == 0.0 {
        return Ok(1.0 - pred_mean);
    }
    if gt_mean == 1.0 {
        return Ok(pred_mean);
    }
    let s = alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt);
    Ok(s.max(0.0))
}

fn region_stat(vals: &[f64], idx: &[usize]) -> (f64, f64) {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| vals[i]).sum::<f64>() / n;
    let var = idx.iter().map(|&i| (vals[i] - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn s_object(pred: &AlphaMatte, gt: &BinaryMask) -> f64 {
    let fg_idx: Vec<usize> = (0..gt.values().len())
        .filter(|&i| gt.values()[i] == 1.0)
        .collect();
    let bg_idx: Vec<usize> = (0..gt.values().len())
        .filter(|&i| gt.values()[i] == 0.0)
        .collect();
    let u = fg_idx.len() as f64 / gt.values().len() as f64;
    let score = |vals: &[f64], idx: &[usize], complement: bool| -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let (mean, std) = if complement {
            let inv: Vec<f64> = vals.iter().map(|v| 1.0 - v).collect();
            region_stat(&inv, idx)
        } else {
            region_stat(vals, idx)
        };
        2.0 * mean / (mean * mean + 1.0 + std + EPS)
    };
    u * score(pred.values(), &fg_idx, false) + (1.0 - u) * score(pred.values(), &bg_idx, true)
}

fn ssim_region(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    if pred.is_empty() {
        return 1.0;
    }
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let denom = (n - 1.0).max(EPS);
    let sigma_x = pred.iter().map(|p| (p - x).powi(2)).sum::<f64>() / denom;
    let sigma_y = gt.iter().map(|g| (g - y).powi(2)).sum::<f64>() / denom;
    let sigma_xy = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p - x) * (g - y))
        .sum::<f64>()
        / denom;
    let a = 4.0 * x * y * sigma_xy;
    let b = (x * x + y * y) * (sigma_x + sigma_y);
    if a != 0.0 {
        a / (b + EPS)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pred: &AlphaMatte, gt: &BinaryMask) -> f64 {
    let (w, h) = (gt.width(), gt.height());
    // Foreground centroid, rounded.
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut count = 0.0;
    for y in 0..h {
        for x in 0..w {
            if gt.get(x, y) == 1.0 {
                sx += x as f64;
                sy += y as f64;
                count += 1.0;
            }
        }
    }
    let cx = ((sx / count).round() as usize).min(w - 1);
    let cy = ((sy / count).round() as usize).min(h - 1);

    let mut total = 0.0;
    for (x0, x1, y0, y1) in [
        (0, cx + 1, 0, cy + 1),
        (cx + 1, w, 0, cy + 1),
        (0, cx + 1, cy + 1, h),
        (cx + 1, w, cy + 1, h),
    ] {
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        let mut pq = Vec::with_capacity((x1 - x0) * (y1 - y0));
        let mut gq = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            for x in x0..x1 {
                pq.push(pred.get(x, y));
                gq.push(gt.get(x, y));
            }
        }
        let weight = pq.len() as f64 / (w * h) as f64;
        total += weight * ssim_region(&pq, &gq);
    }
    total
}

/// Enhanced-alignment measure. The mean mode binarizes at 256 thresholds
/// `t ∈ {1,…,256}/256` and averages; constant ground truth falls back to the
/// standard mean-bias convention.
pub fn e_measure(pred: &AlphaMatte, gt: &BinaryMask, mode: EMeasureMode) -> Result<f64> {
    check_dims(pred, gt)?;
    match mode {
        EMeasureMode::Mean => {
            let mut acc = 0.0;
            for k in 1..=256usize {
                let t = k as f64 / 256.0;
                acc += em_at_threshold(pred, gt, t);
            }
            Ok(acc / 256.0)
        }
        EMeasureMode::Max => {
            let mut best = 0.0f64;
            for k in 1..=256usize {
                let t = k as f64 / 256.0;
                best = best.max(em_at_threshold(pred, gt, t));
            }
            Ok(best)
        }
        EMeasureMode::Adaptive => {
            let n = pred.values().len() as f64;
            let t = (2.0 * pred.values().iter().sum::<f64>() / n).min(1.0);
            Ok(em_at_threshold(pred, gt, t))
        }
    }
}

fn em_at_threshold(pred: &AlphaMatte, gt: &BinaryMask, t: f64) -> f64 {
    let n = pred.values().len() as f64;
    let fm: Vec<f64> = pred
        .values()
        .iter()
        .map(|&p| if p >= t { 1.0 } else { 0.0 })
        .collect();
    let gt_mean = gt.values().iter().sum::<f64>() / n;
    if gt_mean == 0.0 {
        return fm.iter().map(|v| 1.0 - v).sum::<f64>() / n;
    }
    if gt_mean == 1.0 {
        return fm.iter().sum::<f64>() / n;
    }
    let fm_mean = fm.iter().sum::<f64>() / n;
    let mut acc = 0.0;
    for (f, g) in fm.iter().zip(gt.values()) {
        let ap = f - fm_mean;
        let ag = g - gt_mean;
        let phi = 2.0 * ap * ag / (ap * ap + ag * ag);
        acc += (phi + 1.0) * (phi + 1.0) / 4.0;
    }
    acc / n
}

/// Human-correction-effort estimate: false-positive/false-negative regions
/// outside a γ-pixel tolerance band around the ground-truth boundary each
/// cost the click count of their Douglas-Peucker-simplified contour.
pub fn hce(pred: &AlphaMatte, gt: &BinaryMask, gamma: usize) -> Result<u64> {
    check_dims(pred, gt)?;
    let (w, h) = (pred.width(), pred.height());
    let n = w * h;
    let pred_bin: Vec<bool> = pred.values().iter().map(|&p| p >= 0.5).collect();
    let gt_bin: Vec<bool> = gt.values().iter().map(|&g| g == 1.0).collect();

    // Tolerance band: pixels within γ of the ground-truth boundary.
    let mut boundary = vec![false; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let g = gt_bin[i];
            let mut edge = false;
            if x > 0 && gt_bin[i - 1] != g {
                edge = true;
            }
            if x + 1 < w && gt_bin[i + 1] != g {
                edge = true;
            }
            if y > 0 && gt_bin[i - w] != g {
                edge = true;
            }
            if y + 1 < h && gt_bin[i + w] != g {
                edge = true;
            }
            boundary[i] = edge;
        }
    }
    let band: Vec<bool> = if boundary.iter().any(|b| *b) {
        let (dist2, _) = edt_with_index(&boundary, w, h);
        let g2 = (gamma * gamma) as f64;
        dist2.iter().map(|&d| d <= g2).collect()
    } else {
        vec![false; n]
    };

    let mut total = 0u64;
    for error_mask in [
        (0..n)
            .map(|i| pred_bin[i] && !gt_bin[i] && !band[i])
            .collect::<Vec<bool>>(),
        (0..n)
            .map(|i| !pred_bin[i] && gt_bin[i] && !band[i])
            .collect::<Vec<bool>>(),
    ] {
        let (labels, sizes) = label_components(&error_mask, w, h);
        for lbl in 1..sizes.len() {
            let region: Vec<bool> = labels.iter().map(|&l| l as usize == lbl).collect();
            let contour = trace_contour(&region, w, h);
            total += simplified_vertex_count(&contour, gamma as f64) as u64;
        }
    }
    Ok(total)
}

/// Moore-neighbor boundary trace of a 4-connected region, clockwise,
/// starting at its topmost-leftmost pixel.
fn trace_contour(region: &[bool], w: usize, h: usize) -> Vec<(f64, f64)> {
    let start = match region.iter().position(|&r| r) {
        Some(s) => s,
        None => return Vec::new(),
    };
    let (sx, sy) = ((start % w) as isize, (start / w) as isize);
    let at = |x: isize, y: isize| -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < w
            && (y as usize) < h
            && region[y as usize * w + x as usize]
    };
    // Clockwise Moore neighborhood starting west.
    const DIRS: [(isize, isize); 8] = [
        (-1, 0),
        (-1, -1),
        (0, -1),
        (1, -1),
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
    ];
    let mut contour = vec![(sx as f64, sy as f64)];
    let mut cur = (sx, sy);
    // Backtrack starts west of the start pixel, which is outside the region
    // because the start is its row's leftmost pixel.
    let mut backtrack_dir = 0usize;
    let mut first_move: Option<(isize, isize, usize)> = None;
    loop {
        let mut found = None;
        for step in 1..=8 {
            let d = (backtrack_dir + step) % 8;
            let (dx, dy) = DIRS[d];
            let (nx, ny) = (cur.0 + dx, cur.1 + dy);
            if at(nx, ny) {
                found = Some((nx, ny, d));
                break;
            }
        }
        let (nx, ny, d) = match found {
            Some(f) => f,
            // Isolated pixel.
            None => break,
        };
        if let Some(first) = first_move {
            if (cur.0, cur.1) == (sx, sy) && (nx, ny, d) == first {
                break;
            }
        } else {
            first_move = Some((nx, ny, d));
        }
        contour.push((nx as f64, ny as f64));
        // The new backtrack points at the pixel we came from; the clockwise
        // scan resumes just past it, and examines it last for dead ends.
        backtrack_dir = (d + 4) % 8;
        cur = (nx, ny);
        if contour.len() > 4 * w * h {
            break;
        }
    }
    // The trace revisits the start as the final step; drop the duplicate.
    if contour.len() > 1 && contour.first() == contour.last() {
        contour.pop();
    }
    contour
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    if len2 == 0.0 {
        return ((p.0 - a.0).powi(2) + (p.1 - a.1).powi(2)).sqrt();
    }
    let t = (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0);
    let (px, py) = (a.0 + t * vx, a.1 + t * vy);
    ((p.0 - px).powi(2) + (p.1 - py).powi(2)).sqrt()
}

fn dp_open(points: &[(f64, f64)], tol: f64, keep: &mut [bool], lo: usize, hi: usize) {
    if hi <= lo + 1 {
        return;
    }
    let mut worst = 0.0;
    let mut worst_i = lo;
    for (i, &p) in points.iter().enumerate().take(hi).skip(lo + 1) {
        let d = point_segment_distance(p, points[lo], points[hi]);
        if d > worst {
            worst = d;
            worst_i = i;
        }
    }
    if worst > tol {
        keep[worst_i] = true;
        dp_open(points, tol, keep, lo, worst_i);
        dp_open(points, tol, keep, worst_i, hi);
    }
}

/// Dominant-point count of a closed contour under Douglas-Peucker
/// simplification: split at the two farthest-apart points, simplify both
/// open chains, and count the surviving vertices.
fn simplified_vertex_count(contour: &[(f64, f64)], tol: f64) -> usize {
    let n = contour.len();
    if n <= 2 {
        return n;
    }
    let mut best = (0usize, 1usize);
    let mut best_d = -1.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = (contour[i].0 - contour[j].0).powi(2) + (contour[i].1 - contour[j].1).powi(2);
            if d > best_d {
                best_d = d;
                best = (i, j);
            }
        }
    }
    let (i, j) = best;
    let chain_a: Vec<(f64, f64)> = (i..=j).map(|k| contour[k]).collect();
    let mut chain_b: Vec<(f64, f64)> = (j..n).chain(0..=i).map(|k| contour[k]).collect();
    if chain_b.len() < 2 {
        chain_b = vec![contour[j], contour[i]];
    }
    let count_chain = |chain: &[(f64, f64)]| -> usize {
        let mut keep = vec![false; chain.len()];
        keep[0] = true;
        keep[chain.len() - 1] = true;
        dp_open(chain, tol, &mut keep, 0, chain.len() - 1);
        keep.iter().filter(|k| **k).count()
    };
    // The two chains share both endpoints.
    count_chain(&chain_a) + count_chain(&chain_b) - 2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn square_mask(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1).unwrap()
    }

    fn as_alpha(m: &BinaryMask) -> AlphaMatte {
        AlphaMatte::new(m.width(), m.height(), m.values().to_vec()).unwrap()
    }

    #[test]
    fn identity_suite() {
        let gt = square_mask(16, 16, 4, 4, 12, 12);
        let pred = as_alpha(&gt);
        let r = DisReport::compute(&pred, &gt, &DisConfig::default()).unwrap();
        assert_close(r.max_f, 1.0, 1e-6);
        assert_close(r.weighted_f, 1.0, 1e-6);
        assert_close(r.mae, 0.0, 1e-12);
        assert_close(r.s_measure, 1.0, 1e-6);
        assert_close(r.e_measure, 1.0, 1e-6);
        assert_eq!(r.hce, 0);
        assert!(r.hce_approx);
    }

    #[test]
    fn max_f_hand_case() {
        // gt = [1,0,0,0], pred = complement: only t = 0 has recall, where
        // P = 0.25, R = 1, F = 1.3·0.25/(0.3·0.25 + 1).
        let gt = BinaryMask::new(4, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let pred = AlphaMatte::new(4, 1, vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        let f = max_f_measure(&pred, &gt, 0.3).unwrap();
        assert_close(f, 0.3023, 1e-4);
        assert_close(f, 1.3 * 0.25 / (0.3 * 0.25 + 1.0), 1e-12);
    }

    #[test]
    fn max_f_constant_prediction_threshold_flat() {
        let gt = square_mask(8, 8, 2, 2, 6, 6);
        let pred = AlphaMatte::constant(8, 8, 0.5).unwrap();
        // All thresholds at or below 0.5 see the full positive set; above it
        // the prediction is empty and F = 0.
        let f = max_f_measure(&pred, &gt, 0.3).unwrap();
        let p = 16.0 / 64.0;
        assert_close(f, 1.3 * p / (0.3 * p + 1.0), 1e-12);
    }

    #[test]
    fn max_f_rejects_empty_gt() {
        let gt = BinaryMask::new(4, 4, vec![0.0; 16]).unwrap();
        let pred = AlphaMatte::constant(4, 4, 0.5).unwrap();
        assert!(matches!(
            max_f_measure(&pred, &gt, 0.3),
            Err(Error::UndefinedRecall)
        ));
    }

    #[test]
    fn max_f_invariant_under_monotone_rescale() {
        // Levels spaced so squaring keeps them distinct on the 1/255 grid.
        let levels = [0.0, 0.4, 0.7, 1.0];
        let q = |v: f64| (v * 255.0).round() / 255.0;
        let gt = square_mask(8, 8, 1, 1, 5, 5);
        let pred = AlphaMatte::from_fn(8, 8, |x, y| q(levels[(x + 2 * y) % 4])).unwrap();
        let pred_sq = AlphaMatte::from_fn(8, 8, |x, y| {
            let v = levels[(x + 2 * y) % 4];
            q(v * v)
        })
        .unwrap();
        assert_close(
            max_f_measure(&pred, &gt, 0.3).unwrap(),
            max_f_measure(&pred_sq, &gt, 0.3).unwrap(),
            1e-12,
        );
    }

    #[test]
    fn edt_matches_brute_force() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (w, h) = (9, 7);
            let mask: Vec<bool> = (0..w * h)
                .map(|_| rng.random_range(0.0..1.0) < 0.2)
                .collect();
            if !mask.iter().any(|m| *m) {
                continue;
            }
            let (dist2, src) = edt_with_index(&mask, w, h);
            for y in 0..h {
                for x in 0..w {
                    let mut best = f64::INFINITY;
                    for sy in 0..h {
                        for sx in 0..w {
                            if mask[sy * w + sx] {
                                let d = ((x as f64 - sx as f64).powi(2))
                                    + ((y as f64 - sy as f64).powi(2));
                                best = best.min(d);
                            }
                        }
                    }
                    let i = y * w + x;
                    assert_close(dist2[i], best, 1e-9);
                    let s = src[i];
                    assert!(mask[s]);
                    let (sx, sy) = (s % w, s / w);
                    let d = (x as f64 - sx as f64).powi(2) + (y as f64 - sy as f64).powi(2);
                    assert_close(d, best, 1e-9);
                }
            }
        }
    }

    #[test]
    fn weighted_f_zero_prediction_is_zero() {
        // Object at least 3 px from the border so the dependency filter sees
        // a full window.
        let gt = square_mask(16, 16, 4, 4, 12, 12);
        let pred = AlphaMatte::constant(16, 16, 0.0).unwrap();
        assert_close(weighted_f_measure(&pred, &gt).unwrap(), 0.0, 1e-9);
    }

    #[test]
    fn weighted_f_distance_decay_orders_false_positives() {
        let gt = square_mask(16, 16, 2, 2, 7, 7);
        let near = AlphaMatte::from_fn(
            16,
            16,
            |x, y| {
                if (x, y) == (8, 4) {
                    1.0
                } else {
                    gt.get(x, y)
                }
            },
        )
        .unwrap();
        let far = AlphaMatte::from_fn(16, 16, |x, y| {
            if (x, y) == (14, 14) {
                1.0
            } else {
                gt.get(x, y)
            }
        })
        .unwrap();
        let f_near = weighted_f_measure(&near, &gt).unwrap();
        let f_far = weighted_f_measure(&far, &gt).unwrap();
        assert!(
            f_far < f_near,
            "far false positive must score lower: near {f_near}, far {f_far}"
        );
    }

    #[test]
    fn mae_cases() {
        let gt = square_mask(8, 8, 0, 0, 4, 8);
        let pred = as_alpha(&gt);
        assert_eq!(mae(&pred, &gt).unwrap(), 0.0);
        let half = AlphaMatte::constant(8, 8, 0.5).unwrap();
        assert_close(mae(&half, &gt).unwrap(), 0.5, 1e-12);
        let inv = AlphaMatte::new(8, 8, gt.values().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert_close(mae(&inv, &gt).unwrap(), 1.0, 1e-12);
    }

    #[test]
    fn s_measure_degenerate_conventions() {
        let empty = BinaryMask::new(8, 8, vec![0.0; 64]).unwrap();
        let zero_pred = AlphaMatte::constant(8, 8, 0.0).unwrap();
        let one_pred = AlphaMatte::constant(8, 8, 1.0).unwrap();
        assert_close(s_measure(&zero_pred, &empty, 0.5).unwrap(), 1.0, 1e-12);
        assert_close(s_measure(&one_pred, &empty, 0.5).unwrap(), 0.0, 1e-12);
        let gt = square_mask(8, 8, 2, 2, 6, 6);
        assert_close(s_measure(&as_alpha(&gt), &gt, 0.5).unwrap(), 1.0, 1e-6);
    }

    #[test]
    fn e_measure_checkerboard_complement() {
        let gt = BinaryMask::from_fn(8, 8, |x, y| (x + y) % 2 == 0).unwrap();
        let pred = AlphaMatte::new(8, 8, gt.values().iter().map(|v| 1.0 - v).collect()).unwrap();
        let em = e_measure(&pred, &gt, EMeasureMode::Mean).unwrap();
        assert!(em < 0.25, "complement must score low, got {em}");
        // Direct per-pixel oracle: binarized complement has φ = −1 at every
        // pixel, so the enhanced value is 0 at every threshold.
        assert_close(em, 0.0, 1e-12);
    }

    #[test]
    fn e_measure_constant_half_is_deterministic() {
        let gt = square_mask(8, 8, 1, 1, 5, 5);
        let pred = AlphaMatte::constant(8, 8, 0.5).unwrap();
        let a = e_measure(&pred, &gt, EMeasureMode::Mean).unwrap();
        let b = e_measure(&pred, &gt, EMeasureMode::Mean).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn hce_wobble_within_tolerance_is_free() {
        let gt = square_mask(32, 32, 8, 8, 24, 24);
        // Two-pixel boundary wobble: a notch and a bump on the left edge.
        let pred = AlphaMatte::from_fn(32, 32, |x, y| {
            if (10..14).contains(&y) && (6..8).contains(&x) {
                1.0
            } else if (18..22).contains(&y) && (8..10).contains(&x) {
                0.0
            } else {
                gt.get(x, y)
            }
        })
        .unwrap();
        assert_eq!(hce(&pred, &gt, 5).unwrap(), 0);
    }

    #[test]
    fn hce_spurious_square_costs_four_clicks() {
        let gt = square_mask(64, 64, 4, 4, 14, 14);
        let pred = AlphaMatte::from_fn(64, 64, |x, y| {
            if (40..50).contains(&x) && (40..50).contains(&y) {
                1.0
            } else {
                gt.get(x, y)
            }
        })
        .unwrap();
        assert_eq!(hce(&pred, &gt, 5).unwrap(), 4);
    }

    #[test]
    fn hce_missed_region_counts_too() {
        let gt = BinaryMask::from_fn(64, 64, |x, y| {
            ((4..14).contains(&x) && (4..14).contains(&y))
                || ((40..50).contains(&x) && (40..50).contains(&y))
        })
        .unwrap();
        let pred = AlphaMatte::from_fn(64, 64, |x, y| {
            if (4..14).contains(&x) && (4..14).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        // The second object is missed entirely; its own boundary band
        // forgives a γ-wide ring, leaving an inner square to redraw.
        let clicks = hce(&pred, &gt, 2).unwrap();
        assert_eq!(clicks, 4);
    }

    #[test]
    fn report_is_bitwise_deterministic() {
        let gt = square_mask(16, 16, 3, 5, 11, 13);
        let pred = AlphaMatte::from_fn(16, 16, |x, y| {
            0.5 * gt.get(x, y) + 0.2 * ((x * 7 + y * 3) % 5) as f64 / 4.0
        })
        .unwrap();
        let a = DisReport::compute(&pred, &gt, &DisConfig::default()).unwrap();
        let b = DisReport::compute(&pred, &gt, &DisConfig::default()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn metrics_lie_in_unit_interval() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let gt = BinaryMask::from_fn(16, 16, |_, _| rng.random_range(0.0..1.0) < 0.4).unwrap();
            if gt.foreground_count() == 0 {
                continue;
            }
            let pred = AlphaMatte::from_fn(16, 16, |_, _| rng.random_range(0.0..1.0)).unwrap();
            let r = DisReport::compute(&pred, &gt, &DisConfig::default()).unwrap();
            for v in [r.max_f, r.weighted_f, r.mae, r.s_measure, r.e_measure] {
                assert!((0.0..=1.0).contains(&v), "metric out of range: {v}");
            }
        }
    }
}
