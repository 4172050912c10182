//! Prediction-head losses: L1 + Laplacian pyramid for matting, BCE + soft
//! IoU for dichotomous segmentation, and the total training objective.

use crate::error::{Error, Result};

/// Binomial blur kernel used by the Gaussian-Laplacian pyramid.
const PYR_KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Clamp applied to predictions inside the BCE logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Additive smoothing for the soft IoU.
pub const IOU_SMOOTHING: f64 = 1.0;

/// Default Laplacian pyramid depth.
pub const DEFAULT_PYRAMID_LEVELS: usize = 5;

/// Read-only view shared by the single-channel image types.
pub trait GrayMap {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn values(&self) -> &[f64];
}

/// Continuous opacity map with values clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMatte {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl AlphaMatte {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height || values.is_empty() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: width * height,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "AlphaMatte::new",
            });
        }
        Ok(Self {
            width,
            height,
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

impl GrayMap for AlphaMatte {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Hard segmentation mask; values are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height || values.is_empty() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: width * height,
            });
        }
        if values.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::InvalidArgument(
                "binary mask values must be exactly 0 or 1".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Thresholds an alpha matte at 0.5.
    pub fn from_alpha(alpha: &AlphaMatte) -> Self {
        Self {
            width: alpha.width,
            height: alpha.height,
            values: alpha
                .values
                .iter()
                .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(if f(x, y) { 1.0 } else { 0.0 });
            }
        }
        Self::new(width, height, values)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|v| **v == 1.0).count()
    }
}

impl GrayMap for BinaryMask {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

impl GrayMap for crate::depth_distill::DepthMap {
    fn width(&self) -> usize {
        DepthMap::width(self)
    }
    fn height(&self) -> usize {
        DepthMap::height(self)
    }
    fn values(&self) -> &[f64] {
        DepthMap::values(self)
    }
}

use crate::depth_distill::DepthMap;

fn check_same_dims<P: GrayMap, G: GrayMap>(pred: &P, gt: &G) -> Result<()> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::ShapeMismatch {
            left: format!("{}x{}", pred.width(), pred.height()),
            right: format!("{}x{}", gt.width(), gt.height()),
        });
    }
    Ok(())
}

/// Mean absolute difference over pixels.
pub fn l1_matte_loss(pred: &AlphaMatte, gt: &AlphaMatte) -> Result<f64> {
    check_same_dims(pred, gt)?;
    let n = pred.values.len() as f64;
    Ok(pred
        .values
        .iter()
        .zip(&gt.values)
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / n)
}

/// [`l1_matte_loss`] and its gradient with respect to the prediction.
pub fn l1_matte_loss_with_grad(pred: &AlphaMatte, gt: &AlphaMatte) -> Result<(f64, Vec<f64>)> {
    check_same_dims(pred, gt)?;
    let n = pred.values.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.values.len()];
    for (i, (p, g)) in pred.values.iter().zip(&gt.values).enumerate() {
        let d = p - g;
        loss += d.abs();
        grad[i] = d.signum() / n;
        if d == 0.0 {
            grad[i] = 0.0;
        }
    }
    Ok((loss / n, grad))
}

fn reflect101(i: isize, n: usize) -> usize {
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

fn blur_axis(vals: &[f64], w: usize, h: usize, along_x: bool) -> Vec<f64> {
    let mut out = vec![0.0; vals.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in PYR_KERNEL.iter().enumerate() {
                let off = ki as isize - 2;
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

/// Adjoint of [`blur_axis`]: scatter-accumulates through the same reflected
/// indices.
fn blur_axis_adjoint(grad: &[f64], w: usize, h: usize, along_x: bool) -> Vec<f64> {
    let mut out = vec![0.0; grad.len()];
    for y in 0..h {
        for x in 0..w {
            let g = grad[y * w + x];
            for (ki, &kv) in PYR_KERNEL.iter().enumerate() {
                let off = ki as isize - 2;
                let (sx, sy) = if along_x {
                    (reflect101(x as isize + off, w), y)
                } else {
                    (x, reflect101(y as isize + off, h))
                };
                out[sy * w + sx] += kv * g;
            }
        }
    }
    out
}

fn blur(vals: &[f64], w: usize, h: usize) -> Vec<f64> {
    blur_axis(&blur_axis(vals, w, h, true), w, h, false)
}

fn blur_adjoint(grad: &[f64], w: usize, h: usize) -> Vec<f64> {
    blur_axis_adjoint(&blur_axis_adjoint(grad, w, h, false), w, h, true)
}

fn downsample(vals: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let blurred = blur(vals, w, h);
    let (w2, h2) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = vec![0.0; w2 * h2];
    for y in 0..h2 {
        for x in 0..w2 {
            out[y * w2 + x] = blurred[(2 * y) * w + 2 * x];
        }
    }
    (out, w2, h2)
}

fn downsample_adjoint(grad: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (w2, h2) = (w.div_ceil(2), h.div_ceil(2));
    let mut expanded = vec![0.0; w * h];
    for y in 0..h2 {
        for x in 0..w2 {
            expanded[(2 * y) * w + 2 * x] = grad[y * w2 + x];
        }
    }
    blur_adjoint(&expanded, w, h)
}

fn upsample(vals: &[f64], w2: usize, h2: usize, tw: usize, th: usize) -> Vec<f64> {
    let mut stuffed = vec![0.0; tw * th];
    for y in 0..h2 {
        for x in 0..w2 {
            stuffed[(2 * y) * tw + 2 * x] = vals[y * w2 + x];
        }
    }
    // The doubled kernel per axis compensates for the zero insertion.
    blur(&stuffed, tw, th)
        .into_iter()
        .map(|v| 4.0 * v)
        .collect()
}

fn upsample_adjoint(grad: &[f64], w2: usize, h2: usize, tw: usize, th: usize) -> Vec<f64> {
    let scaled: Vec<f64> = grad.iter().map(|v| 4.0 * v).collect();
    let back = blur_adjoint(&scaled, tw, th);
    let mut out = vec![0.0; w2 * h2];
    for y in 0..h2 {
        for x in 0..w2 {
            out[y * w2 + x] = back[(2 * y) * tw + 2 * x];
        }
    }
    out
}

struct Pyramid {
    levels: Vec<(Vec<f64>, usize, usize)>,
}

fn build_gaussian_pyramid(vals: Vec<f64>, w: usize, h: usize, levels: usize) -> Pyramid {
    let mut out = vec![(vals, w, h)];
    for _ in 1..levels {
        let (v, cw, ch) = {
            let (v, cw, ch) = out.last().unwrap();
            downsample(v, *cw, *ch)
        };
        out.push((v, cw, ch));
    }
    Pyramid { levels: out }
}

fn laplacian_bands(pyr: &Pyramid) -> Vec<Vec<f64>> {
    let l = pyr.levels.len();
    let mut bands = Vec::with_capacity(l);
    for i in 0..l {
        let (g, w, h) = &pyr.levels[i];
        if i + 1 < l {
            let (gn, wn, hn) = &pyr.levels[i + 1];
            let up = upsample(gn, *wn, *hn, *w, *h);
            bands.push(g.iter().zip(&up).map(|(a, b)| a - b).collect());
        } else {
            bands.push(g.clone());
        }
    }
    bands
}

/// Laplacian pyramid loss `Σ_i 2^i · mean|Lap_i(pred) − Lap_i(gt)|` with a
/// 5-tap binomial kernel, stride-2 downsampling, and reflect padding.
///
/// With `levels = 1` this reduces to [`l1_matte_loss`].
pub fn laplacian_pyramid_loss(pred: &AlphaMatte, gt: &AlphaMatte, levels: usize) -> Result<f64> {
    Ok(laplacian_pyramid_loss_with_grad(pred, gt, levels)?.0)
}

/// Loss plus gradient with respect to the prediction; the pyramid is linear,
/// so the gradient is the adjoint applied to the per-band sign maps.
pub fn laplacian_pyramid_loss_with_grad(
    pred: &AlphaMatte,
    gt: &AlphaMatte,
    levels: usize,
) -> Result<(f64, Vec<f64>)> {
    check_same_dims(pred, gt)?;
    if levels == 0 {
        return Err(Error::InvalidArgument("levels must be at least 1".into()));
    }
    let min_dim = 1usize << (levels - 1);
    if pred.width < min_dim || pred.height < min_dim {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} too small for {} pyramid levels (needs at least {min_dim} per axis)",
            pred.width, pred.height, levels
        )));
    }
    let diff: Vec<f64> = pred
        .values
        .iter()
        .zip(&gt.values)
        .map(|(p, g)| p - g)
        .collect();
    let pyr = build_gaussian_pyramid(diff, pred.width, pred.height, levels);
    let bands = laplacian_bands(&pyr);

    let mut loss = 0.0;
    let mut band_grads: Vec<Vec<f64>> = Vec::with_capacity(levels);
    for (i, band) in bands.iter().enumerate() {
        let weight = (1u64 << i) as f64;
        let n = band.len() as f64;
        loss += weight * band.iter().map(|v| v.abs()).sum::<f64>() / n;
        band_grads.push(
            band.iter()
                .map(|v| {
                    if *v == 0.0 {
                        0.0
                    } else {
                        weight * v.signum() / n
                    }
                })
                .collect(),
        );
    }

    // Backward through the linear pyramid.
    let mut level_grads: Vec<Vec<f64>> = pyr
        .levels
        .iter()
        .map(|(v, _, _)| vec![0.0; v.len()])
        .collect();
    for i in 0..levels {
        let (_, w, h) = pyr.levels[i];
        if i + 1 < levels {
            let (_, wn, hn) = pyr.levels[i + 1];
            for (acc, g) in level_grads[i].iter_mut().zip(&band_grads[i]) {
                *acc += g;
            }
            let neg: Vec<f64> = band_grads[i].iter().map(|g| -g).collect();
            let up_back = upsample_adjoint(&neg, wn, hn, w, h);
            for (acc, g) in level_grads[i + 1].iter_mut().zip(&up_back) {
                *acc += g;
            }
        } else {
            for (acc, g) in level_grads[i].iter_mut().zip(&band_grads[i]) {
                *acc += g;
            }
        }
    }
    for i in (1..levels).rev() {
        let (_, w, h) = pyr.levels[i - 1];
        let down_back = downsample_adjoint(&level_grads[i], w, h);
        for (acc, g) in level_grads[i - 1].iter_mut().zip(&down_back) {
            *acc += g;
        }
    }
    let grad = level_grads.into_iter().next().expect("at least one level");
    Ok((loss, grad))
}

/// Pixel-mean binary cross-entropy with predictions clamped to
/// `[BCE_CLAMP, 1 − BCE_CLAMP]`.
pub fn bce_loss(pred: &AlphaMatte, gt: &BinaryMask) -> Result<f64> {
    Ok(bce_loss_with_grad(pred, gt)?.0)
}

pub fn bce_loss_with_grad(pred: &AlphaMatte, gt: &BinaryMask) -> Result<(f64, Vec<f64>)> {
    check_same_dims(pred, gt)?;
    let n = pred.values.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.values.len()];
    for (i, (&p_raw, &g)) in pred.values.iter().zip(&gt.values).enumerate() {
        let p = p_raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss += -(g * p.ln() + (1.0 - g) * (1.0 - p).ln());
        if p_raw > BCE_CLAMP && p_raw < 1.0 - BCE_CLAMP {
            grad[i] = (-g / p + (1.0 - g) / (1.0 - p)) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Soft IoU loss `1 − (Σ p·g + s) / (Σp + Σg − Σ p·g + s)` with
/// `s = IOU_SMOOTHING`; lies in `[0, 1]` and defines the empty-empty case
/// as 0.
pub fn iou_loss(pred: &AlphaMatte, gt: &BinaryMask) -> Result<f64> {
    Ok(iou_loss_with_grad(pred, gt)?.0)
}

pub fn iou_loss_with_grad(pred: &AlphaMatte, gt: &BinaryMask) -> Result<(f64, Vec<f64>)> {
    check_same_dims(pred, gt)?;
    let s = IOU_SMOOTHING;
    let mut inter = 0.0;
    let mut sum_p = 0.0;
    let mut sum_g = 0.0;
    for (&p, &g) in pred.values.iter().zip(&gt.values) {
        inter += p * g;
        sum_p += p;
        sum_g += g;
    }
    let num = inter + s;
    let den = sum_p + sum_g - inter + s;
    let loss = 1.0 - num / den;
    let grad = pred
        .values
        .iter()
        .zip(&gt.values)
        .map(|(_, &g)| -(g * den - num * (1.0 - g)) / (den * den))
        .collect();
    Ok((loss, grad))
}

/// Per-component weights for the total objective; the written objective is
/// an unweighted sum, so every default is 1.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub kd: f64,
    pub adv: f64,
    pub ot: f64,
    pub head: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            kd: 1.0,
            adv: 1.0,
            ot: 1.0,
            head: 1.0,
        }
    }
}

impl LossWeights {
    pub fn combine(&self, kd: f64, adv: f64, ot: f64, head: f64) -> Result<f64> {
        check_component("kd", kd)?;
        check_component("adv", adv)?;
        check_component("ot", ot)?;
        check_component("head", head)?;
        Ok(self.kd * kd + self.adv * adv + self.ot * ot + self.head * head)
    }
}

fn check_component(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "loss component '{name}' is non-finite ({v})"
        )));
    }
    Ok(())
}

/// Unweighted total objective `L_kd + L_adv + L_OT + L_head`; errors identify
/// which component is non-finite.
pub fn total_loss(kd: f64, adv: f64, ot: f64, head: f64) -> Result<f64> {
    LossWeights::default().combine(kd, adv, ot, head)
}
