//! Depth-aware distillation: threshold-split depth weights, context-token
//! meta-net projection, and the plain and depth-weighted feature
//! distillation losses.

use crate::adversarial::{Activation, Layer, TinyNet, TinyNetGrads};
use crate::error::{Error, Result};
use crate::numerics::{kl_divergence, softmax, DenseMatrix};

/// Default foreground/background depth threshold.
pub const DEFAULT_DELTA: f64 = 0.25;

/// Single-channel depth map with values normalized to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height || values.is_empty() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: width * height,
            });
        }
        if values
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::InvalidArgument(
                "depth values must be finite and in [0, 1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Rescales arbitrary nonnegative data into `[0, 1]` by its maximum.
    /// An all-zero map stays zero.
    pub fn from_raw(width: usize, height: usize, raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "raw depth values must be finite and nonnegative".into(),
            ));
        }
        let max = raw.iter().cloned().fold(0.0f64, f64::max);
        let values = if max > 0.0 {
            raw.into_iter().map(|v| v / max).collect()
        } else {
            raw
        };
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0f64, f64::max)
    }
}

/// Pixel-resolution foreground/background weights before patch pooling.
#[derive(Debug, Clone)]
pub struct PixelDepthWeights {
    pub width: usize,
    pub height: usize,
    pub d_plus: Vec<f64>,
    pub d_minus: Vec<f64>,
}

/// Patch-resolution weight pair produced by average-pooling the pixel
/// weights; `delta` records the threshold that generated them.
#[derive(Debug, Clone)]
pub struct DepthWeightPair {
    pub grid_h: usize,
    pub grid_w: usize,
    pub d_plus: Vec<f64>,
    pub d_minus: Vec<f64>,
    pub delta: f64,
}

impl DepthWeightPair {
    pub fn uniform_foreground(grid_h: usize, grid_w: usize, delta: f64) -> Self {
        Self {
            grid_h,
            grid_w,
            d_plus: vec![1.0; grid_h * grid_w],
            d_minus: vec![0.0; grid_h * grid_w],
            delta,
        }
    }
}

/// Splits a depth map into foreground/background weights:
///
/// `d+ = Depth/max(Depth)` where `Depth > δ`, else 0;
/// `d− = (δ − Depth)/δ` where `Depth ≤ δ`, else 0.
pub fn compute_pixel_depth_weights(depth: &DepthMap, delta: f64) -> Result<PixelDepthWeights> {
    if delta <= 0.0 || delta >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let max = depth.max();
    let mut d_plus = vec![0.0; depth.values.len()];
    let mut d_minus = vec![0.0; depth.values.len()];
    for (i, &d) in depth.values.iter().enumerate() {
        if d > delta {
            d_plus[i] = d / max;
        } else {
            d_minus[i] = (delta - d) / delta;
        }
    }
    Ok(PixelDepthWeights {
        width: depth.width,
        height: depth.height,
        d_plus,
        d_minus,
    })
}

/// Pixel weights average-pooled onto a patch grid.
///
/// With `strict` set, a depth map whose foreground partition is empty
/// (no pixel above `delta`) is rejected; otherwise `d+ ≡ 0` is returned.
pub fn compute_depth_weights(
    depth: &DepthMap,
    delta: f64,
    patch_grid: (usize, usize),
    strict: bool,
) -> Result<DepthWeightPair> {
    let (grid_h, grid_w) = patch_grid;
    if grid_h == 0 || grid_w == 0 || depth.height % grid_h != 0 || depth.width % grid_w != 0 {
        return Err(Error::NotDivisible {
            width: depth.width,
            height: depth.height,
            grid_h,
            grid_w,
        });
    }
    let pixel = compute_pixel_depth_weights(depth, delta)?;
    if strict && pixel.d_plus.iter().all(|v| *v == 0.0) {
        return Err(Error::EmptyForeground);
    }
    let ph = depth.height / grid_h;
    let pw = depth.width / grid_w;
    let pool = |vals: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; grid_h * grid_w];
        for gr in 0..grid_h {
            for gc in 0..grid_w {
                let mut sum = 0.0;
                for y in gr * ph..(gr + 1) * ph {
                    for x in gc * pw..(gc + 1) * pw {
                        sum += vals[y * depth.width + x];
                    }
                }
                out[gr * grid_w + gc] = sum / (ph * pw) as f64;
            }
        }
        out
    };
    Ok(DepthWeightPair {
        grid_h,
        grid_w,
        d_plus: pool(&pixel.d_plus),
        d_minus: pool(&pixel.d_minus),
        delta,
    })
}

/// A patch grid of feature tokens: `grid_h·grid_w` rows of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    grid_h: usize,
    grid_w: usize,
    tokens: DenseMatrix,
}

impl FeatureGrid {
    pub fn new(grid_h: usize, grid_w: usize, tokens: DenseMatrix) -> Result<Self> {
        if tokens.rows() != grid_h * grid_w {
            return Err(Error::ShapeMismatch {
                left: format!("{} tokens", tokens.rows()),
                right: format!("{grid_h}x{grid_w} grid"),
            });
        }
        Ok(Self {
            grid_h,
            grid_w,
            tokens,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn token_count(&self) -> usize {
        self.tokens.rows()
    }

    pub fn tokens(&self) -> &DenseMatrix {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> &[f64] {
        self.tokens.row(i)
    }

    pub fn same_shape(&self, other: &FeatureGrid) -> bool {
        self.grid_h == other.grid_h && self.grid_w == other.grid_w && self.dim() == other.dim()
    }
}

/// Projection meta-net `τ(F + ε)`: a learnable context token added before a
/// Linear-ReLU-Linear body that maps teacher dimension to student dimension.
#[derive(Debug, Clone)]
pub struct MetaNet {
    context_token: Vec<f64>,
    body: TinyNet,
}

/// Gradients for a [`MetaNet`], context token first.
#[derive(Debug, Clone)]
pub struct MetaNetGrads {
    pub context: Vec<f64>,
    pub body: TinyNetGrads,
}

impl MetaNetGrads {
    pub fn zeros_like(net: &MetaNet) -> Self {
        Self {
            context: vec![0.0; net.context_token.len()],
            body: TinyNetGrads::zeros_like(&net.body),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.context.clone();
        out.extend(self.body.to_flat());
        out
    }
}

impl MetaNet {
    pub fn new(context_token: Vec<f64>, body: TinyNet) -> Result<Self> {
        if body.layers().len() != 2
            || body.layers()[0].activation != Activation::Rectifier
            || body.layers()[1].activation != Activation::None
        {
            return Err(Error::InvalidArgument(
                "meta-net body must be Linear-ReLU-Linear".into(),
            ));
        }
        if body.input_dim() != context_token.len() {
            return Err(Error::LengthMismatch {
                left: context_token.len(),
                right: body.input_dim(),
            });
        }
        Ok(Self {
            context_token,
            body,
        })
    }

    /// Random body, zero context token.
    pub fn seeded(
        teacher_dim: usize,
        hidden: usize,
        student_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let body = TinyNet::seeded(
            &[teacher_dim, hidden, student_dim],
            &[Activation::Rectifier, Activation::None],
            seed,
            0.2,
        )?;
        Self::new(vec![0.0; teacher_dim], body)
    }

    /// Identity body (requires square layers), zero context; used by tests.
    pub fn identity(dim: usize) -> Result<Self> {
        let eye = DenseMatrix::from_fn(dim, dim, |r, c| if r == c { 1.0 } else { 0.0 })?;
        let body = TinyNet::new(vec![
            Layer::new(eye.clone(), vec![0.0; dim], Activation::Rectifier)?,
            Layer::new(eye, vec![0.0; dim], Activation::None)?,
        ])?;
        Self::new(vec![0.0; dim], body)
    }

    pub fn input_dim(&self) -> usize {
        self.body.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.body.output_dim()
    }

    pub fn context_token(&self) -> &[f64] {
        &self.context_token
    }

    pub fn context_token_mut(&mut self) -> &mut [f64] {
        &mut self.context_token
    }

    pub fn body(&self) -> &TinyNet {
        &self.body
    }

    pub fn project(&self, token: &[f64]) -> Result<Vec<f64>> {
        if token.len() != self.input_dim() {
            return Err(Error::LengthMismatch {
                left: token.len(),
                right: self.input_dim(),
            });
        }
        let shifted: Vec<f64> = token
            .iter()
            .zip(&self.context_token)
            .map(|(t, e)| t + e)
            .collect();
        self.body.forward(&shifted)
    }

    pub fn param_count(&self) -> usize {
        self.context_token.len() + self.body.param_count()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = self.context_token.clone();
        out.extend(self.body.params_flat());
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.param_count(),
            });
        }
        let d = self.context_token.len();
        self.context_token.copy_from_slice(&params[..d]);
        self.body.set_params_flat(&params[d..])
    }

    pub fn apply_gradient_step(&mut self, grads: &MetaNetGrads, lr: f64) {
        for (c, g) in self.context_token.iter_mut().zip(&grads.context) {
            *c -= lr * g;
        }
        self.body.apply_gradient_step(&grads.body, lr);
    }
}

/// Projects every token of a teacher grid through the meta-net: `τ(F_T + ε)`.
pub fn meta_project(teacher: &FeatureGrid, net: &MetaNet) -> Result<FeatureGrid> {
    if teacher.dim() != net.input_dim() {
        return Err(Error::LengthMismatch {
            left: teacher.dim(),
            right: net.input_dim(),
        });
    }
    let mut data = Vec::with_capacity(teacher.token_count() * net.output_dim());
    for i in 0..teacher.token_count() {
        data.extend(net.project(teacher.token(i))?);
    }
    FeatureGrid::new(
        teacher.grid_h(),
        teacher.grid_w(),
        DenseMatrix::from_vec(teacher.token_count(), net.output_dim(), data)?,
    )
}

/// Token-wise distillation distance: mean over tokens of
/// `KL(softmax(student/T) ‖ softmax(teacher/T))`.
pub fn feature_distance(
    student: &FeatureGrid,
    teacher: &FeatureGrid,
    temperature: f64,
) -> Result<f64> {
    if !student.same_shape(teacher) {
        return Err(Error::ShapeMismatch {
            left: format!(
                "{}x{}x{}",
                student.grid_h(),
                student.grid_w(),
                student.dim()
            ),
            right: format!(
                "{}x{}x{}",
                teacher.grid_h(),
                teacher.grid_w(),
                teacher.dim()
            ),
        });
    }
    let mut total = 0.0;
    for i in 0..student.token_count() {
        let p = softmax(student.token(i), temperature)?;
        let q = softmax(teacher.token(i), temperature)?;
        total += kl_divergence(&p, &q)?;
    }
    Ok(total / student.token_count() as f64)
}

/// Plain two-image distillation loss
/// `D(F_S^A, τ(F_T^A)) + D(F_S^B, τ(F_T^B))` over pre-projected teachers.
pub fn kd_loss_plain(
    student_a: &FeatureGrid,
    student_b: &FeatureGrid,
    teacher_a_proj: &FeatureGrid,
    teacher_b_proj: &FeatureGrid,
    temperature: f64,
) -> Result<f64> {
    Ok(feature_distance(student_a, teacher_a_proj, temperature)?
        + feature_distance(student_b, teacher_b_proj, temperature)?)
}

/// Per-token KL value and its two-sided logit gradients.
///
/// With `p = softmax(s/T)` fixed-side teacher `q = softmax(y/T)`:
/// `∂KL/∂s_k = p_k (ln p_k − ln q_k − KL)/T` and `∂KL/∂y_k = (q_k − p_k)/T`.
fn kl_token_with_grads(
    student: &[f64],
    teacher: &[f64],
    temperature: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let p = softmax(student, temperature)?;
    let q = softmax(teacher, temperature)?;
    let kl = kl_divergence(&p, &q)?;
    let mut ds = vec![0.0; student.len()];
    let mut dy = vec![0.0; teacher.len()];
    for k in 0..p.len() {
        let log_ratio = if p[k] > 0.0 {
            (p[k] / q[k].max(crate::numerics::KL_EPS)).ln()
        } else {
            0.0
        };
        ds[k] = p[k] * (log_ratio - kl) / temperature;
        dy[k] = (q[k] - p[k]) / temperature;
    }
    Ok((kl, ds, dy))
}

/// [`feature_distance`] plus gradients with respect to both grids' tokens.
pub fn feature_distance_with_grads(
    student: &FeatureGrid,
    teacher: &FeatureGrid,
    temperature: f64,
) -> Result<(f64, DenseMatrix, DenseMatrix)> {
    if !student.same_shape(teacher) {
        return Err(Error::ShapeMismatch {
            left: format!("{}x{}", student.grid_h(), student.grid_w()),
            right: format!("{}x{}", teacher.grid_h(), teacher.grid_w()),
        });
    }
    let n = student.token_count() as f64;
    let mut total = 0.0;
    let mut gs = DenseMatrix::zeros(student.token_count(), student.dim());
    let mut gt = DenseMatrix::zeros(teacher.token_count(), teacher.dim());
    for i in 0..student.token_count() {
        let (kl, ds, dy) = kl_token_with_grads(student.token(i), teacher.token(i), temperature)?;
        total += kl;
        for (c, v) in ds.iter().enumerate() {
            gs.set(i, c, v / n);
        }
        for (c, v) in dy.iter().enumerate() {
            gt.set(i, c, v / n);
        }
    }
    Ok((total / n, gs, gt))
}

/// Loss plus gradients from one depth-aware evaluation.
#[derive(Debug, Clone)]
pub struct DepthKdOutcome {
    pub loss: f64,
    pub student_grads: DenseMatrix,
    pub fg_net_grads: MetaNetGrads,
    pub bg_net_grads: MetaNetGrads,
}

/// Depth-aware distillation for one image:
/// foreground branch `D(d₊ × F_S, d₊ × τ₊(F_T + ε₊))` plus the mirrored
/// background branch.
///
/// Each token's KL is weighted by its `d` value and the branch is normalized
/// by `Σd` (an all-zero branch contributes 0), so zero-weight tokens are
/// removed rather than flattened to uniform distributions.
pub fn kd_loss_depth_aware(
    student: &FeatureGrid,
    teacher: &FeatureGrid,
    weights: &DepthWeightPair,
    fg_net: &MetaNet,
    bg_net: &MetaNet,
    temperature: f64,
) -> Result<f64> {
    Ok(
        kd_loss_depth_aware_with_grads(student, teacher, weights, fg_net, bg_net, temperature)?
            .loss,
    )
}

pub fn kd_loss_depth_aware_with_grads(
    student: &FeatureGrid,
    teacher: &FeatureGrid,
    weights: &DepthWeightPair,
    fg_net: &MetaNet,
    bg_net: &MetaNet,
    temperature: f64,
) -> Result<DepthKdOutcome> {
    if weights.grid_h != student.grid_h()
        || weights.grid_w != student.grid_w()
        || student.grid_h() != teacher.grid_h()
        || student.grid_w() != teacher.grid_w()
    {
        return Err(Error::ShapeMismatch {
            left: format!("{}x{} weights", weights.grid_h, weights.grid_w),
            right: format!("{}x{} features", student.grid_h(), student.grid_w()),
        });
    }
    let mut outcome = DepthKdOutcome {
        loss: 0.0,
        student_grads: DenseMatrix::zeros(student.token_count(), student.dim()),
        fg_net_grads: MetaNetGrads::zeros_like(fg_net),
        bg_net_grads: MetaNetGrads::zeros_like(bg_net),
    };
    let fg = branch_with_grads(
        student,
        teacher,
        &weights.d_plus,
        fg_net,
        temperature,
        &mut outcome.fg_net_grads,
        &mut outcome.student_grads,
    )?;
    let bg = branch_with_grads(
        student,
        teacher,
        &weights.d_minus,
        bg_net,
        temperature,
        &mut outcome.bg_net_grads,
        &mut outcome.student_grads,
    )?;
    outcome.loss = fg + bg;
    Ok(outcome)
}

fn branch_with_grads(
    student: &FeatureGrid,
    teacher: &FeatureGrid,
    d: &[f64],
    net: &MetaNet,
    temperature: f64,
    net_grads: &mut MetaNetGrads,
    student_grads: &mut DenseMatrix,
) -> Result<f64> {
    if teacher.dim() != net.input_dim() {
        return Err(Error::LengthMismatch {
            left: teacher.dim(),
            right: net.input_dim(),
        });
    }
    let weight_sum: f64 = d.iter().sum();
    if weight_sum == 0.0 {
        return Ok(0.0);
    }
    let mut branch = 0.0;
    for i in 0..student.token_count() {
        if d[i] == 0.0 {
            continue;
        }
        let w = d[i] / weight_sum;
        let shifted: Vec<f64> = teacher
            .token(i)
            .iter()
            .zip(net.context_token())
            .map(|(t, e)| t + e)
            .collect();
        let (projected, tape) = net.body().forward_cached(&shifted)?;
        let (kl, ds, dy) = kl_token_with_grads(student.token(i), &projected, temperature)?;
        branch += w * kl;
        for (c, v) in ds.iter().enumerate() {
            student_grads.set(i, c, student_grads.get(i, c) + w * v);
        }
        let upstream: Vec<f64> = dy.iter().map(|v| w * v).collect();
        let input_grad = net
            .body()
            .backward_into(&tape, &upstream, &mut net_grads.body, 1.0);
        // x = t + ε, so the input gradient flows to the context token; the
        // teacher itself is frozen.
        for (g, dx) in net_grads.context.iter_mut().zip(&input_grad) {
            *g += dx;
        }
    }
    Ok(branch)
}
