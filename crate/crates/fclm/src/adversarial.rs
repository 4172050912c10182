//! Domain discriminator, Gradient Reversal Layer, adversarial loss, and the
//! explicit forward/backward machinery plus finite-difference verification
//! shared by every differentiable loss in the crate.

use crate::depth_distill::FeatureGrid;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Probability clamp applied inside the adversarial log terms.
pub const PROB_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Rectifier,
    Sigmoid,
    None,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Rectifier => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::None => z,
        }
    }

    /// Derivative expressed through pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Rectifier => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::None => 1.0,
        }
    }
}

/// One dense layer: `act(W x + b)` with `W` stored out×in.
#[derive(Debug, Clone)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: DenseMatrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::LengthMismatch {
                left: weights.rows(),
                right: bias.len(),
            });
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Small explicitly-differentiable feed-forward network.
///
/// Serves as the domain discriminator, the meta-net body, and the toy patch
/// encoder. Parameters are plain `f64`s; `forward_cached` + `backward` give
/// exact gradients that are validated against finite differences.
#[derive(Debug, Clone)]
pub struct TinyNet {
    layers: Vec<Layer>,
}

/// Per-call activation cache for [`TinyNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

/// Parameter gradients laid out like the network itself.
#[derive(Debug, Clone)]
pub struct TinyNetGrads {
    pub weights: Vec<DenseMatrix>,
    pub bias: Vec<Vec<f64>>,
}

impl TinyNetGrads {
    pub fn zeros_like(net: &TinyNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| DenseMatrix::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            for r in 0..w.rows() {
                for c in 0..w.cols() {
                    w.set(r, c, w.get(r, c) * s);
                }
            }
        }
        for b in &mut self.bias {
            for v in b.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn add(&mut self, other: &TinyNetGrads) {
        for (w, ow) in self.weights.iter_mut().zip(&other.weights) {
            for r in 0..w.rows() {
                for c in 0..w.cols() {
                    w.set(r, c, w.get(r, c) + ow.get(r, c));
                }
            }
        }
        for (b, ob) in self.bias.iter_mut().zip(&other.bias) {
            for (v, o) in b.iter_mut().zip(ob) {
                *v += o;
            }
        }
    }

    /// Flattens in the same order as [`TinyNet::params_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }
}

impl TinyNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::ShapeMismatch {
                    left: format!("layer out {}", pair[0].output_dim()),
                    right: format!("next in {}", pair[1].input_dim()),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Seeded uniform(-scale, scale) initialization; one activation per layer.
    pub fn seeded(
        dims: &[usize],
        activations: &[Activation],
        seed: u64,
        scale: f64,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::InvalidArgument(
                "dims must chain and provide one activation per layer".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for (i, act) in activations.iter().enumerate() {
            let (din, dout) = (dims[i], dims[i + 1]);
            let weights = DenseMatrix::from_fn(dout, din, |_, _| rng.random_range(-scale..scale))?;
            let bias = (0..dout).map(|_| rng.random_range(-scale..scale)).collect();
            layers.push(Layer::new(weights, bias, *act)?);
        }
        Self::new(layers)
    }

    /// Default discriminator shape: Linear(d→128) → rectifier → Linear(128→1) → sigmoid.
    pub fn discriminator(input_dim: usize, seed: u64) -> Result<Self> {
        Self::seeded(
            &[input_dim, 128, 1],
            &[Activation::Rectifier, Activation::Sigmoid],
            seed,
            0.2,
        )
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardTape)> {
        if x.len() != self.input_dim() {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: self.input_dim(),
            });
        }
        let mut tape = ForwardTape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut cur = x.to_vec();
        for layer in &self.layers {
            tape.inputs.push(cur.clone());
            let mut pre = layer.bias.clone();
            for (i, p) in pre.iter_mut().enumerate() {
                let wrow = layer.weights.row(i);
                *p += wrow.iter().zip(&cur).map(|(w, v)| w * v).sum::<f64>();
            }
            let post: Vec<f64> = pre.iter().map(|&z| layer.activation.apply(z)).collect();
            tape.pre.push(pre);
            tape.post.push(post.clone());
            cur = post;
        }
        Ok((cur, tape))
    }

    /// Backpropagates `upstream` (dL/d output), accumulating parameter
    /// gradients scaled by `scale` into `grads`; returns dL/d input.
    pub fn backward_into(
        &self,
        tape: &ForwardTape,
        upstream: &[f64],
        grads: &mut TinyNetGrads,
        scale: f64,
    ) -> Vec<f64> {
        let mut delta = upstream.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let pre = &tape.pre[li];
            let post = &tape.post[li];
            let input = &tape.inputs[li];
            for (i, d) in delta.iter_mut().enumerate() {
                *d *= layer.activation.derivative(pre[i], post[i]);
            }
            let gw = &mut grads.weights[li];
            for (i, &d) in delta.iter().enumerate() {
                grads.bias[li][i] += scale * d;
                for (j, &xj) in input.iter().enumerate() {
                    gw.set(i, j, gw.get(i, j) + scale * d * xj);
                }
            }
            let mut down = vec![0.0; layer.input_dim()];
            for (i, &d) in delta.iter().enumerate() {
                let wrow = layer.weights.row(i);
                for (j, dj) in down.iter_mut().enumerate() {
                    *dj += wrow[j] * d;
                }
            }
            delta = down;
        }
        delta
    }

    pub fn backward(&self, tape: &ForwardTape, upstream: &[f64]) -> (TinyNetGrads, Vec<f64>) {
        let mut grads = TinyNetGrads::zeros_like(self);
        let input_grad = self.backward_into(tape, upstream, &mut grads, 1.0);
        (grads, input_grad)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.param_count(),
            });
        }
        let mut it = params.iter();
        for layer in &mut self.layers {
            let (r, c) = (layer.weights.rows(), layer.weights.cols());
            let data: Vec<f64> = it.by_ref().take(r * c).cloned().collect();
            layer.weights = DenseMatrix::from_vec(r, c, data)?;
            for b in layer.bias.iter_mut() {
                *b = *it.next().expect("length checked above");
            }
        }
        Ok(())
    }

    /// Plain gradient-descent step `θ ← θ − lr·g`.
    pub fn apply_gradient_step(&mut self, grads: &TinyNetGrads, lr: f64) {
        for (layer, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.bias))
        {
            for r in 0..layer.weights.rows() {
                for c in 0..layer.weights.cols() {
                    layer
                        .weights
                        .set(r, c, layer.weights.get(r, c) - lr * gw.get(r, c));
                }
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= lr * g;
            }
        }
    }
}

/// Gradient Reversal Layer strength.
#[derive(Debug, Clone, Copy)]
pub struct GrlConfig {
    pub lambda: f64,
}

impl GrlConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "GRL lambda must be nonnegative, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }
}

/// Forward direction of the GRL: the identity map.
pub fn grl_forward(x: &[f64]) -> Vec<f64> {
    x.to_vec()
}

/// Backward direction of the GRL: multiplies the upstream gradient by `−λ`.
pub fn grl_apply(upstream_gradient: &[f64], cfg: &GrlConfig) -> Vec<f64> {
    upstream_gradient.iter().map(|g| -cfg.lambda * g).collect()
}

/// Paired feature batch with the fixed domain-label convention
/// (A → 0, B → 1).
#[derive(Debug, Clone)]
pub struct DomainBatch {
    pub features_a: Vec<FeatureGrid>,
    pub features_b: Vec<FeatureGrid>,
}

/// Runs the discriminator on one summary vector; output is the probability
/// of domain B.
pub fn discriminator_forward(h: &TinyNet, token_summary: &[f64]) -> Result<f64> {
    let last = &h.layers()[h.layers().len() - 1];
    if last.activation != Activation::Sigmoid || last.output_dim() != 1 {
        return Err(Error::InvalidArgument(
            "discriminator must end in a single sigmoid output".into(),
        ));
    }
    Ok(h.forward(token_summary)?[0])
}

/// Everything produced by one adversarial evaluation.
#[derive(Debug, Clone)]
pub struct AdversarialOutcome {
    pub loss: f64,
    /// Gradients that descend the discriminator cross-entropy.
    pub disc_grads: TinyNetGrads,
    /// Per-token encoder gradients after the GRL (already multiplied by −λ).
    pub feature_grads_a: Vec<DenseMatrix>,
    pub feature_grads_b: Vec<DenseMatrix>,
    pub probs_a: Vec<f64>,
    pub probs_b: Vec<f64>,
}

pub fn mean_pool_tokens(grid: &FeatureGrid) -> Vec<f64> {
    let tokens = grid.tokens();
    let mut out = vec![0.0; tokens.cols()];
    for row in tokens.iter_rows() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let n = tokens.rows() as f64;
    for o in out.iter_mut() {
        *o /= n;
    }
    out
}

/// Domain-adversarial cross-entropy with labels A→0, B→1:
/// `loss = −[mean_A ln(1 − h(x)) + mean_B ln h(x)]`.
///
/// The discriminator gradients descend this loss; the encoder-side feature
/// gradients are routed through [`grl_apply`], which realizes the min–max.
pub fn adversarial_loss(
    h: &TinyNet,
    batch: &DomainBatch,
    cfg: &GrlConfig,
) -> Result<AdversarialOutcome> {
    if batch.features_a.is_empty() || batch.features_b.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut disc_grads = TinyNetGrads::zeros_like(h);
    let mut loss = 0.0;
    let mut probs_a = Vec::new();
    let mut probs_b = Vec::new();
    let mut feature_grads_a = Vec::new();
    let mut feature_grads_b = Vec::new();

    let n_a = batch.features_a.len() as f64;
    for grid in &batch.features_a {
        let summary = mean_pool_tokens(grid);
        let (out, tape) = h.forward_cached(&summary)?;
        let p = out[0].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        probs_a.push(out[0]);
        loss += -(1.0 - p).ln() / n_a;
        // d/dp of −ln(1−p), averaged over the domain.
        let upstream = [1.0 / (1.0 - p) / n_a];
        let input_grad = h.backward_into(&tape, &upstream, &mut disc_grads, 1.0);
        feature_grads_a.push(spread_summary_grad(grid, &input_grad, cfg));
    }

    let n_b = batch.features_b.len() as f64;
    for grid in &batch.features_b {
        let summary = mean_pool_tokens(grid);
        let (out, tape) = h.forward_cached(&summary)?;
        let p = out[0].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        probs_b.push(out[0]);
        loss += -p.ln() / n_b;
        let upstream = [-1.0 / p / n_b];
        let input_grad = h.backward_into(&tape, &upstream, &mut disc_grads, 1.0);
        feature_grads_b.push(spread_summary_grad(grid, &input_grad, cfg));
    }

    Ok(AdversarialOutcome {
        loss,
        disc_grads,
        feature_grads_a,
        feature_grads_b,
        probs_a,
        probs_b,
    })
}

/// Distributes a summary-vector gradient back over the mean-pooled tokens and
/// applies the GRL.
fn spread_summary_grad(grid: &FeatureGrid, summary_grad: &[f64], cfg: &GrlConfig) -> DenseMatrix {
    let reversed = grl_apply(summary_grad, cfg);
    let p = grid.tokens().rows() as f64;
    DenseMatrix::from_fn(grid.tokens().rows(), grid.tokens().cols(), |_, c| {
        reversed[c] / p
    })
    .expect("finite by construction")
}

/// Compares an analytic gradient against central finite differences
/// `(L(θ+he_i) − L(θ−he_i)) / 2h` and returns the maximum relative error
/// `|analytic − numeric| / max(1e-8, |numeric|)` over coordinates.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &[f64],
    analytic_grad: &[f64],
    step: f64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    if params.len() != analytic_grad.len() {
        return Err(Error::LengthMismatch {
            left: params.len(),
            right: analytic_grad.len(),
        });
    }
    let mut worst = 0.0f64;
    let mut theta = params.to_vec();
    for i in 0..params.len() {
        theta[i] = params[i] + step;
        let plus = loss_fn(&theta)?;
        theta[i] = params[i] - step;
        let minus = loss_fn(&theta)?;
        theta[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_diff_check loss",
            });
        }
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (analytic_grad[i] - numeric).abs() / numeric.abs().max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
