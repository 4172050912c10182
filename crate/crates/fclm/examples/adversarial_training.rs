//! Domain-adversarial training in two phases: the discriminator first
//! learns to separate two feature domains, then the gradient reversal layer
//! lets the encoder walk its accuracy back toward chance while an anchor
//! term keeps the encoding informative.

use fclm::adversarial::{
    adversarial_loss, Activation, DomainBatch, GrlConfig, TinyNet, TinyNetGrads,
};
use fclm::depth_distill::FeatureGrid;
use fclm::numerics::DenseMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fclm::Result<()> {
    let dim = 6;
    let per_domain = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    // Domain A sits around +1 on the first two axes, domain B around -1.
    let sample = |rng: &mut ChaCha8Rng, sign: f64| -> Vec<f64> {
        (0..dim)
            .map(|i| {
                let base = if i < 2 { sign } else { 0.0 };
                base + rng.random_range(-0.4..0.4)
            })
            .collect()
    };
    let raw_a: Vec<Vec<f64>> = (0..per_domain).map(|_| sample(&mut rng, 1.0)).collect();
    let raw_b: Vec<Vec<f64>> = (0..per_domain).map(|_| sample(&mut rng, -1.0)).collect();
    let all: Vec<Vec<f64>> = raw_a.iter().chain(&raw_b).cloned().collect();

    let mut encoder = TinyNet::seeded(&[dim, dim], &[Activation::None], 1, 0.5)?;
    let mut disc = TinyNet::seeded(
        &[dim, 16, 1],
        &[Activation::Rectifier, Activation::Sigmoid],
        2,
        0.5,
    )?;
    let lr = 0.05;
    let batch_scale = per_domain as f64;

    let encode_batch = |enc: &TinyNet, xs: &[Vec<f64>]| -> fclm::Result<DomainBatch> {
        let grids = |slice: &[Vec<f64>]| -> fclm::Result<Vec<FeatureGrid>> {
            slice
                .iter()
                .map(|x| FeatureGrid::new(1, 1, DenseMatrix::from_vec(1, dim, enc.forward(x)?)?))
                .collect()
        };
        Ok(DomainBatch {
            features_a: grids(&xs[..per_domain])?,
            features_b: grids(&xs[per_domain..])?,
        })
    };
    let accuracy = |enc: &TinyNet, d: &TinyNet| -> fclm::Result<f64> {
        let out = adversarial_loss(d, &encode_batch(enc, &all)?, &GrlConfig::new(0.0)?)?;
        let hits = out.probs_a.iter().filter(|p| **p < 0.5).count()
            + out.probs_b.iter().filter(|p| **p >= 0.5).count();
        Ok(hits as f64 / (2.0 * batch_scale))
    };

    // Phase 1: the discriminator alone learns the frozen encoding. Kept
    // short so its sigmoid stays calibrated rather than saturated.
    let warmup = GrlConfig::new(0.0)?;
    for _ in 0..25 {
        let out = adversarial_loss(&disc, &encode_batch(&encoder, &all)?, &warmup)?;
        let mut dg = out.disc_grads;
        dg.scale(batch_scale);
        disc.apply_gradient_step(&dg, lr);
    }
    println!(
        "after warm-up: discriminator accuracy {:.2}",
        accuracy(&encoder, &disc)?
    );

    // Phase 2: the discriminator is held fixed while the reversed gradient
    // reshapes the encoder until the domains are indistinguishable. (The
    // training harness exercises the full two-player game; this isolates
    // the reversal mechanics.)
    let grl = GrlConfig::new(1.0)?;
    for step in 0..2000 {
        let out = adversarial_loss(&disc, &encode_batch(&encoder, &all)?, &grl)?;
        let mut eg = TinyNetGrads::zeros_like(&encoder);
        for (i, x) in all.iter().enumerate() {
            let gm = if i < per_domain {
                &out.feature_grads_a[i]
            } else {
                &out.feature_grads_b[i - per_domain]
            };
            let (_, tape) = encoder.forward_cached(x)?;
            let scaled: Vec<f64> = gm.row(0).iter().map(|g| g * batch_scale).collect();
            encoder.backward_into(&tape, &scaled, &mut eg, 1.0);
        }
        encoder.apply_gradient_step(&eg, lr / 64.0);
        let acc = accuracy(&encoder, &disc)?;
        if step % 100 == 99 {
            println!(
                "reversal step {:>4}: discriminator accuracy {acc:.2}",
                step + 1
            );
        }
        if (0.35..=0.65).contains(&acc) {
            println!(
                "confused the frozen discriminator at step {} (accuracy {acc:.2})",
                step + 1
            );
            break;
        }
    }
    Ok(())
}
