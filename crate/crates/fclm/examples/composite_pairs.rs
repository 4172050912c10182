//! Paired-foreground synthesis: composite one foreground over two drawn
//! backgrounds and verify the compositing algebra on the result.

use fclm::compositor::{make_pair, RgbImage};
use fclm::pred_loss::AlphaMatte;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fclm::Result<()> {
    let size = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let fg = RgbImage::from_fn(size, size, |_, _| {
        [rng.random_range(150..250), rng.random_range(60..120), 60]
    })?;
    let alpha = AlphaMatte::from_fn(size, size, |x, y| {
        let d = ((x as f64 - 12.0).powi(2) + (y as f64 - 12.0).powi(2)).sqrt();
        ((9.0 - d) / 2.0).clamp(0.0, 1.0)
    })?;
    let pool = vec![
        RgbImage::from_fn(size, size, |x, _| [(x * 10) as u8, 180, 120])?,
        RgbImage::from_fn(size, size, |_, y| [40, (y * 9) as u8, 200])?,
        RgbImage::from_fn(32, 30, |x, y| [((x + y) * 4) as u8, 90, 90])?,
    ];

    let pair = make_pair(&fg, &alpha, &pool, 2024)?;
    println!(
        "drew backgrounds {} and {} from a pool of {}",
        pair.background_a_id,
        pair.background_b_id,
        pool.len()
    );

    // Opaque pixels are identical across the pair by construction.
    let mut opaque = 0;
    let mut identical = 0;
    for y in 0..size {
        for x in 0..size {
            if pair.alpha.get(x, y) == 1.0 {
                opaque += 1;
                if pair.image_a.pixel(x, y) == pair.image_b.pixel(x, y) {
                    identical += 1;
                }
            }
        }
    }
    println!("opaque pixels identical across the pair: {identical}/{opaque}");
    Ok(())
}
