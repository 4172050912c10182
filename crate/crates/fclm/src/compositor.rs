//! Paired-foreground training-data synthesis: alpha compositing of one
//! foreground over two different backgrounds.

use crate::error::{Error, Result};
use crate::pred_loss::{AlphaMatte, GrayMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 || data.is_empty() {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: width * height * 3,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Extracts a centered `width × height` window; the source must be at
    /// least that large.
    pub fn center_crop(&self, width: usize, height: usize) -> Result<RgbImage> {
        if self.width < width || self.height < height {
            return Err(Error::InvalidArgument(format!(
                "cannot crop {}x{} out of {}x{}",
                width, height, self.width, self.height
            )));
        }
        let x0 = (self.width - width) / 2;
        let y0 = (self.height - height) / 2;
        RgbImage::from_fn(width, height, |x, y| self.pixel(x0 + x, y0 + y))
    }
}

/// Two composites sharing one foreground/alpha over different backgrounds.
#[derive(Debug, Clone)]
pub struct CompositePair {
    pub image_a: RgbImage,
    pub image_b: RgbImage,
    pub alpha: AlphaMatte,
    pub background_a_id: usize,
    pub background_b_id: usize,
    pub seed: u64,
}

/// Per-channel `C = α·F + (1−α)·B` in real arithmetic, rounded
/// half-away-from-zero to 8 bits.
pub fn composite_alpha(
    foreground: &RgbImage,
    alpha: &AlphaMatte,
    background: &RgbImage,
) -> Result<RgbImage> {
    if foreground.width != background.width
        || foreground.height != background.height
        || foreground.width != alpha.width()
        || foreground.height != alpha.height()
    {
        return Err(Error::ShapeMismatch {
            left: format!("fg {}x{}", foreground.width, foreground.height),
            right: format!(
                "alpha {}x{} / bg {}x{}",
                alpha.width(),
                alpha.height(),
                background.width,
                background.height
            ),
        });
    }
    RgbImage::from_fn(foreground.width, foreground.height, |x, y| {
        let a = alpha.get(x, y);
        let f = foreground.pixel(x, y);
        let b = background.pixel(x, y);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let v = a * f[c] as f64 + (1.0 - a) * b[c] as f64;
            out[c] = v.round() as u8;
        }
        out
    })
}

/// Draws two distinct backgrounds from the pool with the seeded generator
/// and composites the shared foreground over each. Backgrounds larger than
/// the foreground canvas are center-cropped; smaller ones are skipped
/// (upscaling would blur the very statistics the pairing is meant to vary).
pub fn make_pair(
    foreground: &RgbImage,
    alpha: &AlphaMatte,
    backgrounds: &[RgbImage],
    seed: u64,
) -> Result<CompositePair> {
    let eligible: Vec<usize> = backgrounds
        .iter()
        .enumerate()
        .filter(|(_, b)| b.width >= foreground.width && b.height >= foreground.height)
        .map(|(i, _)| i)
        .collect();
    if eligible.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "background pool has {} usable images, need at least 2",
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, eligible.len(), 2);
    let id_a = eligible[picks.index(0)];
    let id_b = eligible[picks.index(1)];
    let bg_a = backgrounds[id_a].center_crop(foreground.width, foreground.height)?;
    let bg_b = backgrounds[id_b].center_crop(foreground.width, foreground.height)?;
    Ok(CompositePair {
        image_a: composite_alpha(foreground, alpha, &bg_a)?,
        image_b: composite_alpha(foreground, alpha, &bg_b)?,
        alpha: alpha.clone(),
        background_a_id: id_a,
        background_b_id: id_b,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn solid(w: usize, h: usize, color: [u8; 3]) -> RgbImage {
        RgbImage::from_fn(w, h, |_, _| color).unwrap()
    }

    #[test]
    fn alpha_one_keeps_foreground() {
        let fg = solid(4, 4, [200, 10, 99]);
        let bg = solid(4, 4, [1, 2, 3]);
        let a = AlphaMatte::constant(4, 4, 1.0).unwrap();
        assert_eq!(composite_alpha(&fg, &a, &bg).unwrap(), fg);
    }

    #[test]
    fn alpha_zero_keeps_background() {
        let fg = solid(4, 4, [200, 10, 99]);
        let bg = solid(4, 4, [1, 2, 3]);
        let a = AlphaMatte::constant(4, 4, 0.0).unwrap();
        assert_eq!(composite_alpha(&fg, &a, &bg).unwrap(), bg);
    }

    #[test]
    fn alpha_half_blends_exactly() {
        let fg = solid(1, 1, [200, 200, 200]);
        let bg = solid(1, 1, [100, 100, 100]);
        let a = AlphaMatte::constant(1, 1, 0.5).unwrap();
        assert_eq!(
            composite_alpha(&fg, &a, &bg).unwrap().pixel(0, 0),
            [150, 150, 150]
        );
    }

    #[test]
    fn composite_rejects_mismatched_dims() {
        let fg = solid(4, 4, [1, 1, 1]);
        let bg = solid(4, 2, [1, 1, 1]);
        let a = AlphaMatte::constant(4, 4, 0.5).unwrap();
        assert!(composite_alpha(&fg, &a, &bg).is_err());
    }

    #[test]
    fn make_pair_forced_choice_and_determinism() {
        let fg = solid(4, 4, [120, 60, 30]);
        let a = AlphaMatte::from_fn(4, 4, |x, _| if x < 2 { 1.0 } else { 0.0 }).unwrap();
        let pool = vec![solid(4, 4, [0, 0, 0]), solid(6, 6, [255, 255, 255])];
        let p1 = make_pair(&fg, &a, &pool, 42).unwrap();
        assert_ne!(p1.background_a_id, p1.background_b_id);
        let p2 = make_pair(&fg, &a, &pool, 42).unwrap();
        assert_eq!(p1.image_a, p2.image_a);
        assert_eq!(p1.image_b, p2.image_b);
        assert_eq!(
            (p1.background_a_id, p1.background_b_id),
            (p2.background_a_id, p2.background_b_id)
        );
    }

    #[test]
    fn make_pair_rejects_thin_pool() {
        let fg = solid(4, 4, [1, 1, 1]);
        let a = AlphaMatte::constant(4, 4, 1.0).unwrap();
        let pool = vec![solid(4, 4, [0, 0, 0]), solid(2, 2, [9, 9, 9])];
        assert!(make_pair(&fg, &a, &pool, 1).is_err());
    }

    #[test]
    fn foreground_pixels_identical_across_pair() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let fg =
            RgbImage::from_fn(8, 8, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap();
        let a = AlphaMatte::from_fn(8, 8, |x, y| if x + y < 8 { 1.0 } else { 0.3 }).unwrap();
        let pool = vec![
            solid(8, 8, [0, 0, 0]),
            solid(8, 8, [255, 0, 0]),
            solid(12, 10, [0, 255, 0]),
        ];
        let pair = make_pair(&fg, &a, &pool, 3).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                if a.get(x, y) == 1.0 {
                    assert_eq!(pair.image_a.pixel(x, y), pair.image_b.pixel(x, y));
                    assert_eq!(pair.image_a.pixel(x, y), fg.pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn pair_difference_identity_within_rounding() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let fg =
            RgbImage::from_fn(16, 16, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap();
        let mut alpha_rng = rand_chacha::ChaCha8Rng::seed_from_u64(24);
        let a = AlphaMatte::from_fn(16, 16, |_, _| alpha_rng.random_range(0.0..1.0)).unwrap();
        let mut bg_rng = rand_chacha::ChaCha8Rng::seed_from_u64(25);
        let mut random_bg = |w: usize, h: usize| {
            RgbImage::from_fn(w, h, |_, _| {
                [bg_rng.random(), bg_rng.random(), bg_rng.random()]
            })
            .unwrap()
        };
        let pool = vec![random_bg(16, 16), random_bg(16, 16), random_bg(20, 18)];
        let pair = make_pair(&fg, &a, &pool, 7).unwrap();
        let crop = |i: usize| pool[i].center_crop(16, 16).unwrap();
        let (bg_a, bg_b) = (crop(pair.background_a_id), crop(pair.background_b_id));
        for y in 0..16 {
            for x in 0..16 {
                let av = a.get(x, y);
                for c in 0..3 {
                    let got =
                        pair.image_a.pixel(x, y)[c] as f64 - pair.image_b.pixel(x, y)[c] as f64;
                    let want =
                        (1.0 - av) * (bg_a.pixel(x, y)[c] as f64 - bg_b.pixel(x, y)[c] as f64);
                    assert!(
                        (got - want).abs() <= 1.0 + 1e-9,
                        "difference identity violated at ({x},{y},{c}): {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn round_trip_recovers_foreground_at_opaque_pixels() {
        let fg = solid(4, 4, [173, 52, 200]);
        let black = solid(4, 4, [0, 0, 0]);
        let a = AlphaMatte::from_fn(4, 4, |x, _| if x % 2 == 0 { 1.0 } else { 0.5 }).unwrap();
        let comp = composite_alpha(&fg, &a, &black).unwrap();
        for y in 0..4 {
            for x in (0..4).step_by(2) {
                assert_eq!(comp.pixel(x, y), fg.pixel(x, y));
            }
        }
    }
}
