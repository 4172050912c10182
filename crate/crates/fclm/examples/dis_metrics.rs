//! Dichotomous-segmentation metric suite on a synthetic case: maximum and
//! weighted F-measure, MAE, S-measure, E-measure, and the correction-effort
//! estimate.

use fclm::metrics_dis::{DisConfig, DisReport};
use fclm::pred_loss::{AlphaMatte, BinaryMask};

fn main() -> fclm::Result<()> {
    let gt = BinaryMask::from_fn(48, 48, |x, y| {
        let ring = ((x as f64 - 24.0).powi(2) + (y as f64 - 24.0).powi(2)).sqrt();
        (8.0..=15.0).contains(&ring)
    })?;
    // A soft prediction with a blurred inner edge and one spurious blob.
    let pred = AlphaMatte::from_fn(48, 48, |x, y| {
        let ring = ((x as f64 - 24.0).powi(2) + (y as f64 - 24.0).powi(2)).sqrt();
        let base = if (8.5..=15.0).contains(&ring) {
            0.95
        } else if (7.0..8.5).contains(&ring) {
            0.5
        } else {
            0.02
        };
        let spur = ((x as f64 - 42.0).powi(2) + (y as f64 - 5.0).powi(2)).sqrt();
        if spur < 2.5 {
            0.9
        } else {
            base
        }
    })?;

    let report = DisReport::compute(&pred, &gt, &DisConfig::default())?;
    println!("maxF   {:.4}", report.max_f);
    println!("wF     {:.4}", report.weighted_f);
    println!("MAE    {:.4}", report.mae);
    println!("S      {:.4}", report.s_measure);
    println!("E      {:.4}", report.e_measure);
    println!("HCE    {} (approximate click count)", report.hce);
    Ok(())
}
