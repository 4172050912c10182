//! Matting evaluation metrics on a synthetic prediction, including the
//! instance-level IMQ score with a spurious detection.

use fclm::metrics_matting::{imq, ImqQuality, InstanceSet, MatteReport};
use fclm::pred_loss::AlphaMatte;

fn disc(cx: f64, cy: f64, r: f64) -> fclm::Result<AlphaMatte> {
    AlphaMatte::from_fn(32, 32, |x, y| {
        let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
        ((r - d) / 1.5).clamp(0.0, 1.0)
    })
}

fn main() -> fclm::Result<()> {
    let gt = disc(15.0, 15.0, 8.0)?;
    let pred = disc(16.0, 15.0, 8.5)?;
    let report = MatteReport::compute(&pred, &gt)?;
    println!(
        "SAD {:.4}  MSE {:.5}  MAD {:.5}  Grad {:.5}  Conn {:.5}",
        report.sad, report.mse, report.mad, report.grad, report.conn
    );

    // Instance matting quality: one good match plus a spurious prediction.
    let gt_set = InstanceSet::new(vec![disc(10.0, 10.0, 5.0)?, disc(22.0, 22.0, 4.0)?])?;
    let pred_set = InstanceSet::new(vec![
        disc(10.0, 10.0, 5.0)?,
        disc(22.0, 22.0, 4.0)?,
        disc(26.0, 6.0, 3.0)?,
    ])?;
    for quality in [
        ImqQuality::Mse,
        ImqQuality::Mad,
        ImqQuality::Grad,
        ImqQuality::Conn,
    ] {
        println!(
            "IMQ({quality:?}) = {:.2}",
            imq(&pred_set, &gt_set, quality)?
        );
    }
    Ok(())
}
