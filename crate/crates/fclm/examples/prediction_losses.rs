//! The four prediction-head losses on synthetic mattes: L1 and Laplacian
//! pyramid for matting, BCE and soft IoU for dichotomous segmentation, and
//! the combined objective.

use fclm::pred_loss::{
    bce_loss, iou_loss, l1_matte_loss, laplacian_pyramid_loss, total_loss, AlphaMatte, BinaryMask,
};

fn main() -> fclm::Result<()> {
    let gt = AlphaMatte::from_fn(32, 32, |x, y| {
        let d = ((x as f64 - 16.0).powi(2) + (y as f64 - 16.0).powi(2)).sqrt();
        ((10.0 - d) / 3.0).clamp(0.0, 1.0)
    })?;
    // A slightly dilated, slightly biased prediction.
    let pred = AlphaMatte::from_fn(32, 32, |x, y| {
        let d = ((x as f64 - 17.0).powi(2) + (y as f64 - 16.0).powi(2)).sqrt();
        (((11.0 - d) / 3.0) * 0.9).clamp(0.0, 1.0)
    })?;

    let l1 = l1_matte_loss(&pred, &gt)?;
    let lap = laplacian_pyramid_loss(&pred, &gt, 5)?;
    println!("matting: l1 {l1:.4}, laplacian pyramid {lap:.4}");

    let mask = BinaryMask::from_alpha(&gt);
    let bce = bce_loss(&pred, &mask)?;
    let iou = iou_loss(&pred, &mask)?;
    println!("segmentation: bce {bce:.4}, iou {iou:.4}");

    let total = total_loss(0.1, 1.4, 0.05, l1 + lap)?;
    println!("combined objective with kd/adv/ot components: {total:.4}");
    Ok(())
}
