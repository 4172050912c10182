//! Central finite differences against analytic gradients: a hand-rolled
//! quadratic, one library loss, and the full per-loss suite.

use fclm::adversarial::finite_diff_check;
use fclm::pred_loss::{iou_loss, iou_loss_with_grad, AlphaMatte, BinaryMask, GrayMap};
use fclm::verify;

fn main() -> fclm::Result<()> {
    // Quadratic sanity check: d(||x||^2 / 2)/dx = x.
    let theta = [0.7, -1.3, 2.1];
    let err = finite_diff_check(
        |t| Ok(t.iter().map(|v| v * v).sum::<f64>() / 2.0),
        &theta,
        &theta,
        1e-5,
    )?;
    println!("quadratic relative error: {err:.2e}");

    // One library loss end to end.
    let gt = BinaryMask::from_fn(8, 8, |x, y| x + y > 7)?;
    let pred = AlphaMatte::from_fn(8, 8, |x, y| 0.3 + 0.05 * ((x * 3 + y) % 7) as f64)?;
    let (_, grad) = iou_loss_with_grad(&pred, &gt)?;
    let err = finite_diff_check(
        |p| {
            let m = AlphaMatte::new(8, 8, p.to_vec())?;
            iou_loss(&m, &gt)
        },
        pred.values(),
        &grad,
        1e-5,
    )?;
    println!("soft-IoU relative error: {err:.2e}");

    // The embedded suite covers every differentiable loss in the crate.
    for check in verify::gradient_suite(5, false)? {
        println!(
            "{:<22} worst relative error {:.3e} (limit {:.0e})",
            check.name, check.value, check.threshold
        );
    }
    Ok(())
}
