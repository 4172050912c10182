//! Depth-aware distillation walkthrough: split a depth map into
//! foreground/background weights, project teacher features through the
//! meta-nets, and evaluate the plain and depth-weighted losses.

use fclm::depth_distill::{
    compute_depth_weights, feature_distance, kd_loss_depth_aware, meta_project, DepthMap,
    FeatureGrid, MetaNet,
};
use fclm::numerics::DenseMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fclm::Result<()> {
    // A 8x8 depth map: a bright square on a dark floor.
    let depth = DepthMap::new(
        8,
        8,
        (0..64)
            .map(|i| {
                let (x, y) = (i % 8, i / 8);
                if (2..6).contains(&x) && (2..6).contains(&y) {
                    0.9
                } else {
                    0.1
                }
            })
            .collect(),
    )?;
    let weights = compute_depth_weights(&depth, 0.25, (4, 4), false)?;
    println!("patch d+ weights: {:.2?}", weights.d_plus);
    println!("patch d- weights: {:.2?}", weights.d_minus);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let teacher_dim = 12;
    let student_dim = 8;
    let grid = |rng: &mut ChaCha8Rng, d: usize| -> fclm::Result<FeatureGrid> {
        let data: Vec<f64> = (0..16 * d).map(|_| rng.random_range(-0.5..0.5)).collect();
        FeatureGrid::new(4, 4, DenseMatrix::from_vec(16, d, data)?)
    };
    let student = grid(&mut rng, student_dim)?;
    let teacher = grid(&mut rng, teacher_dim)?;

    let fg_net = MetaNet::seeded(teacher_dim, 8, student_dim, 10)?;
    let bg_net = MetaNet::seeded(teacher_dim, 8, student_dim, 11)?;

    let projected = meta_project(&teacher, &fg_net)?;
    println!(
        "teacher {}x{} projected to student dimension {}",
        teacher.token_count(),
        teacher.dim(),
        projected.dim()
    );

    let plain = feature_distance(&student, &projected, 1.0)?;
    let depth_aware = kd_loss_depth_aware(&student, &teacher, &weights, &fg_net, &bg_net, 1.0)?;
    println!("plain distillation distance: {plain:.4}");
    println!("depth-aware distillation loss: {depth_aware:.4}");
    Ok(())
}
