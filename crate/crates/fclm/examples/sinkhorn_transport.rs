//! Entropic optimal transport between two foreground token sets: build the
//! cosine cost, solve with log-domain Sinkhorn scaling, and compare against
//! the brute-force permutation optimum.

use fclm::fg_align::{
    cost_matrix_cosine, ot_loss, permutation_lp_optimum, sinkhorn_plan, EmpiricalDistribution,
    ForegroundTokenSet,
};
use fclm::numerics::DenseMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fclm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let k = 4;
    let dim = 8;
    let tokens = |rng: &mut ChaCha8Rng| -> fclm::Result<ForegroundTokenSet> {
        let data: Vec<f64> = (0..k * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        ForegroundTokenSet::new(DenseMatrix::from_vec(k, dim, data)?, (0..k).collect())
    };
    let a = tokens(&mut rng)?;
    let b = tokens(&mut rng)?;

    let cost = cost_matrix_cosine(&a, &b)?;
    println!("cosine cost matrix:");
    for row in cost.iter_rows() {
        println!("  {row:.3?}");
    }

    let u = EmpiricalDistribution::uniform(k)?;
    for reg in [0.5, 0.05, 0.005] {
        let plan = sinkhorn_plan(&cost, &u, &u, reg, 20000, 1e-6)?;
        println!(
            "reg {reg:>6}: transport cost {:.6} after {} iterations",
            plan.transport_cost(),
            plan.iterations_used
        );
    }

    let entropic = ot_loss(&a, &b, 1e-3, 20000, 1e-4)?;
    let exact = permutation_lp_optimum(&cost)?;
    println!("entropic loss {entropic:.6} vs exact LP optimum {exact:.6}");
    Ok(())
}
