//! Visual prompt embeddings: sinusoidal point/box encodings, the zero
//! embedding for the absent prompt, and the learnable context query.

use fclm::numerics::cosine_similarity;
use fclm::toy_harness::{prompt_embed, Prompt, PromptEmbedding};

fn main() -> fclm::Result<()> {
    let dim = 16;
    let p1 = prompt_embed(&Prompt::Point { x: 0.2, y: 0.3 }, dim)?;
    let p2 = prompt_embed(&Prompt::Point { x: 0.25, y: 0.32 }, dim)?;
    let p3 = prompt_embed(&Prompt::Point { x: 0.9, y: 0.85 }, dim)?;
    println!(
        "nearby points   cos = {:.4}",
        cosine_similarity(&p1.vector, &p2.vector)?
    );
    println!(
        "distant points  cos = {:.4}",
        cosine_similarity(&p1.vector, &p3.vector)?
    );

    let boxed = prompt_embed(
        &Prompt::Box {
            x0: 0.2,
            y0: 0.3,
            x1: 0.9,
            y1: 0.85,
        },
        dim,
    )?;
    println!(
        "box vs its corners cos = {:.4} / {:.4}",
        cosine_similarity(&boxed.vector, &p1.vector)?,
        cosine_similarity(&boxed.vector, &p3.vector)?
    );

    let none = prompt_embed(&Prompt::None, dim)?;
    println!(
        "absent prompt is exactly zero: {}",
        none.vector.iter().all(|v| *v == 0.0)
    );

    let ctx = PromptEmbedding::learnable_context(dim);
    println!(
        "learnable context starts at zero and trains with the decoder: {:?}",
        ctx.kind
    );
    Ok(())
}
