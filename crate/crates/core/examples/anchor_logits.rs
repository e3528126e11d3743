//! Builds stub text anchors for the radar prompts, projects a latent mean into
//! the anchor space and prints the temperature-scaled logits.

use gla::anchors::{
    alignment_loss, cosine_logits, project_and_normalize, softmax2, ProjectionHead, TextAnchorSet,
    DEFAULT_EMBED_DIM, EMPTY_PROMPT, PERSON_PROMPT,
};

fn main() -> gla::Result<()> {
    let anchors = TextAnchorSet::stub([EMPTY_PROMPT, PERSON_PROMPT], DEFAULT_EMBED_DIM);
    println!("anchor cosine {:.4}, digest {}", anchors.cosine(), &anchors.vector_digest()[..16]);

    let head = ProjectionHead::new(DEFAULT_EMBED_DIM, 32, 7);
    let mu: Vec<f64> = (0..32).map(|j| (j as f64 * 0.37).sin()).collect();
    let mu_bar = project_and_normalize(&mu, &head)?;
    let s = cosine_logits(&mu_bar, &anchors, head.tau());
    let p = softmax2(s);
    println!("tau {:.1}, logits {:.4?}, p(person) {:.4}", head.tau(), s, p[1]);
    println!("loss as empty {:.4}, as person {:.4}", alignment_loss(s, 0), alignment_loss(s, 1));
    Ok(())
}
