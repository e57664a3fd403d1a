//! A two-layer MLP: forward pass to unit embeddings, exact backward pass
//! (checked against a central difference), and a few Adam steps pulling
//! two embeddings together.

use das_dml::encoder::{self, Activation, EncoderParams, OptimizerRule, OptimizerState};
use das_dml::math;
use das_dml::SeededRng;

fn main() -> das_dml::Result<()> {
    let mut rng = SeededRng::new(3);
    let mut params = EncoderParams::init(&[4, 8, 3], Activation::Relu, &mut rng)?;
    let inputs = vec![vec![1.0, 0.5, -0.3, 0.2], vec![-0.4, 0.9, 0.1, -1.0]];

    let (emb, tape) = encoder::encode(&params, &inputs)?;
    println!("norms: {:?}", emb.iter().map(|v| math::norm(v)).collect::<Vec<_>>());

    // d/dθ of −⟨v0, v1⟩ (maximizing their cosine similarity).
    let g = vec![emb[1].iter().map(|x| -x).collect::<Vec<_>>(), emb[0].iter().map(|x| -x).collect()];
    let grads = encoder::backward(&params, &tape, &g)?;

    let objective = |p: &EncoderParams| {
        let (v, _) = encoder::encode(p, &inputs).unwrap();
        -math::dot(&v[0], &v[1])
    };
    let h = 1e-5;
    let mut plus = params.clone();
    plus.layers[0].weights[0] += h;
    let mut minus = params.clone();
    minus.layers[0].weights[0] -= h;
    let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
    println!("∂/∂w₀₀: analytic {:.8}, numeric {:.8}", grads.layers[0].weights[0], numeric);

    let mut opt = OptimizerState::new(OptimizerRule::Adam, 1e-2, 0.0, &params);
    for step in 0..=50 {
        let (v, tape) = encoder::encode(&params, &inputs)?;
        if step % 10 == 0 {
            println!("step {step:>2}: cos = {:.4}", math::dot(&v[0], &v[1]));
        }
        let g = vec![v[1].iter().map(|x| -x).collect::<Vec<_>>(), v[0].iter().map(|x| -x).collect()];
        let grads = encoder::backward(&params, &tape, &g)?;
        encoder::optimizer_step(&mut params, &grads, &mut opt)?;
    }
    Ok(())
}
