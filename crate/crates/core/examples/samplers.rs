//! The four triplet samplers on one random batch of unit embeddings.

use das_dml::math::{self, pairwise_distances};
use das_dml::sampling::{self, AnchorPool, DISTANCE_CLIP};
use das_dml::SeededRng;

fn main() -> das_dml::Result<()> {
    let mut rng = SeededRng::new(5);
    let labels = [0, 0, 1, 1, 2, 2, 3, 3];
    let emb: Vec<Vec<f64>> = labels
        .iter()
        .map(|_| math::l2_normalize(&[rng.normal(), rng.normal(), rng.normal(), rng.normal()]))
        .collect::<Result<_, _>>()?;
    let d = pairwise_distances(&emb)?;
    let pool = AnchorPool::All;

    let sets = [
        ("random", sampling::sample_random_triplets(&labels, 8, pool, &mut rng)?),
        ("semihard", sampling::sample_semihard_triplets(&d, &labels, 0.2, pool, &mut rng)?),
        ("softhard", sampling::sample_softhard_triplets(&d, &labels, pool, &mut rng)?),
        ("distance", sampling::sample_distance_weighted(&d, &labels, 4, DISTANCE_CLIP, pool, &mut rng)?),
    ];
    for (name, triplets) in &sets {
        assert!(sampling::validate_triplets(triplets, &labels));
        let gap: f64 = triplets
            .iter()
            .map(|t| d.get(t.anchor, t.negative) - d.get(t.anchor, t.positive))
            .sum::<f64>()
            / triplets.len() as f64;
        println!("{name:>8}: {:>2} triplets, mean D(a,n) − D(a,p) = {gap:+.3}", triplets.len());
    }

    println!("distance weights at d_e=3 for d = 0.5, 1.0: {:?}", sampling::distance_weights(&[0.5, 1.0], 3, DISTANCE_CLIP));
    Ok(())
}
