//! Contrastive, triplet, margin and multi-similarity losses on a fixed batch.

use das_dml::losses::{self, MsParams};
use das_dml::sampling::{self, Triplet};

fn main() -> das_dml::Result<()> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let emb = vec![vec![1.0, 0.0], vec![s, s], vec![0.0, 1.0], vec![-s, s]];
    let labels = [0, 0, 1, 1];
    let pairs = sampling::build_pairs(&labels);
    let triplets = [Triplet { anchor: 0, positive: 1, negative: 2 }, Triplet { anchor: 2, positive: 3, negative: 1 }];

    let results = [
        ("contrastive", losses::contrastive_loss(&emb, &pairs, 0.5)?),
        ("triplet", losses::triplet_loss(&emb, &triplets, 0.2)?),
        ("margin", losses::margin_loss(&emb, &pairs, 0.2, 1.2)?),
        ("ms", losses::multi_similarity_loss(&emb, &labels, &MsParams::default())?),
    ];
    for (name, out) in &results {
        println!(
            "{name:>11}: value {:.5}, active terms {}, ‖∇v₀‖ = {:.4}",
            out.value,
            out.active_count,
            das_dml::math::norm(&out.grad[0])
        );
    }
    Ok(())
}
