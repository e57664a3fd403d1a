//! Retrieval and clustering metrics on noisy 2-D clusters.

use das_dml::metrics::{evaluate_embeddings, f1_score, kmeans, nmi, recall_at_k};
use das_dml::SeededRng;

fn main() -> das_dml::Result<()> {
    let mut rng = SeededRng::new(2);
    let centers = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]];
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..10 {
            points.push(vec![center[0] + 0.8 * rng.normal(), center[1] + 0.8 * rng.normal()]);
            labels.push(c);
        }
    }

    println!("recall: {:?}", recall_at_k(&points, &labels, &[1, 2, 4])?);
    let clusters = kmeans(&points, 3, &mut SeededRng::new(0), 100)?;
    println!(
        "k-means: {} iterations, inertia {:.3}, NMI {:.4}, F1 {:.4}",
        clusters.iterations,
        clusters.inertia,
        nmi(&clusters.assignment, &labels)?,
        f1_score(&clusters.assignment, &labels)?
    );
    let report = evaluate_embeddings(&points, &labels, &[1, 2, 4], 0, 0)?;
    println!("{}", report.to_json_value());
    Ok(())
}
