//! Synthetic Gaussian clusters: generate, split into train/test classes,
//! write as CSV and read back.

use das_dml::dataset::{generate_gaussian_clusters, read_csv, GaussianSpec};
use das_dml::SeededRng;

fn main() -> das_dml::Result<()> {
    let spec = GaussianSpec {
        classes: 6,
        per_class: 5,
        dim: 4,
        ..GaussianSpec::default()
    };
    let dataset = generate_gaussian_clusters(&spec, &mut SeededRng::new(1))?;
    println!(
        "{} points, {} features, train classes {:?}, test classes {:?}",
        dataset.len(),
        dataset.input_dim(),
        dataset.train_classes(),
        dataset.test_classes()
    );

    let mut csv = Vec::new();
    dataset.write_csv(&mut csv)?;
    let text = String::from_utf8(csv).expect("csv is utf-8");
    println!("first rows:\n{}", text.lines().take(3).collect::<Vec<_>>().join("\n"));

    let label_col = spec.dim;
    let back = read_csv(text.as_bytes(), label_col, false)?.expect("non-empty");
    assert_eq!(back, dataset);
    println!("CSV round trip: identical");
    Ok(())
}
