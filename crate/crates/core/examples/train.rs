//! Train the default configuration and print the learning curve.
//!
//! `cargo run --release --example train -- das.enabled=false` applies
//! config overrides given as arguments.

use das_dml::{train, RunConfig};

fn main() -> das_dml::Result<()> {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let config = RunConfig::default()
        .with_overrides(&["steps=600", "eval_interval=100"])?
        .with_overrides(&overrides)?;
    let outcome = train(config)?;
    let steps: Vec<_> = outcome.log.steps().collect();
    for eval in outcome.log.evals() {
        let window = &steps[eval.step.saturating_sub(100)..eval.step];
        let loss = window.iter().map(|s| s.loss).sum::<f64>() / window.len() as f64;
        println!(
            "step {:>4}: mean loss {loss:.4}, R@1 {:.4}, NMI {:.4}, F1 {:.4}",
            eval.step,
            eval.recall(1).unwrap_or(f64::NAN),
            eval.nmi,
            eval.f1
        );
    }
    let produced: usize = steps.iter().map(|s| s.produced).sum();
    println!("{produced} embeddings produced over {} steps", steps.len());
    Ok(())
}
