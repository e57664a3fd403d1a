//! Sweeps of the mask size K and the bank capacity Z.

use das_dml::experiment::{run_comparison, sweep_variants, K_SWEEP, Z_SWEEP};
use das_dml::RunConfig;
use serde_json::Value;

fn main() -> das_dml::Result<()> {
    // K goes up to 32, so use 32 embedding channels.
    let config = RunConfig::default().with_overrides(&["encoder.dim=32", "steps=300", "eval_interval=300"])?;
    let seeds = [1, 2];
    let k: Vec<Value> = K_SWEEP.iter().map(|&k| k.into()).collect();
    println!("{}", run_comparison(&config, &sweep_variants("das.K", &k), &seeds)?.to_text());
    let z: Vec<Value> = Z_SWEEP.iter().map(|&z| z.into()).collect();
    print!("{}", run_comparison(&config, &sweep_variants("das.Z", &z), &seeds)?.to_text());
    Ok(())
}
