//! Baseline vs scaling-only vs shifting-only vs both, over three seeds.

use das_dml::experiment::{ablation_variants, run_comparison};
use das_dml::RunConfig;

fn main() -> das_dml::Result<()> {
    let config = RunConfig::default().with_overrides(&["steps=500", "eval_interval=500"])?;
    let table = run_comparison(&config, &ablation_variants(), &[1, 2, 3])?;
    print!("{}", table.to_text());
    print!("\n{}", table.to_csv());
    Ok(())
}
