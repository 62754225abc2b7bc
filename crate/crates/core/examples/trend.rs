//! Desk-scale masking trend: 400 twin stacks of 32x32x16 over five
//! complexity levels, all six variants.
//!
//!     cargo run --release --example trend -- [base_seed] [amplitude|power]

use hvsim_core::experiment::{check_trend, run_experiment, DatasetSource, ExperimentConfig};
use hvsim_core::synth::SynthConfig;
use hvsim_core::{Dims, MnSemantics};

fn main() -> hvsim_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let base_seed = args.next().map_or(1, |s| s.parse().expect("base_seed is an integer"));
    let semantics = match args.next().as_deref() {
        Some("amplitude") => MnSemantics::Amplitude,
        _ => MnSemantics::Power,
    };
    let synth = SynthConfig {
        dims: Dims::new(32, 32, 16),
        levels: vec![0, 1, 2, 3, 4],
        per_class: 40,
        base_seed,
        ..Default::default()
    };
    let mut config = ExperimentConfig {
        dataset: DatasetSource::Synth(synth),
        ..Default::default()
    };
    config.hvs.mn_semantics = semantics;
    let table = run_experiment(&config)?;
    print!("{}", table.to_csv());
    let report = check_trend(&table)?;
    for v in &report.variants {
        println!("spearman {} {}: {:+.2}", v.model, v.method, v.spearman);
    }
    for d in &report.deltas {
        println!(
            "{} level {}: masking - csf_only = {:+.3} (half-width {:.3}){}",
            d.method,
            d.complexity,
            d.delta,
            d.half_width,
            if d.significant_drop { " *" } else { "" }
        );
    }
    println!("decreasing: {}  reduces: {}", report.masking_pm_decreasing, report.masking_reduces_auc);
    Ok(())
}
