//! Agreement of presence calls between replicated animals, comparing count
//! thresholds with posterior cutoffs at matched positive proportions.
//!
//!     cargo run --release --example replicate_validation

use ervmix::diagnostics::{replicate_consistency, SweepConfig};
use ervmix::simulate::{simulate, SimSpec};
use ervmix::{fit, FitConfig, ReplicateMode};

fn main() -> ervmix::Result<()> {
    let data = simulate(&SimSpec::default().with_seed(3))?;
    let cfg = FitConfig {
        replicate_mode: ReplicateMode::Independent,
        ..FitConfig::default()
    };
    let result = fit(&data.counts, &data.meta, &cfg)?;
    let v = replicate_consistency(&data.counts, &data.meta, &result.posterior, &SweepConfig::default())?;

    let p = v.partition;
    println!(
        "cases {}: always consistent {}, always inconsistent {}, threshold-sensitive {}",
        p.total, p.always_consistent, p.always_inconsistent, p.sensitive
    );
    println!("{:>9} {:>10} {:>10} {:>10}", "threshold", "positive", "threshold", "cutoff");
    for m in &v.matched {
        let cutoff = m.cutoff_consistency.map_or("-".to_string(), |c| format!("{c:.3}"));
        println!(
            "{:>9} {:>10.3} {:>10.3} {:>10}",
            m.threshold, m.positive_proportion, m.threshold_consistency, cutoff
        );
    }
    Ok(())
}
