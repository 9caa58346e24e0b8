//! Write a simulated cohort to CSV, read it back, drop rarely seen viruses,
//! and print count and fit summaries.
//!
//!     cargo run --release --example load_and_summarize

use ervmix::analysis::fit_summary_tables;
use ervmix::data::{abridge, load_count_matrix, load_metadata, save_count_matrix, save_metadata, summarize_counts};
use ervmix::simulate::{simulate, SimSpec};
use ervmix::{fit, FitConfig};

fn main() -> ervmix::Result<()> {
    let dir = std::env::temp_dir().join(format!("ervmix-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| ervmix::Error::Validation(e.to_string()))?;
    let data = simulate(&SimSpec::default())?;
    save_count_matrix(dir.join("counts.csv"), &data.counts)?;
    save_metadata(dir.join("meta.csv"), &data.counts, &data.meta)?;

    let cm = load_count_matrix(dir.join("counts.csv"))?;
    let meta = load_metadata(dir.join("meta.csv"), &cm)?;
    let s = summarize_counts(&cm);
    println!(
        "{} x {}: zeros {:.3}, counts 1-10 {:.3}, mean nonzero {:.1}",
        s.dims.0, s.dims.1, s.zero_fraction, s.low_fraction, s.mean_nonzero
    );

    let kept = abridge(&cm, &meta, 2, 10)?;
    println!("viruses with >= 10 reads in >= 2 animals: {}", kept.n_viruses());

    let result = fit(&kept, &meta, &FitConfig::default())?;
    let summary = fit_summary_tables(&kept, &meta, &result)?;
    let h = &summary.histogram;
    println!(
        "posterior < 0.01: {:.3}   > 0.99: {:.3}   between: {}",
        h.fraction_below,
        h.fraction_above,
        h.counts.iter().sum::<usize>()
    );
    for row in summary.rows.iter().take(5) {
        println!("{}  mean nonzero {:>8.1}  ln alpha {:>7.3}", row.virus, row.mean_nonzero.unwrap_or(0.0), row.ln_alpha);
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
