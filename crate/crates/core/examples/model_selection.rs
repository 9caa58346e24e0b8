//! Rank the three prior models by BIC on a cohort with heterogeneous
//! prevalence and on one with a single shared prevalence.
//!
//!     cargo run --release --example model_selection

use ervmix::selection::{select_model, RankBy};
use ervmix::simulate::{simulate, SimSpec, Values};
use ervmix::{FitConfig, ReplicateMode};

fn show(label: &str, spec: &SimSpec) -> ervmix::Result<()> {
    let data = simulate(spec)?;
    let base = FitConfig {
        replicate_mode: ReplicateMode::Identical,
        ..FitConfig::default()
    };
    let sel = select_model(&data.counts, &data.meta, &base, RankBy::Standard)?;
    println!("{label}");
    println!("  {:<11} {:>6} {:>14} {:>14} {:>14}", "model", "d", "loglik", "bic", "bic (mn ln d)");
    for s in &sel.scores {
        println!(
            "  {:<11} {:>6} {:>14.2} {:>14.2} {:>14.2}",
            s.pi_model.to_string(),
            s.n_params,
            s.loglik,
            s.bic_standard,
            s.bic_cells
        );
    }
    Ok(())
}

fn main() -> ervmix::Result<()> {
    show("prevalence varies by virus", &SimSpec::default())?;
    let constant = SimSpec {
        pi: Values::fixed(0.4),
        ..SimSpec::default()
    };
    show("one prevalence for every virus", &constant)
}
