//! Pearson residuals of the large counts under row-by-column Poisson and
//! negative binomial fits.
//!
//!     cargo run --release --example overdispersion

use ervmix::diagnostics::{fit_nb_rowcol, fit_poisson_rowcol, pearson_residuals, RowColFit, DEFAULT_CUTOFF};
use ervmix::simulate::{simulate, SimSpec};

fn main() -> ervmix::Result<()> {
    let data = simulate(&SimSpec::default())?;
    let cm = &data.counts;
    let fits = [
        RowColFit::Poisson(fit_poisson_rowcol(cm, DEFAULT_CUTOFF)?),
        RowColFit::NegativeBinomial(fit_nb_rowcol(cm, DEFAULT_CUTOFF)?),
    ];
    for f in &fits {
        let report = pearson_residuals(cm, f, DEFAULT_CUTOFF)?;
        let tails = report.qq_pairs.iter().filter(|(_, r)| r.abs() > 3.0).count();
        println!(
            "{:<18} cells {:>5}  residual variance {:>9.3}  |residual| > 3: {}",
            report.model_tag.to_string(),
            report.residuals.len(),
            report.sample_variance(),
            tails
        );
    }
    Ok(())
}
