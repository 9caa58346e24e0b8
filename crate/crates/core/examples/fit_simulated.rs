//! Simulate a cohort, fit the mixture, and compare calls with the truth.
//!
//!     cargo run --release --example fit_simulated [seed]

use ervmix::simulate::{simulate, SimSpec};
use ervmix::{fit, FitConfig, PiModel, ReplicateMode};

fn main() -> ervmix::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let data = simulate(&SimSpec::default().with_seed(seed))?;
    let cfg = FitConfig::with_models(PiModel::PerVirus, ReplicateMode::Identical);
    let result = fit(&data.counts, &data.meta, &cfg)?;

    let z = result.posterior.z();
    let agree = z
        .iter()
        .zip(data.truth_by_column.iter())
        .filter(|(&z, &t)| u8::from(z > 0.5) == t)
        .count();
    println!("iterations      {} (converged: {})", result.iterations, result.converged);
    println!("log-likelihood  {:.3}", result.loglik());
    println!("label accuracy  {:.4}", agree as f64 / z.len() as f64);

    let max_alpha = result.params.alpha.iter().cloned().fold(0.0, f64::max);
    let min_p = result.params.p.iter().cloned().fold(1.0, f64::min);
    println!("max alpha {max_alpha:.4} < min p {min_p:.4}: {}", result.constraint_ok);
    for (k, (est, truth)) in result.params.p.iter().zip(&data.params.p).enumerate() {
        println!("p[{}]  fitted {est:.4}  true {truth:.4}", k + 1);
    }
    println!("guard activations {}", result.ascent_guard_activations);
    Ok(())
}
