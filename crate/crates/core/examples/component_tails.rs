//! Log mass of the carrier and background components, and how a geometric or
//! Poisson background compares at large counts.
//!
//!     cargo run --example component_tails

use ervmix::nb::{geometric_log_pmf, nb_log_pmf, nb_moments, poisson_log_pmf, NbParams};

fn main() -> ervmix::Result<()> {
    let r = 20.0;
    let carrier = NbParams::new(r, 0.05)?;
    let background = NbParams::new(r, 0.97)?;
    let (mu_c, var_c) = nb_moments(carrier);
    let (mu_b, var_b) = nb_moments(background);
    println!("carrier     mean {mu_c:8.2}  variance {var_c:10.2}");
    println!("background  mean {mu_b:8.2}  variance {var_b:10.2}");
    println!();
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "x", "carrier", "background", "geometric", "poisson");
    for x in [0u64, 1, 2, 5, 10, 20, 50, 100, 200, 400] {
        println!(
            "{x:>6} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
            nb_log_pmf(x, carrier),
            nb_log_pmf(x, background),
            geometric_log_pmf(x, 1.0 / (1.0 + mu_b))?,
            poisson_log_pmf(x, mu_b)?,
        );
    }
    Ok(())
}
