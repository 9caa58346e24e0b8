//! Two populations that differ in which viruses they tend to carry: fit the
//! pooled cohort, run PCA on the posterior columns and align the scores to
//! sampling locations.
//!
//!     cargo run --release --example pca_geography

use ervmix::analysis::pca_with_geography;
use ervmix::simulate::{simulate, SimSpec, Values};
use ervmix::{fit, CohortMetadata, CountMatrix, FitConfig};
use ndarray::{concatenate, Axis};

const VIRUSES: usize = 150;

fn population(seed: u64, common_first: bool) -> ervmix::Result<CountMatrix> {
    let pi = (0..VIRUSES)
        .map(|i| if (i < VIRUSES / 2) == common_first { 0.8 } else { 0.1 })
        .collect();
    let spec = SimSpec {
        n_viruses: VIRUSES,
        n_columns: 20,
        n_experiments: 1,
        pi: Values::Fixed { values: pi },
        alpha: Values::fixed(0.05),
        p: Values::fixed(0.97),
        replicates: vec![],
        seed,
        ..SimSpec::default()
    };
    Ok(simulate(&spec)?.counts)
}

fn main() -> ervmix::Result<()> {
    let (west, east) = (population(11, true)?, population(12, false)?);
    let counts = concatenate![Axis(1), west.counts().view(), east.counts().view()];
    let n = counts.ncols();
    let columns = (0..n).map(|j| format!("s{j:02}")).collect();
    let cm = CountMatrix::new(west.virus_ids().to_vec(), columns, counts)?;

    let geo = (0..n)
        .map(|j| {
            let (lon, pop) = if j < 20 { (-110.0, "W") } else { (-100.0, "E") };
            (Some((lon + (j % 20) as f64 * 0.1, 44.0 + (j % 5) as f64 * 0.2)), Some(pop.to_string()))
        })
        .collect::<Vec<_>>();
    let meta = CohortMetadata::new(
        (0..n).map(|j| format!("a{j:02}")).collect(),
        vec!["1".into(); n],
        geo.iter().map(|g| g.0).collect(),
        geo.iter().map(|g| g.1.clone()).collect(),
    )?;

    let result = fit(&cm, &meta, &FitConfig::default())?;
    let columns: Vec<usize> = (0..n).collect();
    let pca = pca_with_geography(&result.posterior, &meta, &columns)?;
    let align = pca.alignment.as_ref().expect("locations given");
    println!("explained variance {:.3} {:.3}", pca.explained_variance[0], pca.explained_variance[1]);
    println!("alignment scale {:.3}, residual {:.3}", align.scale, align.residual);
    for (k, &j) in pca.columns.iter().enumerate().step_by(4) {
        let [x, y] = align.aligned[k];
        println!(
            "{} {}  pc1 {:>7.3}  aligned ({x:>8.2}, {y:>6.2})",
            cm.column_ids()[j],
            meta.population(j).unwrap_or("-"),
            pca.scores[k][0]
        );
    }
    Ok(())
}
