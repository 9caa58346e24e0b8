//! Summaries of a finished fit, PCA of the posterior columns, and similarity
//! alignment of the first two scores to geographic coordinates.

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use serde::Serialize;

use crate::data::{CohortMetadata, CountMatrix};
use crate::ecm::{FitResult, PosteriorMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowSummary {
    pub virus: String,
    /// Mean of the nonzero counts; `None` for an all-zero row.
    pub mean_nonzero: Option<f64>,
    pub ln_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub column: String,
    pub mean_nonzero: Option<f64>,
    pub ln_r: f64,
}

/// Mean posterior over all cells of one experiment holding count `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountPosterior {
    pub experiment: String,
    pub count: u64,
    pub cells: usize,
    pub mean_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZHistogram {
    /// `bins + 1` edges spanning `[low, high]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub fraction_below: f64,
    pub fraction_above: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub rows: Vec<RowSummary>,
    pub columns: Vec<ColumnSummary>,
    pub by_count: Vec<CountPosterior>,
    pub histogram: ZHistogram,
}

fn mean_nonzero(values: impl Iterator<Item = u64>) -> Option<f64> {
    let (sum, n) = values
        .filter(|&x| x > 0)
        .fold((0.0, 0usize), |(s, n), x| (s + x as f64, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Histogram of posterior values in `[low, high]` with equal-width bins; values
/// strictly outside are reported as fractions of all cells.
pub fn posterior_histogram(zhat: &PosteriorMatrix, low: f64, high: f64, bins: usize) -> ZHistogram {
    let width = (high - low) / bins as f64;
    let mut counts = vec![0; bins];
    let (mut below, mut above) = (0usize, 0usize);
    for &z in zhat.z() {
        if z < low {
            below += 1;
        } else if z > high {
            above += 1;
        } else {
            counts[(((z - low) / width) as usize).min(bins - 1)] += 1;
        }
    }
    let total = zhat.z().len() as f64;
    ZHistogram {
        edges: (0..=bins).map(|k| low + k as f64 * width).collect(),
        counts,
        fraction_below: below as f64 / total,
        fraction_above: above as f64 / total,
    }
}

/// Row and column means of the nonzero counts against the fitted `ln alpha`
/// and `ln r`, mean posterior by count within each experiment, and a
/// histogram of the posterior over `[0.01, 0.99]` in 49 bins.
pub fn fit_summary_tables(cm: &CountMatrix, meta: &CohortMetadata, result: &FitResult) -> Result<FitSummary> {
    if result.posterior.dim() != cm.counts().dim() || meta.n_columns() != cm.n_columns() {
        return Err(Error::Validation("fit, counts and metadata disagree in shape".into()));
    }
    let counts = cm.counts();
    let rows = (0..cm.n_viruses())
        .map(|i| RowSummary {
            virus: cm.virus_ids()[i].clone(),
            mean_nonzero: mean_nonzero(counts.row(i).iter().copied()),
            ln_alpha: result.params.alpha[i].ln(),
        })
        .collect();
    let columns = (0..cm.n_columns())
        .map(|j| ColumnSummary {
            column: cm.column_ids()[j].clone(),
            mean_nonzero: mean_nonzero(counts.column(j).iter().copied()),
            ln_r: result.params.r[j].ln(),
        })
        .collect();

    let mut by_count = Vec::new();
    for (k, cols) in meta.columns_by_experiment().iter().enumerate() {
        let mut acc: std::collections::BTreeMap<u64, (usize, f64)> = Default::default();
        for &j in cols {
            for i in 0..cm.n_viruses() {
                let x = cm.get(i, j);
                if x > 0 {
                    let e = acc.entry(x).or_default();
                    e.0 += 1;
                    e.1 += result.posterior.get(i, j);
                }
            }
        }
        by_count.extend(acc.into_iter().map(|(x, (cells, sum))| CountPosterior {
            experiment: meta.experiment_labels()[k].clone(),
            count: x,
            cells,
            mean_z: sum / cells as f64,
        }));
    }

    Ok(FitSummary {
        rows,
        columns,
        by_count,
        histogram: posterior_histogram(&result.posterior, 0.01, 0.99, 49),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Alignment {
    pub scale: f64,
    /// Applied to row vectors: `aligned = scale * (x - mean_x) * rotation + mean_geo`.
    pub rotation: [[f64; 2]; 2],
    pub translation: [f64; 2],
    pub aligned: Vec<[f64; 2]>,
    /// Sum of squared distances between aligned points and their targets.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// Posterior columns the scores refer to.
    pub columns: Vec<usize>,
    pub scores: Vec<[f64; 2]>,
    pub explained_variance: [f64; 2],
    /// Unit principal directions in virus space, one per component.
    pub directions: [Vec<f64>; 2],
    pub alignment: Option<Alignment>,
}

/// PCA of every posterior column.
pub fn pca_scores(zhat: &PosteriorMatrix) -> Result<PcaResult> {
    let all: Vec<usize> = (0..zhat.dim().1).collect();
    pca_scores_on(zhat, &all)
}

/// Covariance PCA of the chosen posterior columns, each a point in virus space.
pub fn pca_scores_on(zhat: &PosteriorMatrix, columns: &[usize]) -> Result<PcaResult> {
    let (m, n_all) = zhat.dim();
    let n = columns.len();
    if n < 3 {
        return Err(Error::Validation(format!("PCA needs at least 3 columns, got {n}")));
    }
    if let Some(&j) = columns.iter().find(|&&j| j >= n_all) {
        return Err(Error::Validation(format!("column index {j} out of range")));
    }
    let z = zhat.z();
    let mut x = DMatrix::<f64>::from_fn(m, n, |i, c| z[[i, columns[c]]]);
    for i in 0..m {
        let mean = x.row(i).sum() / n as f64;
        x.row_mut(i).add_scalar_mut(-mean);
    }
    let denom = (n - 1) as f64;
    let gram = x.transpose() * &x / denom;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda = [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)];
    let total: f64 = x.iter().map(|v| v * v).sum();
    if lambda[0] <= 1e-12 * total.max(1.0) || total == 0.0 {
        return Err(Error::Validation("posterior columns have zero variance".into()));
    }

    let direction = |k: usize| -> Option<Vec<f64>> {
        let v = eig.eigenvectors.column(order[k]);
        let u = &x * v;
        let norm = u.norm();
        (lambda[k] > 1e-12 * lambda[0] && norm > 0.0).then(|| u.iter().map(|a| a / norm).collect())
    };
    let mut first = direction(0).expect("leading eigenvalue is positive");
    let mut second = direction(1).unwrap_or_else(|| orthogonal_unit(&first));
    orient(&mut first);
    orient(&mut second);

    let project = |d: &[f64], c: usize| (0..m).map(|i| x[(i, c)] * d[i]).sum::<f64>();
    let scores = (0..n).map(|c| [project(&first, c), project(&second, c)]).collect();
    Ok(PcaResult {
        columns: columns.to_vec(),
        scores,
        explained_variance: lambda,
        directions: [first, second],
        alignment: None,
    })
}

/// Flip so the entry of largest magnitude is positive; earliest index wins ties.
fn orient(d: &mut [f64]) {
    let mut best = 0;
    for (i, v) in d.iter().enumerate() {
        if v.abs() > d[best].abs() {
            best = i;
        }
    }
    if d[best] < 0.0 {
        d.iter_mut().for_each(|v| *v = -*v);
    }
}

/// A unit vector orthogonal to `u`, from the basis vector least aligned with it.
fn orthogonal_unit(u: &[f64]) -> Vec<f64> {
    let mut k = 0;
    for (i, v) in u.iter().enumerate() {
        if v.abs() < u[k].abs() {
            k = i;
        }
    }
    let mut w: Vec<f64> = u.iter().map(|&a| -a * u[k]).collect();
    w[k] += 1.0;
    let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
    w.iter().map(|a| a / norm).collect()
}

/// Similarity transform (scale, rotation or reflection, translation) of
/// `scores` minimizing the summed squared distance to `geo`.
pub fn align_to_geography(scores: &[[f64; 2]], geo: &[[f64; 2]]) -> Result<Alignment> {
    let n = scores.len();
    if geo.len() != n {
        return Err(Error::Validation(format!("{n} score points but {} locations", geo.len())));
    }
    if n == 0 {
        return Err(Error::Validation("no points to align".into()));
    }
    let mean = |pts: &[[f64; 2]]| {
        let s = pts.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / n as f64, s[1] / n as f64]
    };
    let (mx, my) = (mean(scores), mean(geo));
    let mut h = Matrix2::<f64>::zeros();
    let mut sxx = 0.0;
    for (p, q) in scores.iter().zip(geo) {
        let a = [p[0] - mx[0], p[1] - mx[1]];
        let b = [q[0] - my[0], q[1] - my[1]];
        sxx += a[0] * a[0] + a[1] * a[1];
        for r in 0..2 {
            for c in 0..2 {
                h[(r, c)] += a[r] * b[c];
            }
        }
    }
    if sxx == 0.0 {
        return Err(Error::Validation("score points are all identical".into()));
    }
    let svd = h.svd(true, true);
    let rot = svd.u.expect("u requested") * svd.v_t.expect("v requested");
    let scale = svd.singular_values.sum() / sxx;
    let aligned: Vec<[f64; 2]> = scores
        .iter()
        .map(|p| {
            let a = [p[0] - mx[0], p[1] - mx[1]];
            [
                scale * (a[0] * rot[(0, 0)] + a[1] * rot[(1, 0)]) + my[0],
                scale * (a[0] * rot[(0, 1)] + a[1] * rot[(1, 1)]) + my[1],
            ]
        })
        .collect();
    let residual = aligned
        .iter()
        .zip(geo)
        .map(|(a, q)| (a[0] - q[0]).powi(2) + (a[1] - q[1]).powi(2))
        .sum();
    Ok(Alignment {
        scale,
        rotation: [[rot[(0, 0)], rot[(0, 1)]], [rot[(1, 0)], rot[(1, 1)]]],
        translation: [
            my[0] - scale * (mx[0] * rot[(0, 0)] + mx[1] * rot[(1, 0)]),
            my[1] - scale * (mx[0] * rot[(0, 1)] + mx[1] * rot[(1, 1)]),
        ],
        aligned,
        residual,
    })
}

/// Locations of the PCA columns from metadata; an error if any is missing.
pub fn geography_of(meta: &CohortMetadata, columns: &[usize]) -> Result<Vec<[f64; 2]>> {
    columns
        .iter()
        .map(|&j| {
            meta.geo(j)
                .map(|(a, b)| [a, b])
                .ok_or_else(|| Error::Validation(format!("column {j} has no location")))
        })
        .collect()
}

/// PCA followed by alignment to the metadata locations of the same columns.
pub fn pca_with_geography(zhat: &PosteriorMatrix, meta: &CohortMetadata, columns: &[usize]) -> Result<PcaResult> {
    let geo = geography_of(meta, columns)?;
    let mut pca = pca_scores_on(zhat, columns)?;
    pca.alignment = Some(align_to_geography(&pca.scores, &geo)?);
    Ok(pca)
}
