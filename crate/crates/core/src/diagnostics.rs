//! Model checks: overdispersion of large counts under row-by-column Poisson
//! and negative binomial fits, hard classification rules, and agreement of
//! presence calls across replicated animals.

use ndarray::Array2;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{CohortMetadata, CountMatrix};
use crate::ecm::PosteriorMatrix;
use crate::error::{Error, Result};
use crate::optimize::maximize_shape;

/// Default: only counts above 9 enter the overdispersion fits.
pub const DEFAULT_CUTOFF: u64 = 9;

/// Cells with a count above the cutoff, and which rows and columns they touch.
#[derive(Debug, Clone, PartialEq)]
pub struct QualifyingCells {
    pub cutoff: u64,
    /// `(virus, column, count)` in row-major order.
    pub cells: Vec<(usize, usize, u64)>,
    pub rows: Vec<usize>,
    pub columns: Vec<usize>,
    /// Rows and columns without any qualifying cell.
    pub excluded_rows: Vec<usize>,
    pub excluded_columns: Vec<usize>,
}

impl QualifyingCells {
    pub fn new(cm: &CountMatrix, cutoff: u64) -> Result<Self> {
        let (m, n) = (cm.n_viruses(), cm.n_columns());
        let mut cells = Vec::new();
        let mut row_hit = vec![false; m];
        let mut col_hit = vec![false; n];
        for i in 0..m {
            for j in 0..n {
                let x = cm.get(i, j);
                if x > cutoff {
                    cells.push((i, j, x));
                    row_hit[i] = true;
                    col_hit[j] = true;
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::Validation(format!("no counts above {cutoff}")));
        }
        let split = |hits: &[bool]| -> (Vec<usize>, Vec<usize>) { (0..hits.len()).partition(|&k| hits[k]) };
        let (rows, excluded_rows) = split(&row_hit);
        let (columns, excluded_columns) = split(&col_hit);
        Ok(QualifyingCells {
            cutoff,
            cells,
            rows,
            columns,
            excluded_rows,
            excluded_columns,
        })
    }
}

/// Poisson fit with mean `a_i * b_j`; excluded rows and columns are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoissonRowCol {
    pub a: Vec<Option<f64>>,
    pub b: Vec<Option<f64>>,
    pub loglik: f64,
    pub iterations: usize,
}

/// Negative binomial fit with shape `r_j` and success probability `alpha_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NbRowCol {
    pub r: Vec<Option<f64>>,
    pub alpha: Vec<Option<f64>>,
    pub loglik_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowColFit {
    Poisson(PoissonRowCol),
    NegativeBinomial(NbRowCol),
}

impl RowColFit {
    pub fn tag(&self) -> ModelTag {
        match self {
            RowColFit::Poisson(_) => ModelTag::PoissonRowCol,
            RowColFit::NegativeBinomial(_) => ModelTag::NbRowCol,
        }
    }

    /// Fitted mean and variance of a cell; `None` for excluded rows/columns.
    pub fn moments(&self, virus: usize, column: usize) -> Option<(f64, f64)> {
        match self {
            RowColFit::Poisson(f) => {
                let mu = f.a[virus]? * f.b[column]?;
                Some((mu, mu))
            }
            RowColFit::NegativeBinomial(f) => {
                let (r, alpha) = (f.r[column]?, f.alpha[virus]?);
                let mu = r * (1.0 - alpha) / alpha;
                Some((mu, mu / alpha))
            }
        }
    }
}

fn poisson_loglik(q: &QualifyingCells, a: &[f64], b: &[f64]) -> f64 {
    q.cells
        .iter()
        .map(|&(i, j, x)| {
            let mu = a[i] * b[j];
            x as f64 * mu.ln() - mu - statrs::function::factorial::ln_factorial(x)
        })
        .sum()
}

/// Maximum likelihood Poisson row-by-column fit on the cells above `cutoff`,
/// normalized so the kept `b_j` sum to the number of kept columns.
pub fn fit_poisson_rowcol(cm: &CountMatrix, cutoff: u64) -> Result<PoissonRowCol> {
    let q = QualifyingCells::new(cm, cutoff)?;
    let (m, n) = (cm.n_viruses(), cm.n_columns());
    let mut row_sum = vec![0.0; m];
    let mut col_sum = vec![0.0; n];
    for &(i, j, x) in &q.cells {
        row_sum[i] += x as f64;
        col_sum[j] += x as f64;
    }
    let mut a = vec![0.0; m];
    let mut b = vec![0.0; n];
    for &j in &q.columns {
        b[j] = 1.0;
    }
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut b_total = vec![0.0; m];
        for &(i, j, _) in &q.cells {
            b_total[i] += b[j];
        }
        let mut change: f64 = 0.0;
        for &i in &q.rows {
            let new = row_sum[i] / b_total[i];
            change = change.max(((new - a[i]) / new).abs());
            a[i] = new;
        }
        let mut a_total = vec![0.0; n];
        for &(i, j, _) in &q.cells {
            a_total[j] += a[i];
        }
        for &j in &q.columns {
            let new = col_sum[j] / a_total[j];
            change = change.max(((new - b[j]) / new).abs());
            b[j] = new;
        }
        if change < 1e-10 || iterations >= 100_000 {
            break;
        }
    }
    let scale = q.columns.len() as f64 / q.columns.iter().map(|&j| b[j]).sum::<f64>();
    for &j in &q.columns {
        b[j] *= scale;
    }
    for &i in &q.rows {
        a[i] /= scale;
    }
    let loglik = poisson_loglik(&q, &a, &b);
    let keep = |v: &[f64], idx: &[usize], len: usize| {
        let mut out = vec![None; len];
        for &k in idx {
            out[k] = Some(v[k]);
        }
        out
    };
    Ok(PoissonRowCol {
        a: keep(&a, &q.rows, m),
        b: keep(&b, &q.columns, n),
        loglik,
        iterations,
    })
}

fn nb_loglik(q: &QualifyingCells, r: &[f64], alpha: &[f64]) -> f64 {
    q.cells
        .iter()
        .map(|&(i, j, x)| {
            let p = crate::nb::NbParams::new(r[j], alpha[i]).expect("fitted parameters in range");
            crate::nb::nb_log_pmf(x, p)
        })
        .sum()
}

/// Negative binomial row-by-column fit on the cells above `cutoff` by
/// coordinate ascent: closed-form `alpha_i` given `r`, then a concave 1-D
/// maximization for each `r_j`, until the relative log-likelihood change is
/// below 1e-8.
pub fn fit_nb_rowcol(cm: &CountMatrix, cutoff: u64) -> Result<NbRowCol> {
    let q = QualifyingCells::new(cm, cutoff)?;
    let (m, n) = (cm.n_viruses(), cm.n_columns());
    let mut by_column: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n];
    let mut by_row: Vec<Vec<(usize, u64)>> = vec![Vec::new(); m];
    for &(i, j, x) in &q.cells {
        by_column[j].push((i, x));
        by_row[i].push((j, x));
    }

    let mut r = vec![1.0; n];
    let mut alpha = vec![0.5; m];
    let update_alpha = |r: &[f64], alpha: &mut [f64]| {
        for &i in &q.rows {
            let (num, den) = by_row[i]
                .iter()
                .fold((0.0, 0.0), |(nu, de), &(j, x)| (nu + r[j], de + r[j] + x as f64));
            alpha[i] = (num / den).clamp(1e-12, 1.0 - 1e-12);
        }
    };
    update_alpha(&r, &mut alpha);
    let mut trace = vec![nb_loglik(&q, &r, &alpha)];
    for _ in 0..10_000 {
        for &j in &q.columns {
            let counts: Vec<u64> = by_column[j].iter().map(|&(_, x)| x).collect();
            let linear: f64 = by_column[j].iter().map(|&(i, _)| alpha[i].ln()).sum();
            r[j] = maximize_shape(&counts, linear, r[j]).r;
        }
        update_alpha(&r, &mut alpha);
        let ll = nb_loglik(&q, &r, &alpha);
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if ((ll - prev) / ll.abs().max(1.0)).abs() < 1e-8 {
            break;
        }
    }
    let keep = |v: &[f64], idx: &[usize], len: usize| {
        let mut out = vec![None; len];
        for &k in idx {
            out[k] = Some(v[k]);
        }
        out
    };
    Ok(NbRowCol {
        r: keep(&r, &q.columns, n),
        alpha: keep(&alpha, &q.rows, m),
        loglik_trace: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelTag {
    PoissonRowCol,
    NbRowCol,
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelTag::PoissonRowCol => "poisson",
            ModelTag::NbRowCol => "negative-binomial",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub model_tag: ModelTag,
    /// `(virus, column)` of each residual, row-major.
    pub cells: Vec<(usize, usize)>,
    pub residuals: Vec<f64>,
    /// `(standard normal quantile, sorted residual)` at plotting positions `(k - 0.5) / N`.
    pub qq_pairs: Vec<(f64, f64)>,
    pub fit: RowColFit,
}

impl ResidualReport {
    pub fn sample_variance(&self) -> f64 {
        let n = self.residuals.len() as f64;
        let mean = self.residuals.iter().sum::<f64>() / n;
        self.residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }
}

/// Pearson residuals `(x - mu) / sigma` of every cell above `cutoff`.
pub fn pearson_residuals(cm: &CountMatrix, fit: &RowColFit, cutoff: u64) -> Result<ResidualReport> {
    let q = QualifyingCells::new(cm, cutoff)?;
    let mut cells = Vec::with_capacity(q.cells.len());
    let mut residuals = Vec::with_capacity(q.cells.len());
    for &(i, j, x) in &q.cells {
        let (mu, var) = fit.moments(i, j).ok_or_else(|| {
            Error::Validation(format!("fit has no estimate for cell ({i}, {j}); was it made on this matrix?"))
        })?;
        cells.push((i, j));
        residuals.push((x as f64 - mu) / var.sqrt());
    }
    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let total = sorted.len() as f64;
    let qq_pairs = sorted
        .iter()
        .enumerate()
        .map(|(k, &r)| (normal.inverse_cdf((k as f64 + 0.5) / total), r))
        .collect();
    Ok(ResidualReport {
        model_tag: fit.tag(),
        cells,
        residuals,
        qq_pairs,
        fit: fit.clone(),
    })
}

/// Presence call `x >= threshold`.
pub fn threshold_classify(cm: &CountMatrix, threshold: u64) -> Array2<u8> {
    cm.counts().mapv(|x| u8::from(x >= threshold))
}

/// Presence call `z > cutoff`.
pub fn posterior_classify(zhat: &PosteriorMatrix, cutoff: f64) -> Array2<u8> {
    zhat.z().mapv(|z| u8::from(z > cutoff))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodTag {
    CountThreshold,
    PosteriorCutoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    /// The count threshold or posterior cutoff that produced this point.
    pub setting: f64,
    pub positive_proportion: f64,
    pub consistency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyCurve {
    pub method: MethodTag,
    pub points: Vec<CurvePoint>,
    pub sensitive_case_count: usize,
}

impl ConsistencyCurve {
    /// Consistency at a given positive proportion, linearly interpolated
    /// between the two nearest points; `None` outside the curve's range.
    pub fn consistency_at(&self, proportion: f64) -> Option<f64> {
        let mut pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .map(|p| (p.positive_proportion, p.consistency))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let upper = pts.iter().position(|p| p.0 >= proportion)?;
        let (x1, y1) = pts[upper];
        if x1 == proportion || upper == 0 {
            return (x1 == proportion).then_some(y1);
        }
        let (x0, y0) = pts[upper - 1];
        Some(y0 + (y1 - y0) * (proportion - x0) / (x1 - x0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CasePartition {
    pub total: usize,
    pub always_consistent: usize,
    pub always_inconsistent: usize,
    pub sensitive: usize,
}

/// A threshold-curve point and the cutoff curve at the same positive proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedPoint {
    pub threshold: u64,
    pub positive_proportion: f64,
    pub threshold_consistency: f64,
    pub cutoff_consistency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub thresholds: Vec<u64>,
    pub cutoffs: Vec<f64>,
}

impl Default for SweepConfig {
    /// Count thresholds 1..=10 and posterior cutoffs 0, 0.01, ..., 1.
    fn default() -> Self {
        SweepConfig {
            thresholds: (1..=10).collect(),
            cutoffs: (0..=100).map(|k| k as f64 / 100.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateValidation {
    pub threshold_curve: ConsistencyCurve,
    pub cutoff_curve: ConsistencyCurve,
    pub partition: CasePartition,
    /// `(virus, replicate group)` of every threshold-sensitive case.
    pub sensitive_cases: Vec<(usize, usize)>,
    pub matched: Vec<MatchedPoint>,
}

/// Whether all replicate columns of a case agree under a call rule.
fn unanimous(members: &[usize], call: impl Fn(usize) -> bool) -> bool {
    let first = call(members[0]);
    members[1..].iter().all(|&j| call(j) == first)
}

/// Agreement of presence calls across replicated animals, for count
/// thresholds and for posterior cutoffs. `zhat` should come from a fit that
/// treated replicate columns as independent animals.
pub fn replicate_consistency(
    cm: &CountMatrix,
    meta: &CohortMetadata,
    zhat: &PosteriorMatrix,
    sweep: &SweepConfig,
) -> Result<ReplicateValidation> {
    if zhat.dim() != cm.counts().dim() || meta.n_columns() != cm.n_columns() {
        return Err(Error::Validation("posterior, counts and metadata disagree in shape".into()));
    }
    if sweep.thresholds.is_empty() || sweep.cutoffs.is_empty() {
        return Err(Error::Validation("empty threshold or cutoff sweep".into()));
    }
    let groups: Vec<(usize, &Vec<usize>)> = meta
        .replicate_groups()
        .groups()
        .iter()
        .enumerate()
        .filter(|(_, g)| g.len() >= 2)
        .collect();
    if groups.is_empty() {
        return Err(Error::Validation("no replicated animals in metadata".into()));
    }

    let mut partition = CasePartition {
        total: 0,
        always_consistent: 0,
        always_inconsistent: 0,
        sensitive: 0,
    };
    let mut sensitive = Vec::new();
    for i in 0..cm.n_viruses() {
        for &(g, members) in &groups {
            partition.total += 1;
            let agree = sweep
                .thresholds
                .iter()
                .filter(|&&t| unanimous(members, |j| cm.get(i, j) >= t))
                .count();
            if agree == sweep.thresholds.len() {
                partition.always_consistent += 1;
            } else if agree == 0 {
                partition.always_inconsistent += 1;
            } else {
                partition.sensitive += 1;
                sensitive.push((i, g));
            }
        }
    }

    let group_members = meta.replicate_groups().groups();
    let cells: usize = sensitive.iter().map(|&(_, g)| group_members[g].len()).sum();
    let curve = |method: MethodTag, settings: Vec<f64>, call: &dyn Fn(f64, usize, usize) -> bool| {
        let points = settings
            .into_iter()
            .map(|s| {
                let (mut positive, mut consistent) = (0usize, 0usize);
                for &(i, g) in &sensitive {
                    let members = &group_members[g];
                    positive += members.iter().filter(|&&j| call(s, i, j)).count();
                    consistent += usize::from(unanimous(members, |j| call(s, i, j)));
                }
                let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
                CurvePoint {
                    setting: s,
                    positive_proportion: ratio(positive, cells),
                    consistency: ratio(consistent, sensitive.len()),
                }
            })
            .collect();
        ConsistencyCurve {
            method,
            points,
            sensitive_case_count: sensitive.len(),
        }
    };
    let threshold_curve = curve(
        MethodTag::CountThreshold,
        sweep.thresholds.iter().map(|&t| t as f64).collect(),
        &|t, i, j| cm.get(i, j) as f64 >= t,
    );
    let cutoff_curve = curve(MethodTag::PosteriorCutoff, sweep.cutoffs.clone(), &|c, i, j| {
        zhat.get(i, j) > c
    });

    let matched = threshold_curve
        .points
        .iter()
        .map(|p| MatchedPoint {
            threshold: p.setting as u64,
            positive_proportion: p.positive_proportion,
            threshold_consistency: p.consistency,
            cutoff_consistency: cutoff_curve.consistency_at(p.positive_proportion),
        })
        .collect();

    Ok(ReplicateValidation {
        threshold_curve,
        cutoff_curve,
        partition,
        sensitive_cases: sensitive,
        matched,
    })
}
