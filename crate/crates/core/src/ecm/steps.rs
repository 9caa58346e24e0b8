//! E-step, conditional maximization steps and the observed-data likelihood.
//!
//! Work is split across viruses (rows) or columns with rayon; every
//! reduction across tasks is performed serially in index order, so results do
//! not depend on the number of worker threads.

use ndarray::Array2;
use rayon::prelude::*;

use super::model::{AlphaSmoothing, Design, MixtureParams, PiModel, PosteriorMatrix, Prior};
use crate::data::CountMatrix;
use crate::error::{Error, Result};
use crate::nb::{log_add_exp, log_binom_coef};
use crate::optimize::{maximize_shape, Bound};

pub const PROB_FLOOR: f64 = 1e-12;
pub const PROB_CEIL: f64 = 1.0 - 1e-12;

/// Clamp a probability into `[PROB_FLOOR, PROB_CEIL]`, reporting whether it moved.
fn clamp_probability(v: f64) -> (f64, bool) {
    if v < PROB_FLOOR {
        (PROB_FLOOR, true)
    } else if v > PROB_CEIL {
        (PROB_CEIL, true)
    } else {
        (v, false)
    }
}

struct LogParams {
    ln_alpha: Vec<f64>,
    ln_1m_alpha: Vec<f64>,
    ln_p: Vec<f64>,
    ln_1m_p: Vec<f64>,
}

impl LogParams {
    fn new(params: &MixtureParams) -> Self {
        LogParams {
            ln_alpha: params.alpha.iter().map(|a| a.ln()).collect(),
            ln_1m_alpha: params.alpha.iter().map(|a| (-a).ln_1p()).collect(),
            ln_p: params.p.iter().map(|p| p.ln()).collect(),
            ln_1m_p: params.p.iter().map(|p| (-p).ln_1p()).collect(),
        }
    }
}

/// Component log-likelihoods of one replicate group, omitting the binomial
/// coefficient shared by both components.
#[inline]
fn group_component_logs(
    cm: &CountMatrix,
    design: &Design,
    params: &MixtureParams,
    logs: &LogParams,
    virus: usize,
    members: &[usize],
) -> (f64, f64) {
    let (mut carrier, mut background) = (0.0, 0.0);
    for &j in members {
        let x = cm.get(virus, j) as f64;
        let k = design.experiment_of(j);
        let r = params.r[j];
        carrier += r * logs.ln_alpha[virus];
        background += r * logs.ln_p[k];
        if x > 0.0 {
            carrier += x * logs.ln_1m_alpha[virus];
            background += x * logs.ln_1m_p[k];
        }
    }
    (carrier, background)
}

#[inline]
fn ln_prior(pi: f64) -> (f64, f64) {
    (pi.ln(), (-pi).ln_1p())
}

#[derive(Debug, Clone)]
pub struct EStep {
    pub posterior: PosteriorMatrix,
    /// Cells where both weighted components vanished; the prior was used.
    pub degenerate: usize,
}

/// Posterior carrier probability of every cell, computed once per replicate
/// group and copied to each of its columns.
pub fn e_step(cm: &CountMatrix, design: &Design, params: &MixtureParams) -> EStep {
    let (m, n) = (cm.n_viruses(), cm.n_columns());
    let logs = LogParams::new(params);
    let groups = design.grouping().groups();
    let rows: Vec<(Vec<f64>, usize)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            let mut degenerate = 0;
            for members in groups {
                let pi = params.pi.at(i, members[0]);
                let (carrier, background) = group_component_logs(cm, design, params, &logs, i, members);
                let (ln_pi, ln_1m_pi) = ln_prior(pi);
                let a = ln_pi + carrier;
                let b = ln_1m_pi + background;
                let z = if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
                    degenerate += members.len();
                    pi
                } else {
                    (a - log_add_exp(a, b)).exp().clamp(0.0, 1.0)
                };
                for &j in members {
                    row[j] = z;
                }
            }
            (row, degenerate)
        })
        .collect();
    let degenerate = rows.iter().map(|(_, d)| d).sum();
    let flat: Vec<f64> = rows.into_iter().flat_map(|(r, _)| r).collect();
    EStep {
        posterior: PosteriorMatrix::from_raw(Array2::from_shape_vec((m, n), flat).expect("m x n")),
        degenerate,
    }
}

/// Candidate updates of one carrier success probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaCandidate {
    /// Pseudo-count smoothed update; `None` only when smoothing is disabled
    /// and the posterior weight is zero.
    pub smoothed: Option<f64>,
    /// Exact conditional maximizer; `None` when no cell carries posterior weight.
    pub exact: Option<f64>,
    pub smoothed_clamped: bool,
    pub exact_clamped: bool,
}

pub fn cm_step_alpha(
    cm: &CountMatrix,
    z: &PosteriorMatrix,
    r: &[f64],
    smoothing: AlphaSmoothing,
) -> Vec<AlphaCandidate> {
    (0..cm.n_viruses())
        .into_par_iter()
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for (j, &rj) in r.iter().enumerate() {
                let w = z.get(i, j);
                num += w * rj;
                den += w * (cm.get(i, j) as f64 + rj);
            }
            let ratio = |num: f64, den: f64| (den > 0.0).then(|| clamp_probability(num / den));
            let smoothed = ratio(num + smoothing.numerator_add, den + smoothing.denominator_add);
            let exact = ratio(num, den);
            AlphaCandidate {
                smoothed: smoothed.map(|s| s.0),
                exact: exact.map(|e| e.0),
                smoothed_clamped: smoothed.is_some_and(|s| s.1),
                exact_clamped: exact.is_some_and(|e| e.1),
            }
        })
        .collect()
}

/// The part of the expected complete-data log-likelihood that depends on the
/// carrier success probability of `virus`.
pub fn alpha_objective(cm: &CountMatrix, z: &PosteriorMatrix, r: &[f64], virus: usize, alpha: f64) -> f64 {
    let (ln_a, ln_1m_a) = (alpha.ln(), (-alpha).ln_1p());
    r.iter()
        .enumerate()
        .map(|(j, &rj)| {
            let w = z.get(virus, j);
            let x = cm.get(virus, j) as f64;
            if w == 0.0 {
                0.0
            } else if x == 0.0 {
                w * rj * ln_a
            } else {
                w * (rj * ln_a + x * ln_1m_a)
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PUpdate {
    pub p: Vec<f64>,
    /// Experiments whose update was degenerate or fell outside the open interval.
    pub clamped: usize,
}

pub fn cm_step_p(cm: &CountMatrix, z: &PosteriorMatrix, r: &[f64], design: &Design) -> PUpdate {
    // Per-column (numerator, weighted count) sums, reduced per experiment in column order.
    let partial: Vec<(f64, f64)> = (0..cm.n_columns())
        .into_par_iter()
        .map(|j| {
            let (mut weight, mut weighted_x) = (0.0, 0.0);
            for i in 0..cm.n_viruses() {
                let w = 1.0 - z.get(i, j);
                weight += w;
                weighted_x += w * cm.get(i, j) as f64;
            }
            (weight * r[j], weighted_x)
        })
        .collect();
    let mut clamped = 0;
    let p = design
        .columns_by_experiment()
        .iter()
        .map(|cols| {
            let num: f64 = cols.iter().map(|&j| partial[j].0).sum();
            let weighted_x: f64 = cols.iter().map(|&j| partial[j].1).sum();
            if num <= 0.0 || weighted_x <= 0.0 {
                clamped += 1;
                return PROB_CEIL;
            }
            let (v, c) = clamp_probability(num / (num + weighted_x));
            clamped += c as usize;
            v
        })
        .collect();
    PUpdate { p, clamped }
}

/// The part of the expected complete-data log-likelihood that depends on the
/// background success probability of experiment `k`.
pub fn p_objective(cm: &CountMatrix, z: &PosteriorMatrix, r: &[f64], design: &Design, k: usize, p: f64) -> f64 {
    let (ln_p, ln_1m_p) = (p.ln(), (-p).ln_1p());
    design.columns_by_experiment()[k]
        .iter()
        .map(|&j| {
            (0..cm.n_viruses())
                .map(|i| {
                    let w = 1.0 - z.get(i, j);
                    let x = cm.get(i, j) as f64;
                    if x == 0.0 {
                        w * r[j] * ln_p
                    } else {
                        w * (r[j] * ln_p + x * ln_1m_p)
                    }
                })
                .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RUpdate {
    pub r: Vec<f64>,
    pub bounds: Vec<Bound>,
}

/// Per-column nonzero counts and the coefficient of `r` in the shape objective.
pub fn shape_problem(
    cm: &CountMatrix,
    z: &PosteriorMatrix,
    alpha: &[f64],
    p: &[f64],
    design: &Design,
    column: usize,
) -> (Vec<u64>, f64) {
    let ln_p = p[design.experiment_of(column)].ln();
    let mut counts = Vec::new();
    let mut linear = 0.0;
    for (i, &a) in alpha.iter().enumerate() {
        let w = z.get(i, column);
        linear += w * a.ln() + (1.0 - w) * ln_p;
        let x = cm.get(i, column);
        if x > 0 {
            counts.push(x);
        }
    }
    (counts, linear)
}

pub fn cm_step_r(
    cm: &CountMatrix,
    z: &PosteriorMatrix,
    alpha: &[f64],
    p: &[f64],
    design: &Design,
    current: &[f64],
) -> RUpdate {
    let updates: Vec<_> = (0..cm.n_columns())
        .into_par_iter()
        .map(|j| {
            let (counts, linear) = shape_problem(cm, z, alpha, p, design, j);
            maximize_shape(&counts, linear, current[j])
        })
        .collect();
    RUpdate {
        r: updates.iter().map(|u| u.r).collect(),
        bounds: updates.iter().map(|u| u.bound).collect(),
    }
}

/// Prior update: averages of the posterior over unique animals. Columns of
/// one replicate group are first averaged into a single group value.
pub fn cm_step_pi(z: &PosteriorMatrix, design: &Design, model: PiModel) -> Prior {
    let (m, n) = z.dim();
    let groups = design.grouping().groups();
    let n_groups = groups.len() as f64;
    let group_mean = |i: usize, members: &[usize]| -> f64 {
        members.iter().map(|&j| z.get(i, j)).sum::<f64>() / members.len() as f64
    };
    let row_mean = |i: usize| groups.iter().map(|g| group_mean(i, g)).sum::<f64>() / n_groups;
    match model {
        PiModel::Shared => {
            let total: f64 = (0..m).map(row_mean).sum();
            Prior::Shared((total / m as f64).clamp(0.0, 1.0))
        }
        PiModel::PerVirus => Prior::PerVirus((0..m).map(|i| row_mean(i).clamp(0.0, 1.0)).collect()),
        PiModel::PerAnimal => {
            let mut values = vec![0.0; n];
            for members in groups {
                let v = (0..m).map(|i| group_mean(i, members)).sum::<f64>() / m as f64;
                for &j in members {
                    values[j] = v.clamp(0.0, 1.0);
                }
            }
            Prior::PerAnimal(values)
        }
    }
}

/// Log of the mixture likelihood, one factor per virus and unique animal.
pub fn observed_log_likelihood(cm: &CountMatrix, design: &Design, params: &MixtureParams) -> Result<f64> {
    let logs = LogParams::new(params);
    let groups = design.grouping().groups();
    let binom_by_column: Vec<f64> = (0..cm.n_columns())
        .into_par_iter()
        .map(|j| {
            (0..cm.n_viruses())
                .map(|i| log_binom_coef(params.r[j], cm.get(i, j)))
                .sum()
        })
        .collect();
    let rows: Vec<std::result::Result<f64, usize>> = (0..cm.n_viruses())
        .into_par_iter()
        .map(|i| {
            let mut total = 0.0;
            for (g, members) in groups.iter().enumerate() {
                let (ln_pi, ln_1m_pi) = ln_prior(params.pi.at(i, members[0]));
                let (carrier, background) = group_component_logs(cm, design, params, &logs, i, members);
                let cell = log_add_exp(ln_pi + carrier, ln_1m_pi + background);
                if !cell.is_finite() {
                    return Err(g);
                }
                total += cell;
            }
            Ok(total)
        })
        .collect();
    let mut total: f64 = binom_by_column.iter().sum();
    for (i, row) in rows.into_iter().enumerate() {
        match row {
            Ok(v) => total += v,
            Err(g) => {
                return Err(Error::NonFinite {
                    virus: cm.virus_ids()[i].clone(),
                    column: cm.column_ids()[groups[g][0]].clone(),
                })
            }
        }
    }
    if !total.is_finite() {
        let j = binom_by_column.iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(Error::NonFinite {
            virus: cm.virus_ids()[0].clone(),
            column: cm.column_ids()[j].clone(),
        });
    }
    Ok(total)
}
