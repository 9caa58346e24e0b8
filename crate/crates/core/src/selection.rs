//! Parameter counts, BIC scores and ranking of the three prior models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CohortMetadata, CountMatrix, ReplicateMode};
use crate::ecm::{fit, FitConfig, FitResult, PiModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub viruses: usize,
    pub columns: usize,
    pub experiments: usize,
}

/// `alpha` per virus, `r` per column, `p` per experiment, plus the prior.
pub fn count_parameters(pi_model: PiModel, dims: Dims) -> usize {
    let Dims {
        viruses: m,
        columns: n,
        experiments: k,
    } = dims;
    let prior = match pi_model {
        PiModel::Shared => 1,
        PiModel::PerVirus => m,
        PiModel::PerAnimal => n,
    };
    m + n + k + prior
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bic {
    /// `-2 loglik + cells * ln(d)`. At realistic sizes the penalty swamps the
    /// likelihood, so it is reported but not used for ranking by default.
    pub cells: f64,
    /// `-2 loglik + d * ln(cells)`, the conventional Schwarz penalty.
    pub standard: f64,
}

pub fn bic(loglik: f64, d: f64, cells: usize) -> Bic {
    let cells = cells as f64;
    Bic {
        cells: -2.0 * loglik + cells * d.ln(),
        standard: -2.0 * loglik + d * cells.ln(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankBy {
    Cells,
    #[default]
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelScore {
    pub pi_model: PiModel,
    pub replicate_mode: ReplicateMode,
    pub n_params: usize,
    pub loglik: f64,
    pub bic_cells: f64,
    pub bic_standard: f64,
}

impl ModelScore {
    fn key(&self, by: RankBy) -> f64 {
        match by {
            RankBy::Cells => self.bic_cells,
            RankBy::Standard => self.bic_standard,
        }
    }
}

/// Sort ascending by the chosen BIC, ties going to fewer parameters.
pub fn rank(scores: &mut [ModelScore], by: RankBy) {
    scores.sort_by(|a, b| {
        a.key(by)
            .total_cmp(&b.key(by))
            .then(a.n_params.cmp(&b.n_params))
    });
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Scores in rank order, best first.
    pub scores: Vec<ModelScore>,
    /// The fit of the top-ranked model.
    pub best: FitResult,
}

pub fn score_fit(cm: &CountMatrix, meta: &CohortMetadata, result: &FitResult) -> ModelScore {
    let dims = Dims {
        viruses: cm.n_viruses(),
        columns: cm.n_columns(),
        experiments: meta.n_experiments(),
    };
    let n_params = count_parameters(result.config.pi_model, dims);
    let loglik = result.loglik();
    let b = bic(loglik, n_params as f64, cm.n_viruses() * cm.n_columns());
    ModelScore {
        pi_model: result.config.pi_model,
        replicate_mode: result.config.replicate_mode,
        n_params,
        loglik,
        bic_cells: b.cells,
        bic_standard: b.standard,
    }
}

/// Fit all three prior models under `base.replicate_mode` and rank them.
pub fn select_model(
    cm: &CountMatrix,
    meta: &CohortMetadata,
    base: &FitConfig,
    by: RankBy,
) -> Result<Selection> {
    let fits: Vec<Result<FitResult>> = PiModel::ALL
        .par_iter()
        .map(|&pi_model| {
            let cfg = FitConfig { pi_model, ..*base };
            fit(cm, meta, &cfg).map_err(|e| Error::Model {
                model: format!("{pi_model}/{}", base.replicate_mode),
                source: Box::new(e),
            })
        })
        .collect();
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let mut scored: Vec<(ModelScore, FitResult)> =
        fits.into_iter().map(|f| (score_fit(cm, meta, &f), f)).collect();
    scored.sort_by(|a, b| {
        a.0.key(by)
            .total_cmp(&b.0.key(by))
            .then(a.0.n_params.cmp(&b.0.n_params))
    });
    let mut iter = scored.into_iter();
    let (first, best) = iter.next().expect("three models");
    let mut scores = vec![first];
    scores.extend(iter.map(|(s, _)| s));
    Ok(Selection { scores, best })
}
