use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{CohortMetadata, CountMatrix, Grouping, ReplicateMode};
use crate::error::{Error, Result};

/// Parameterization of the prior carrier probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiModel {
    /// One probability shared by every cell.
    Shared,
    /// One probability per virus (row).
    PerVirus,
    /// One probability per animal (column).
    PerAnimal,
}

impl PiModel {
    pub const ALL: [PiModel; 3] = [PiModel::Shared, PiModel::PerVirus, PiModel::PerAnimal];
}

impl std::fmt::Display for PiModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PiModel::Shared => "shared",
            PiModel::PerVirus => "per-virus",
            PiModel::PerAnimal => "per-animal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSmoothing {
    pub numerator_add: f64,
    pub denominator_add: f64,
}

impl Default for AlphaSmoothing {
    fn default() -> Self {
        AlphaSmoothing {
            numerator_add: 0.05,
            denominator_add: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub pi_model: PiModel,
    pub replicate_mode: ReplicateMode,
    /// Initial posterior is `min(1, x / init_divisor)`.
    pub init_divisor: f64,
    pub init_r0: f64,
    /// Stop once the summed absolute change of the posterior drops below this.
    pub z_tolerance: f64,
    pub max_iterations: usize,
    pub alpha_smoothing: AlphaSmoothing,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            pi_model: PiModel::PerVirus,
            replicate_mode: ReplicateMode::Identical,
            init_divisor: 10.0,
            init_r0: 100.0,
            z_tolerance: 0.01,
            max_iterations: 2000,
            alpha_smoothing: AlphaSmoothing::default(),
        }
    }
}

impl FitConfig {
    pub fn with_models(pi_model: PiModel, replicate_mode: ReplicateMode) -> Self {
        FitConfig {
            pi_model,
            replicate_mode,
            ..FitConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} must be positive, got {v}")))
            }
        };
        positive("init divisor", self.init_divisor)?;
        positive("initial r", self.init_r0)?;
        positive("posterior tolerance", self.z_tolerance)?;
        if self.max_iterations == 0 {
            return Err(Error::Validation("max iterations must be at least 1".into()));
        }
        let s = self.alpha_smoothing;
        if !(s.numerator_add >= 0.0 && s.denominator_add >= 0.0) {
            return Err(Error::Validation("alpha smoothing constants must be non-negative".into()));
        }
        Ok(())
    }
}

/// Column-level structure the likelihood needs: which columns form one
/// animal and which experiment each column belongs to.
#[derive(Debug, Clone)]
pub struct Design {
    grouping: Grouping,
    experiment_of: Vec<usize>,
    columns_by_experiment: Vec<Vec<usize>>,
}

impl Design {
    pub fn new(meta: &CohortMetadata, mode: ReplicateMode) -> Result<Self> {
        let columns_by_experiment = meta.columns_by_experiment();
        if let Some(k) = columns_by_experiment.iter().position(Vec::is_empty) {
            return Err(Error::Validation(format!("experiment {} has no columns", k + 1)));
        }
        Ok(Design {
            grouping: meta.grouping(mode),
            experiment_of: meta.experiment_of_column().to_vec(),
            columns_by_experiment,
        })
    }

    pub fn check_matrix(&self, cm: &CountMatrix) -> Result<()> {
        if cm.n_columns() != self.experiment_of.len() {
            return Err(Error::Validation(format!(
                "metadata describes {} columns, count matrix has {}",
                self.experiment_of.len(),
                cm.n_columns()
            )));
        }
        Ok(())
    }

    pub fn grouping(&self) -> &Grouping {
        &self.grouping
    }

    pub fn n_columns(&self) -> usize {
        self.experiment_of.len()
    }

    pub fn n_experiments(&self) -> usize {
        self.columns_by_experiment.len()
    }

    #[inline]
    pub fn experiment_of(&self, column: usize) -> usize {
        self.experiment_of[column]
    }

    pub fn columns_by_experiment(&self) -> &[Vec<usize>] {
        &self.columns_by_experiment
    }
}

/// Prior carrier probabilities under one of the three parameterizations.
/// `PerAnimal` holds one value per column; members of one replicate group
/// carry equal values when replicates are treated as identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "model", content = "values")]
pub enum Prior {
    Shared(f64),
    PerVirus(Vec<f64>),
    PerAnimal(Vec<f64>),
}

impl Prior {
    #[inline]
    pub fn at(&self, virus: usize, column: usize) -> f64 {
        match self {
            Prior::Shared(p) => *p,
            Prior::PerVirus(v) => v[virus],
            Prior::PerAnimal(v) => v[column],
        }
    }

    pub fn model(&self) -> PiModel {
        match self {
            Prior::Shared(_) => PiModel::Shared,
            Prior::PerVirus(_) => PiModel::PerVirus,
            Prior::PerAnimal(_) => PiModel::PerAnimal,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Prior::Shared(p) => std::slice::from_ref(p),
            Prior::PerVirus(v) | Prior::PerAnimal(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub pi: Prior,
    /// Per-column shape.
    pub r: Vec<f64>,
    /// Per-virus success probability of the carrier component.
    pub alpha: Vec<f64>,
    /// Per-experiment success probability of the background component.
    pub p: Vec<f64>,
}

impl MixtureParams {
    pub fn validate(&self, m: usize, n: usize, k: usize) -> Result<()> {
        let len_ok = self.r.len() == n
            && self.alpha.len() == m
            && self.p.len() == k
            && match &self.pi {
                Prior::Shared(_) => true,
                Prior::PerVirus(v) => v.len() == m,
                Prior::PerAnimal(v) => v.len() == n,
            };
        if !len_ok {
            return Err(Error::Validation("parameter vector lengths do not match the data".into()));
        }
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !self.alpha.iter().chain(&self.p).all(|&v| open(v)) {
            return Err(Error::Domain("alpha and p must lie in (0, 1)".into()));
        }
        if !self.r.iter().all(|&r| r > 0.0 && r.is_finite()) {
            return Err(Error::Domain("r must be positive".into()));
        }
        if !self.pi.values().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::Domain("pi must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Whether every carrier success probability is below every background
    /// one, i.e. carriers have the larger expected count in every column.
    pub fn carrier_means_dominate(&self) -> bool {
        let max_alpha = self.alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_p = self.p.iter().cloned().fold(f64::INFINITY, f64::min);
        max_alpha < min_p
    }
}

/// Posterior carrier probabilities, one per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    z: Array2<f64>,
}

impl PosteriorMatrix {
    pub fn new(z: Array2<f64>) -> Result<Self> {
        if !z.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Validation("posterior entries must lie in [0, 1]".into()));
        }
        Ok(PosteriorMatrix { z })
    }

    pub(crate) fn from_raw(z: Array2<f64>) -> Self {
        debug_assert!(z.iter().all(|v| (0.0..=1.0).contains(v)));
        PosteriorMatrix { z }
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    #[inline]
    pub fn get(&self, virus: usize, column: usize) -> f64 {
        self.z[[virus, column]]
    }

    pub fn dim(&self) -> (usize, usize) {
        self.z.dim()
    }

    /// Sum of absolute entrywise differences.
    pub fn l1_distance(&self, other: &PosteriorMatrix) -> f64 {
        self.z.iter().zip(other.z.iter()).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn max_abs_difference(&self, other: &PosteriorMatrix) -> f64 {
        self.z
            .iter()
            .zip(other.z.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Counters for the safeguards applied while fitting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FitCounters {
    pub alpha_clamps: usize,
    pub p_clamps: usize,
    pub r_at_floor: usize,
    pub r_at_ceiling: usize,
    /// Cells where both components had zero likelihood; posterior set to the prior.
    pub degenerate_posteriors: usize,
    /// Alpha updates taken in exact rather than smoothed form.
    pub exact_alpha_substitutions: usize,
}

impl std::ops::AddAssign for FitCounters {
    fn add_assign(&mut self, o: Self) {
        self.alpha_clamps += o.alpha_clamps;
        self.p_clamps += o.p_clamps;
        self.r_at_floor += o.r_at_floor;
        self.r_at_ceiling += o.r_at_ceiling;
        self.degenerate_posteriors += o.degenerate_posteriors;
        self.exact_alpha_substitutions += o.exact_alpha_substitutions;
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub config: FitConfig,
    pub params: MixtureParams,
    pub posterior: PosteriorMatrix,
    /// Observed-data log-likelihood after each M-step.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `max alpha < min p` at the final estimates.
    pub constraint_ok: bool,
    /// Iterations in which the observed log-likelihood check forced every
    /// alpha back to its exact update.
    pub ascent_guard_activations: usize,
    pub counters: FitCounters,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace holds at least the initial value")
    }
}
