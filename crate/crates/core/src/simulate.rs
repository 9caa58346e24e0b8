//! Synthetic count matrices drawn from the mixture model with known truth.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{CohortMetadata, CountMatrix};
use crate::ecm::{MixtureParams, PiModel, Prior};
use crate::error::{Error, Result};

/// A parameter vector, either given or drawn per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Values {
    /// Explicit values; a single value is broadcast.
    Fixed { values: Vec<f64> },
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    /// Each entry picks one of `values` uniformly at random.
    Choice { values: Vec<f64> },
}

impl Values {
    pub fn fixed(v: f64) -> Self {
        Values::Fixed { values: vec![v] }
    }

    fn draw(&self, len: usize, rng: &mut impl Rng, name: &str) -> Result<Vec<f64>> {
        match self {
            Values::Fixed { values } if values.len() == 1 => Ok(vec![values[0]; len]),
            Values::Fixed { values } if values.len() == len => Ok(values.clone()),
            Values::Fixed { values } => Err(Error::Validation(format!(
                "{name}: expected 1 or {len} values, got {}",
                values.len()
            ))),
            Values::Uniform { low, high } if low <= high => {
                Ok((0..len).map(|_| rng.random_range(*low..=*high)).collect())
            }
            Values::LogUniform { low, high } if *low > 0.0 && low <= high => {
                let (a, b) = (low.ln(), high.ln());
                Ok((0..len).map(|_| rng.random_range(a..=b).exp()).collect())
            }
            Values::Choice { values } if !values.is_empty() => {
                Ok((0..len).map(|_| values[rng.random_range(0..values.len())]).collect())
            }
            _ => Err(Error::Validation(format!("{name}: invalid value range {self:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n_viruses: usize,
    /// Number of data columns, replicate columns included.
    pub n_columns: usize,
    pub n_experiments: usize,
    pub pi_model: PiModel,
    /// One value, one per virus, or one per unique animal depending on `pi_model`.
    pub pi: Values,
    pub r: Values,
    pub alpha: Values,
    pub p: Values,
    /// `(replicate column, original column)` pairs; the replicate shares the
    /// original's animal and carrier status.
    #[serde(default)]
    pub replicates: Vec<(usize, usize)>,
    /// Experiment of each column; contiguous equal blocks when absent.
    #[serde(default)]
    pub experiment_of_column: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for SimSpec {
    /// Desk-scale cohort: 200 viruses, 40 columns in 2 experiments, the last
    /// four columns re-sequencing the first four animals in the other experiment.
    fn default() -> Self {
        SimSpec {
            n_viruses: 200,
            n_columns: 40,
            n_experiments: 2,
            pi_model: PiModel::PerVirus,
            pi: Values::Uniform { low: 0.1, high: 0.9 },
            r: Values::Uniform { low: 5.0, high: 50.0 },
            alpha: Values::LogUniform { low: 0.005, high: 0.3 },
            p: Values::Uniform { low: 0.95, high: 0.99 },
            replicates: (0..4).map(|a| (36 + a, a)).collect(),
            experiment_of_column: None,
            seed: 1,
        }
    }
}

impl SimSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn experiments(&self) -> Result<Vec<usize>> {
        let (n, k) = (self.n_columns, self.n_experiments);
        let exp = match &self.experiment_of_column {
            Some(e) if e.len() == n => e.clone(),
            Some(e) => {
                return Err(Error::Validation(format!(
                    "experiment assignment has {} entries for {n} columns",
                    e.len()
                )))
            }
            None => (0..n).map(|j| j * k / n).collect(),
        };
        for kk in 0..k {
            if !exp.contains(&kk) {
                return Err(Error::Validation(format!("experiment {} has no columns", kk + 1)));
            }
        }
        if exp.iter().any(|&e| e >= k) {
            return Err(Error::Validation("experiment index out of range".into()));
        }
        Ok(exp)
    }

    /// Animal index of every column; unique animals are numbered by first column.
    fn animals(&self) -> Result<(Vec<usize>, usize)> {
        let n = self.n_columns;
        let mut original: Vec<usize> = (0..n).collect();
        for &(rep, orig) in &self.replicates {
            if rep >= n || orig >= n || rep == orig {
                return Err(Error::Validation(format!("invalid replicate pair ({rep}, {orig})")));
            }
            original[rep] = orig;
        }
        let root = |mut j: usize| {
            for _ in 0..n {
                if original[j] == j {
                    return Some(j);
                }
                j = original[j];
            }
            None
        };
        let mut animal_of_root = vec![usize::MAX; n];
        let mut count = 0;
        let mut animal = Vec::with_capacity(n);
        for j in 0..n {
            let r = root(j).ok_or_else(|| Error::Validation("cyclic replicate plan".into()))?;
            if animal_of_root[r] == usize::MAX {
                animal_of_root[r] = count;
                count += 1;
            }
            animal.push(animal_of_root[r]);
        }
        Ok((animal, count))
    }
}

#[derive(Debug, Clone)]
pub struct SimData {
    pub counts: CountMatrix,
    pub meta: CohortMetadata,
    /// Carrier status, `m x` unique animals, animals ordered by first column.
    pub truth: Array2<u8>,
    /// Carrier status broadcast to every column.
    pub truth_by_column: Array2<u8>,
    /// Generating parameters; `pi` is expanded to columns for `PerAnimal`.
    pub params: MixtureParams,
}

/// Draw a negative binomial count as a Poisson with Gamma-distributed mean.
pub fn sample_negative_binomial(rng: &mut impl Rng, r: f64, theta: f64) -> u64 {
    let gamma = Gamma::new(r, (1.0 - theta) / theta).expect("valid gamma parameters");
    let lambda = gamma.sample(rng);
    sample_poisson(rng, lambda)
}

pub fn sample_poisson(rng: &mut impl Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(lambda).expect("valid Poisson mean").sample(rng);
    draw as u64
}

pub fn simulate(spec: &SimSpec) -> Result<SimData> {
    let (m, n, k) = (spec.n_viruses, spec.n_columns, spec.n_experiments);
    if m == 0 || n == 0 || k == 0 {
        return Err(Error::Validation("simulation dimensions must be positive".into()));
    }
    let experiment_of = spec.experiments()?;
    let (animal_of, n_animals) = spec.animals()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let alpha = spec.alpha.draw(m, &mut rng, "alpha")?;
    let p = spec.p.draw(k, &mut rng, "p")?;
    let r = spec.r.draw(n, &mut rng, "r")?;
    let pi_len = match spec.pi_model {
        PiModel::Shared => 1,
        PiModel::PerVirus => m,
        PiModel::PerAnimal => n_animals,
    };
    let pi_values = spec.pi.draw(pi_len, &mut rng, "pi")?;
    let params = MixtureParams {
        pi: match spec.pi_model {
            PiModel::Shared => Prior::Shared(pi_values[0]),
            PiModel::PerVirus => Prior::PerVirus(pi_values.clone()),
            PiModel::PerAnimal => Prior::PerAnimal(animal_of.iter().map(|&a| pi_values[a]).collect()),
        },
        r,
        alpha,
        p,
    };
    params.validate(m, n, k)?;

    let truth = Array2::from_shape_fn((m, n_animals), |(i, a)| {
        let pi = match spec.pi_model {
            PiModel::Shared => pi_values[0],
            PiModel::PerVirus => pi_values[i],
            PiModel::PerAnimal => pi_values[a],
        };
        u8::from(rng.random::<f64>() < pi)
    });
    let truth_by_column = Array2::from_shape_fn((m, n), |(i, j)| truth[[i, animal_of[j]]]);

    let mut counts = Array2::<u64>::zeros((m, n));
    for j in 0..n {
        let mut col_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        col_rng.set_stream(j as u64 + 1);
        let theta_bg = params.p[experiment_of[j]];
        for i in 0..m {
            let theta = if truth_by_column[[i, j]] == 1 {
                params.alpha[i]
            } else {
                theta_bg
            };
            counts[[i, j]] = sample_negative_binomial(&mut col_rng, params.r[j], theta);
        }
    }

    let width = |count: usize| count.to_string().len();
    let virus_ids = (0..m).map(|i| format!("v{:0w$}", i + 1, w = width(m))).collect();
    let column_ids = (0..n).map(|j| format!("c{:0w$}", j + 1, w = width(n))).collect();
    let counts = CountMatrix::new(virus_ids, column_ids, counts)?;
    let meta = CohortMetadata::new(
        animal_of
            .iter()
            .map(|a| format!("a{:0w$}", a + 1, w = width(n_animals)))
            .collect(),
        experiment_of.iter().map(|e| (e + 1).to_string()).collect(),
        vec![None; n],
        vec![None; n],
    )?;
    Ok(SimData {
        counts,
        meta,
        truth,
        truth_by_column,
        params,
    })
}
