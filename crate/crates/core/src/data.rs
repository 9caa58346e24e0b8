//! Count matrix and cohort metadata: validation, CSV ingestion and summaries.
//!
//! The count matrix file is a CSV with a header row of column (sample) ids;
//! the first column of every body row is the virus id and the remaining cells
//! are non-negative integer read counts. The metadata file is a CSV with the
//! header columns `column_id,animal_id,experiment_id` and the optional
//! `longitude,latitude,population`.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

/// The `m x n` read-count table, viruses as rows and sample columns as columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    virus_ids: Vec<String>,
    column_ids: Vec<String>,
    counts: Array2<u64>,
}

impl CountMatrix {
    pub fn new(virus_ids: Vec<String>, column_ids: Vec<String>, counts: Array2<u64>) -> Result<Self> {
        if virus_ids.is_empty() || column_ids.is_empty() {
            return Err(Error::Validation(
                "count matrix needs at least one virus and one column".into(),
            ));
        }
        if counts.dim() != (virus_ids.len(), column_ids.len()) {
            return Err(Error::Validation(format!(
                "count table is {:?} but there are {} virus ids and {} column ids",
                counts.dim(),
                virus_ids.len(),
                column_ids.len()
            )));
        }
        check_unique("virus id", &virus_ids)?;
        check_unique("column id", &column_ids)?;
        Ok(CountMatrix {
            virus_ids,
            column_ids,
            counts,
        })
    }

    pub fn n_viruses(&self) -> usize {
        self.virus_ids.len()
    }

    pub fn n_columns(&self) -> usize {
        self.column_ids.len()
    }

    pub fn virus_ids(&self) -> &[String] {
        &self.virus_ids
    }

    pub fn column_ids(&self) -> &[String] {
        &self.column_ids
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    #[inline]
    pub fn get(&self, virus: usize, column: usize) -> u64 {
        self.counts[[virus, column]]
    }

    /// Keep only the listed columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<CountMatrix> {
        let ids = columns.iter().map(|&j| self.column_ids[j].clone()).collect();
        let counts = self.counts.select(ndarray::Axis(1), columns);
        CountMatrix::new(self.virus_ids.clone(), ids, counts)
    }
}

fn check_unique(what: &str, ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Validation(format!("duplicate {what} `{id}`")));
        }
    }
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Row ids, column ids and cell values of a matrix file.
pub type Table<T> = (Vec<String>, Vec<String>, Array2<T>);

fn load_table<T: std::str::FromStr>(path: &Path, expected: &str) -> Result<Table<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let shown = path.display().to_string();

    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(Error::Validation(format!("{shown}: empty matrix file"))),
    };
    let column_ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();

    let mut virus_ids = Vec::new();
    let mut cells = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let mut fields = record.iter();
        virus_ids.push(fields.next().unwrap_or_default().to_owned());
        for (j, cell) in fields.enumerate() {
            let value = cell.parse::<T>().map_err(|_| Error::Parse {
                path: shown.clone(),
                line,
                column: column_ids[j].clone(),
                message: format!("`{cell}` is not {expected}"),
            })?;
            cells.push(value);
        }
    }
    let values = Array2::from_shape_vec((virus_ids.len(), column_ids.len()), cells)
        .map_err(|e| Error::Validation(format!("{shown}: {e}")))?;
    Ok((virus_ids, column_ids, values))
}

pub fn load_count_matrix(path: impl AsRef<Path>) -> Result<CountMatrix> {
    let (virus_ids, column_ids, counts) = load_table::<u64>(path.as_ref(), "a non-negative integer count")?;
    CountMatrix::new(virus_ids, column_ids, counts)
}

/// Read a real-valued table in the count-matrix layout, such as a saved
/// posterior matrix.
pub fn load_value_matrix(path: impl AsRef<Path>) -> Result<Table<f64>> {
    load_table::<f64>(path.as_ref(), "a number")
}

/// Write a table of values in the count-matrix layout: header row of column
/// ids, one row per virus. Line endings are LF.
pub fn write_matrix_csv<T: std::fmt::Display>(
    path: &Path,
    virus_ids: &[String],
    column_ids: &[String],
    values: &Array2<T>,
) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    writer.write_record(std::iter::once("virus_id").chain(column_ids.iter().map(String::as_str)))?;
    for (i, row) in values.rows().into_iter().enumerate() {
        let mut record = Vec::with_capacity(row.len() + 1);
        record.push(virus_ids[i].clone());
        record.extend(row.iter().map(|v| v.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn save_count_matrix(path: impl AsRef<Path>, cm: &CountMatrix) -> Result<()> {
    write_matrix_csv(path.as_ref(), &cm.virus_ids, &cm.column_ids, &cm.counts)
}

/// How replicate columns of the same animal are treated by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicateMode {
    /// Every column is its own animal.
    Independent,
    /// Columns from the same animal share one carrier status.
    Identical,
}

impl std::fmt::Display for ReplicateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReplicateMode::Independent => "independent",
            ReplicateMode::Identical => "identical",
        })
    }
}

/// A partition of column indices into animals. Groups are ordered by their
/// lowest member, which is also the group's representative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
}

impl Grouping {
    pub fn singletons(n: usize) -> Self {
        Grouping {
            groups: (0..n).map(|j| vec![j]).collect(),
            group_of: (0..n).collect(),
        }
    }

    fn from_labels(labels: &[String]) -> Self {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut group_of = Vec::with_capacity(labels.len());
        for (j, label) in labels.iter().enumerate() {
            let g = *index.entry(label.as_str()).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(j);
            group_of.push(g);
        }
        Grouping { groups, group_of }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_of(&self, column: usize) -> usize {
        self.group_of[column]
    }

    pub fn representatives(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g[0]).collect()
    }
}

/// Per-column experiment assignment, replicate structure and optional
/// geographic coordinates (longitude, latitude in degrees).
#[derive(Debug, Clone, PartialEq)]
pub struct CohortMetadata {
    animal_of_column: Vec<String>,
    experiment_of_column: Vec<usize>,
    experiment_labels: Vec<String>,
    replicates: Grouping,
    geo: Vec<Option<(f64, f64)>>,
    population: Vec<Option<String>>,
}

impl CohortMetadata {
    /// Build metadata from per-column animal and experiment labels.
    /// Experiments are numbered in order of first appearance.
    pub fn new(
        animal_of_column: Vec<String>,
        experiment_label_of_column: Vec<String>,
        geo: Vec<Option<(f64, f64)>>,
        population: Vec<Option<String>>,
    ) -> Result<Self> {
        let n = animal_of_column.len();
        if n == 0 || experiment_label_of_column.len() != n || geo.len() != n || population.len() != n {
            return Err(Error::Validation(
                "metadata fields must all have one entry per column".into(),
            ));
        }
        let mut experiment_labels: Vec<String> = Vec::new();
        let mut experiment_of_column = Vec::with_capacity(n);
        for label in &experiment_label_of_column {
            if label.is_empty() {
                return Err(Error::Validation("column without an experiment label".into()));
            }
            let k = match experiment_labels.iter().position(|l| l == label) {
                Some(k) => k,
                None => {
                    experiment_labels.push(label.clone());
                    experiment_labels.len() - 1
                }
            };
            experiment_of_column.push(k);
        }
        if animal_of_column.iter().any(String::is_empty) {
            return Err(Error::Validation("column without an animal label".into()));
        }
        let replicates = Grouping::from_labels(&animal_of_column);
        Ok(CohortMetadata {
            animal_of_column,
            experiment_of_column,
            experiment_labels,
            replicates,
            geo,
            population,
        })
    }

    /// Metadata for a matrix with no replication and a single experiment.
    pub fn trivial(n_columns: usize) -> Self {
        CohortMetadata::new(
            (0..n_columns).map(|j| format!("a{j}")).collect(),
            vec!["1".into(); n_columns],
            vec![None; n_columns],
            vec![None; n_columns],
        )
        .expect("non-empty trivial metadata")
    }

    pub fn n_columns(&self) -> usize {
        self.animal_of_column.len()
    }

    pub fn n_experiments(&self) -> usize {
        self.experiment_labels.len()
    }

    pub fn experiment_of(&self, column: usize) -> usize {
        self.experiment_of_column[column]
    }

    pub fn experiment_of_column(&self) -> &[usize] {
        &self.experiment_of_column
    }

    pub fn experiment_labels(&self) -> &[String] {
        &self.experiment_labels
    }

    pub fn animal_of(&self, column: usize) -> &str {
        &self.animal_of_column[column]
    }

    pub fn replicate_groups(&self) -> &Grouping {
        &self.replicates
    }

    /// One representative (the lowest column index) per replicate group.
    pub fn unique_set(&self) -> Vec<usize> {
        self.replicates.representatives()
    }

    /// Grouping used by the likelihood under the given replicate treatment.
    pub fn grouping(&self, mode: ReplicateMode) -> Grouping {
        match mode {
            ReplicateMode::Independent => Grouping::singletons(self.n_columns()),
            ReplicateMode::Identical => self.replicates.clone(),
        }
    }

    pub fn geo(&self, column: usize) -> Option<(f64, f64)> {
        self.geo[column]
    }

    pub fn population(&self, column: usize) -> Option<&str> {
        self.population[column].as_deref()
    }

    /// Columns belonging to each experiment.
    pub fn columns_by_experiment(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_experiments()];
        for (j, &k) in self.experiment_of_column.iter().enumerate() {
            out[k].push(j);
        }
        out
    }
}

fn optional_field<'a>(record: &'a csv::StringRecord, idx: Option<usize>) -> Option<&'a str> {
    idx.and_then(|i| record.get(i)).filter(|s| !s.is_empty())
}

/// Read cohort metadata and align it to the columns of `cm`.
pub fn load_metadata(path: impl AsRef<Path>, cm: &CountMatrix) -> Result<CohortMetadata> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(open(path)?);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let required = |name: &str| {
        find(name).ok_or_else(|| Error::Validation(format!("{shown}: missing `{name}` header")))
    };
    let col_idx = required("column_id")?;
    let animal_idx = required("animal_id")?;
    let exp_idx = required("experiment_id")?;
    let lon_idx = find("longitude");
    let lat_idx = find("latitude");
    let pop_idx = find("population");

    let position: HashMap<&str, usize> = cm
        .column_ids()
        .iter()
        .enumerate()
        .map(|(j, id)| (id.as_str(), j))
        .collect();
    let n = cm.n_columns();
    let mut animal = vec![None; n];
    let mut experiment = vec![String::new(); n];
    let mut geo = vec![None; n];
    let mut population = vec![None; n];

    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |column: &str, message: String| Error::Parse {
            path: shown.clone(),
            line,
            column: column.to_owned(),
            message,
        };
        let column_id = record.get(col_idx).unwrap_or_default();
        let j = *position.get(column_id).ok_or_else(|| {
            Error::Validation(format!(
                "{shown}: line {line}: column `{column_id}` is not in the count matrix"
            ))
        })?;
        if animal[j].is_some() {
            return Err(Error::Validation(format!(
                "{shown}: line {line}: column `{column_id}` listed twice"
            )));
        }
        let animal_id = optional_field(&record, Some(animal_idx))
            .ok_or_else(|| parse_err("animal_id", "missing animal label".into()))?;
        let experiment_id = optional_field(&record, Some(exp_idx)).ok_or_else(|| {
            Error::Validation(format!(
                "{shown}: line {line}: column `{column_id}` has no experiment label"
            ))
        })?;
        animal[j] = Some(animal_id.to_owned());
        experiment[j] = experiment_id.to_owned();

        let coord = |name: &str, idx: Option<usize>| -> Result<Option<f64>> {
            optional_field(&record, idx)
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| parse_err(name, format!("`{s}` is not a coordinate")))
                })
                .transpose()
        };
        geo[j] = match (coord("longitude", lon_idx)?, coord("latitude", lat_idx)?) {
            (Some(lon), Some(lat)) => Some((lon, lat)),
            (None, None) => None,
            _ => {
                return Err(parse_err(
                    "longitude",
                    "longitude and latitude must be given together".into(),
                ))
            }
        };
        population[j] = optional_field(&record, pop_idx).map(str::to_owned);
    }

    let animal = animal
        .into_iter()
        .enumerate()
        .map(|(j, a)| {
            a.ok_or_else(|| {
                Error::Validation(format!(
                    "{shown}: column `{}` has no metadata row (experiment label missing)",
                    cm.column_ids()[j]
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CohortMetadata::new(animal, experiment, geo, population)
}

pub fn save_metadata(path: impl AsRef<Path>, cm: &CountMatrix, meta: &CohortMetadata) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    let with_pop = (0..meta.n_columns()).any(|j| meta.population(j).is_some());
    let mut header = vec!["column_id", "animal_id", "experiment_id", "longitude", "latitude"];
    if with_pop {
        header.push("population");
    }
    writer.write_record(&header)?;
    for j in 0..meta.n_columns() {
        let (lon, lat) = meta
            .geo(j)
            .map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
        let mut record = vec![
            cm.column_ids()[j].clone(),
            meta.animal_of(j).to_owned(),
            meta.experiment_labels()[meta.experiment_of(j)].clone(),
            lon,
            lat,
        ];
        if with_pop {
            record.push(meta.population(j).unwrap_or_default().to_owned());
        }
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountSummary {
    pub zero_fraction: f64,
    /// Fraction of cells with a count between 1 and 10 inclusive.
    pub low_fraction: f64,
    pub mean_nonzero: f64,
    pub dims: (usize, usize),
}

pub fn summarize_counts(cm: &CountMatrix) -> CountSummary {
    let total = cm.counts.len() as f64;
    let (mut zeros, mut low, mut nonzero, mut nonzero_sum) = (0usize, 0usize, 0usize, 0f64);
    for &x in cm.counts.iter() {
        match x {
            0 => zeros += 1,
            1..=10 => low += 1,
            _ => {}
        }
        if x > 0 {
            nonzero += 1;
            nonzero_sum += x as f64;
        }
    }
    CountSummary {
        zero_fraction: zeros as f64 / total,
        low_fraction: low as f64 / total,
        mean_nonzero: if nonzero == 0 { 0.0 } else { nonzero_sum / nonzero as f64 },
        dims: cm.counts.dim(),
    }
}

/// Drop viruses seen in fewer than `min_animals` distinct animals with at
/// least `min_count` reads. Viruses without carriers leave the carrier
/// component unidentified, so fits are usually run on abridged matrices.
pub fn abridge(cm: &CountMatrix, meta: &CohortMetadata, min_animals: usize, min_count: u64) -> Result<CountMatrix> {
    let groups = meta.replicate_groups().groups();
    let keep: Vec<usize> = (0..cm.n_viruses())
        .filter(|&i| {
            groups
                .iter()
                .filter(|g| g.iter().any(|&j| cm.get(i, j) >= min_count))
                .count()
                >= min_animals
        })
        .collect();
    let ids = keep.iter().map(|&i| cm.virus_ids[i].clone()).collect();
    CountMatrix::new(ids, cm.column_ids.clone(), cm.counts.select(ndarray::Axis(0), &keep))
}

/// Write `contents` to `path`, mapping the error.
pub(crate) fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}
