//! File writers for fits, scores and diagnostics, plus the run manifest that
//! lists every emitted file with its SHA-256 digest.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{FitSummary, PcaResult};
use crate::data::{write_matrix_csv, write_text, CohortMetadata, CountMatrix, CountSummary};
use crate::diagnostics::{ReplicateValidation, ResidualReport};
use crate::ecm::{FitConfig, FitCounters, FitResult, Prior};
use crate::error::{Error, Result};
use crate::selection::ModelScore;

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub elapsed_seconds: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// An output directory that remembers what was written to it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(OutputDir {
            root,
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Path of `name` inside the directory, recorded as an output.
    pub fn claim(&mut self, name: &str) -> PathBuf {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_owned());
        }
        self.root.join(name)
    }

    pub fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.claim(name);
        write_text(&path, contents)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.text(name, &body)
    }

    /// A CSV with a header and stringly rows, LF line endings.
    pub fn csv<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        let path = self.claim(name);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn matrix<T: std::fmt::Display>(
        &mut self,
        name: &str,
        virus_ids: &[String],
        column_ids: &[String],
        values: &Array2<T>,
    ) -> Result<()> {
        let path = self.claim(name);
        write_matrix_csv(&path, virus_ids, column_ids, values)
    }

    /// Digest every written file and write the manifest alongside them.
    pub fn finish(
        mut self,
        command: &str,
        config: serde_json::Value,
        inputs: &[PathBuf],
        elapsed: Duration,
    ) -> Result<RunManifest> {
        let inputs = inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<Vec<_>>>()?;
        let outputs = self
            .written
            .iter()
            .map(|name| {
                Ok(FileDigest {
                    path: name.clone(),
                    sha256: sha256_file(&self.root.join(name))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config,
            inputs,
            outputs,
            elapsed_seconds: elapsed.as_secs_f64(),
        };
        self.json(MANIFEST_FILE, &manifest)?;
        Ok(manifest)
    }
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

#[derive(Debug, Serialize)]
struct FitReport<'a> {
    config: &'a FitConfig,
    loglik: f64,
    iterations: usize,
    converged: bool,
    constraint_ok: bool,
    max_alpha: f64,
    min_p: f64,
    ascent_guard_activations: usize,
    counters: &'a FitCounters,
    loglik_trace: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<&'a ModelScore>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<FileDigest>,
}

/// `alpha.csv`, `r.csv`, `p.csv`, `pi.csv`, `zhat.csv` and `report.json`,
/// optionally prefixed (e.g. `shared.`) to keep several fits in one directory.
pub fn write_fit(
    out: &mut OutputDir,
    prefix: &str,
    cm: &CountMatrix,
    meta: &CohortMetadata,
    result: &FitResult,
    score: Option<&ModelScore>,
    inputs: &[PathBuf],
) -> Result<()> {
    let params = &result.params;
    let name = |s: &str| format!("{prefix}{s}");
    out.csv(
        &name("alpha.csv"),
        &["virus_id", "alpha"],
        cm.virus_ids().iter().zip(&params.alpha).map(|(id, &a)| [id.clone(), fmt(a)]),
    )?;
    out.csv(
        &name("r.csv"),
        &["column_id", "r"],
        cm.column_ids().iter().zip(&params.r).map(|(id, &r)| [id.clone(), fmt(r)]),
    )?;
    out.csv(
        &name("p.csv"),
        &["experiment_id", "p"],
        meta.experiment_labels().iter().zip(&params.p).map(|(id, &p)| [id.clone(), fmt(p)]),
    )?;
    match &params.pi {
        Prior::Shared(v) => out.csv(&name("pi.csv"), &["pi"], [[fmt(*v)]])?,
        Prior::PerVirus(v) => out.csv(
            &name("pi.csv"),
            &["virus_id", "pi"],
            cm.virus_ids().iter().zip(v).map(|(id, &p)| [id.clone(), fmt(p)]),
        )?,
        Prior::PerAnimal(v) => out.csv(
            &name("pi.csv"),
            &["column_id", "pi"],
            cm.column_ids().iter().zip(v).map(|(id, &p)| [id.clone(), fmt(p)]),
        )?,
    }
    out.matrix(&name("zhat.csv"), cm.virus_ids(), cm.column_ids(), result.posterior.z())?;
    let report = FitReport {
        config: &result.config,
        loglik: result.loglik(),
        iterations: result.iterations,
        converged: result.converged,
        constraint_ok: result.constraint_ok,
        max_alpha: params.alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        min_p: params.p.iter().cloned().fold(f64::INFINITY, f64::min),
        ascent_guard_activations: result.ascent_guard_activations,
        counters: &result.counters,
        loglik_trace: &result.loglik_trace,
        score,
        inputs: inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
    };
    out.json(&name("report.json"), &report)
}

pub fn write_scores(out: &mut OutputDir, name: &str, scores: &[ModelScore]) -> Result<()> {
    out.csv(
        name,
        &["replicates", "pi_model", "n_params", "loglik", "bic_cells", "bic_standard"],
        scores.iter().map(|s| {
            [
                s.replicate_mode.to_string(),
                s.pi_model.to_string(),
                s.n_params.to_string(),
                fmt(s.loglik),
                fmt(s.bic_cells),
                fmt(s.bic_standard),
            ]
        }),
    )
}

/// `<tag>.residuals.csv` and `<tag>.qq.csv`.
pub fn write_residuals(out: &mut OutputDir, cm: &CountMatrix, report: &ResidualReport) -> Result<()> {
    let tag = report.model_tag.to_string();
    out.csv(
        &format!("{tag}.residuals.csv"),
        &["virus_id", "column_id", "count", "residual"],
        report.cells.iter().zip(&report.residuals).map(|(&(i, j), &r)| {
            [
                cm.virus_ids()[i].clone(),
                cm.column_ids()[j].clone(),
                cm.get(i, j).to_string(),
                fmt(r),
            ]
        }),
    )?;
    out.csv(
        &format!("{tag}.qq.csv"),
        &["normal_quantile", "residual"],
        report.qq_pairs.iter().map(|&(q, r)| [fmt(q), fmt(r)]),
    )
}

/// Consistency curves, matched points and a plain-text case partition.
pub fn write_validation(out: &mut OutputDir, v: &ReplicateValidation) -> Result<()> {
    let curve_rows = [&v.threshold_curve, &v.cutoff_curve].into_iter().flat_map(|c| {
        let method = serde_json::to_value(c.method).expect("unit enum");
        let method = method.as_str().unwrap_or_default().to_owned();
        c.points.iter().map(move |p| {
            [
                method.clone(),
                fmt(p.setting),
                fmt(p.positive_proportion),
                fmt(p.consistency),
            ]
        })
    });
    out.csv(
        "consistency_curves.csv",
        &["method", "setting", "positive_proportion", "consistency"],
        curve_rows,
    )?;
    out.csv(
        "matched.csv",
        &["threshold", "positive_proportion", "threshold_consistency", "cutoff_consistency"],
        v.matched.iter().map(|m| {
            [
                m.threshold.to_string(),
                fmt(m.positive_proportion),
                fmt(m.threshold_consistency),
                opt(m.cutoff_consistency),
            ]
        }),
    )?;
    let p = v.partition;
    out.text(
        "cases.txt",
        &format!(
            "cases\t{}\nalways_consistent\t{}\nalways_inconsistent\t{}\nsensitive\t{}\n",
            p.total, p.always_consistent, p.always_inconsistent, p.sensitive
        ),
    )
}

pub fn write_pca(out: &mut OutputDir, cm: &CountMatrix, meta: &CohortMetadata, pca: &PcaResult) -> Result<()> {
    let rows = pca.columns.iter().enumerate().map(|(k, &j)| {
        let s = pca.scores[k];
        let mut row = vec![
            cm.column_ids()[j].clone(),
            meta.animal_of(j).to_owned(),
            meta.population(j).unwrap_or_default().to_owned(),
            fmt(s[0]),
            fmt(s[1]),
        ];
        if let Some(a) = &pca.alignment {
            row.push(fmt(a.aligned[k][0]));
            row.push(fmt(a.aligned[k][1]));
        }
        row
    });
    let mut header = vec!["column_id", "animal_id", "population", "pc1", "pc2"];
    if pca.alignment.is_some() {
        header.extend(["aligned_x", "aligned_y"]);
    }
    out.csv("pca_scores.csv", &header, rows)?;
    #[derive(Serialize)]
    struct Meta<'a> {
        explained_variance: [f64; 2],
        alignment: Option<AlignmentSummary<'a>>,
    }
    #[derive(Serialize)]
    struct AlignmentSummary<'a> {
        scale: f64,
        rotation: &'a [[f64; 2]; 2],
        translation: &'a [f64; 2],
        residual: f64,
    }
    out.json(
        "pca.json",
        &Meta {
            explained_variance: pca.explained_variance,
            alignment: pca.alignment.as_ref().map(|a| AlignmentSummary {
                scale: a.scale,
                rotation: &a.rotation,
                translation: &a.translation,
                residual: a.residual,
            }),
        },
    )
}

pub fn write_count_summary(out: &mut OutputDir, s: &CountSummary) -> Result<()> {
    out.json("count_summary.json", s)
}

pub fn write_fit_summary(out: &mut OutputDir, s: &FitSummary) -> Result<()> {
    out.csv(
        "row_means.csv",
        &["virus_id", "mean_nonzero", "ln_alpha"],
        s.rows
            .iter()
            .map(|r| [r.virus.clone(), opt(r.mean_nonzero), fmt(r.ln_alpha)]),
    )?;
    out.csv(
        "column_means.csv",
        &["column_id", "mean_nonzero", "ln_r"],
        s.columns
            .iter()
            .map(|c| [c.column.clone(), opt(c.mean_nonzero), fmt(c.ln_r)]),
    )?;
    out.csv(
        "zhat_by_count.csv",
        &["experiment_id", "count", "cells", "mean_zhat"],
        s.by_count
            .iter()
            .map(|c| [c.experiment.clone(), c.count.to_string(), c.cells.to_string(), fmt(c.mean_z)]),
    )?;
    let h = &s.histogram;
    out.csv(
        "zhat_histogram.csv",
        &["low", "high", "count"],
        h.counts
            .iter()
            .enumerate()
            .map(|(k, c)| [fmt(h.edges[k]), fmt(h.edges[k + 1]), c.to_string()]),
    )?;
    out.json(
        "zhat_tails.json",
        &serde_json::json!({
            "fraction_below": h.fraction_below,
            "fraction_above": h.fraction_above,
            "low": h.edges[0],
            "high": h.edges[h.edges.len() - 1],
        }),
    )
}

/// Carrier status per virus and unique animal, labelled by animal id.
pub fn write_truth(out: &mut OutputDir, cm: &CountMatrix, meta: &CohortMetadata, truth: &Array2<u8>) -> Result<()> {
    let animals: Vec<String> = meta
        .replicate_groups()
        .representatives()
        .iter()
        .map(|&j| meta.animal_of(j).to_owned())
        .collect();
    out.matrix("truth.csv", cm.virus_ids(), &animals, truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.text("a.txt", "abc").unwrap();
        assert_eq!(
            sha256_file(&dir.path().join("a.txt")).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_lists_every_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path().join("run")).unwrap();
        out.csv("x.csv", &["a", "b"], [["1", "2"]]).unwrap();
        out.json("y.json", &[1, 2]).unwrap();
        out.text("x.csv", "rewritten").unwrap();
        let m = out
            .finish("test", serde_json::json!({}), &[], Duration::from_millis(5))
            .unwrap();
        let names: Vec<_> = m.outputs.iter().map(|d| d.path.as_str()).collect();
        assert_eq!(names, ["x.csv", "y.json"]);
        let text = std::fs::read_to_string(dir.path().join("run").join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("\"command\": \"test\""));
    }
}
