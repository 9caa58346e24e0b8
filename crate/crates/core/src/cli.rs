//! The `ervmix` command line. Every subcommand writes its outputs and a
//! `manifest.json` into `--out`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{fit_summary_tables, pca_scores_on, pca_with_geography};
use crate::data::{
    abridge, load_count_matrix, load_metadata, load_value_matrix, save_count_matrix, save_metadata,
    summarize_counts, CohortMetadata, CountMatrix, ReplicateMode,
};
use crate::diagnostics::{
    fit_nb_rowcol, fit_poisson_rowcol, pearson_residuals, replicate_consistency, QualifyingCells, RowColFit,
    SweepConfig,
};
use crate::ecm::{fit, FitConfig, PiModel, PosteriorMatrix};
use crate::error::{Error, Result};
use crate::output::{self, OutputDir, RunManifest};
use crate::selection::{score_fit, select_model, RankBy};
use crate::simulate::{simulate, SimSpec};

#[derive(Debug, Parser, Serialize)]
#[command(name = "ervmix", version, about = "Negative-binomial mixture presence calls from read-count matrices")]
pub struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "ERVMIX_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Fit one mixture model.
    Fit(FitArgs),
    /// Fit all three prior models and rank them by BIC.
    Select(SelectArgs),
    /// Replicate-consistency curves for count thresholds and posterior cutoffs.
    Validate(ValidateArgs),
    /// Poisson and negative binomial residuals of the large counts.
    Diagnose(DiagnoseArgs),
    /// PCA of a posterior matrix, aligned to geography when locations are known.
    Pca(PcaArgs),
    /// Generate a synthetic cohort with known carrier status.
    Simulate(SimulateArgs),
    /// Count-matrix summary and, unless `--counts-only`, fit summaries.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiModelArg {
    Shared,
    PerVirus,
    PerAnimal,
}

impl From<PiModelArg> for PiModel {
    fn from(v: PiModelArg) -> Self {
        match v {
            PiModelArg::Shared => PiModel::Shared,
            PiModelArg::PerVirus => PiModel::PerVirus,
            PiModelArg::PerAnimal => PiModel::PerAnimal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicatesArg {
    Independent,
    Identical,
}

impl From<ReplicatesArg> for ReplicateMode {
    fn from(v: ReplicatesArg) -> Self {
        match v {
            ReplicatesArg::Independent => ReplicateMode::Independent,
            ReplicatesArg::Identical => ReplicateMode::Identical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankByArg {
    /// `-2 loglik + mn ln d`
    Cells,
    /// `-2 loglik + d ln(mn)`
    Standard,
}

#[derive(Debug, Args, Serialize)]
pub struct InputArgs {
    /// Count matrix CSV.
    #[arg(long, env = "ERVMIX_COUNTS")]
    pub counts: PathBuf,

    /// Metadata CSV; without it every column is its own animal in one experiment.
    #[arg(long, env = "ERVMIX_META")]
    pub meta: Option<PathBuf>,

    /// Keep only viruses seen in at least this many animals (0 keeps all).
    #[arg(long, default_value_t = 0, env = "ERVMIX_MIN_ANIMALS")]
    pub min_animals: usize,

    /// Read count that counts as "seen" for `--min-animals`.
    #[arg(long, default_value_t = 1, env = "ERVMIX_MIN_COUNT")]
    pub min_count: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = "ERVMIX_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = PiModelArg::PerVirus, env = "ERVMIX_PI_MODEL")]
    pub pi_model: PiModelArg,

    /// Initial posterior is min(1, x / c).
    #[arg(long = "init-c", default_value_t = 10.0, env = "ERVMIX_INIT_C")]
    pub init_c: f64,

    /// Initial shape for every column.
    #[arg(long = "init-r0", default_value_t = 100.0, env = "ERVMIX_INIT_R0")]
    pub init_r0: f64,

    /// Stop when the summed absolute posterior change falls below this.
    #[arg(long, default_value_t = 0.01, env = "ERVMIX_TOL")]
    pub tol: f64,

    #[arg(long = "max-iters", default_value_t = 2000, env = "ERVMIX_MAX_ITERS")]
    pub max_iters: usize,
}

impl ModelArgs {
    fn config(&self, replicates: ReplicateMode) -> FitConfig {
        FitConfig {
            pi_model: self.pi_model.into(),
            replicate_mode: replicates,
            init_divisor: self.init_c,
            init_r0: self.init_r0,
            z_tolerance: self.tol,
            max_iterations: self.max_iters,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = ReplicatesArg::Identical, env = "ERVMIX_REPLICATES")]
    pub replicates: ReplicatesArg,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Replicate treatment; both when omitted.
    #[arg(long, value_enum, env = "ERVMIX_REPLICATES")]
    pub replicates: Option<ReplicatesArg>,
    #[arg(long, value_enum, default_value_t = RankByArg::Standard, env = "ERVMIX_RANK_BY")]
    pub rank_by: RankByArg,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Largest count threshold in the sweep (thresholds 1..=N).
    #[arg(long, default_value_t = 10)]
    pub max_threshold: u64,
    /// Spacing of the posterior-cutoff grid on [0, 1].
    #[arg(long = "cutoff-step", default_value_t = 0.01)]
    pub cutoff_step: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Only counts above this value enter the fits.
    #[arg(long = "cutoff-c", default_value_t = 9, env = "ERVMIX_CUTOFF_C")]
    pub cutoff: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PcaColumns {
    /// One column per animal (the first of each replicate group).
    Unique,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct PcaArgs {
    /// Posterior matrix CSV, as written by `fit`.
    #[arg(long)]
    pub zhat: PathBuf,
    /// Metadata CSV; locations, when present, trigger alignment.
    #[arg(long, env = "ERVMIX_META")]
    pub meta: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PcaColumns::Unique)]
    pub columns: PcaColumns,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// `default` or a JSON spec file.
    #[arg(long, default_value = "default", env = "ERVMIX_SPEC")]
    pub spec: String,
    /// Overrides the spec's seed.
    #[arg(long, env = "ERVMIX_SEED")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = ReplicatesArg::Identical, env = "ERVMIX_REPLICATES")]
    pub replicates: ReplicatesArg,
    /// Skip the fit and report only count statistics.
    #[arg(long)]
    pub counts_only: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

struct Loaded {
    counts: CountMatrix,
    meta: CohortMetadata,
    paths: Vec<PathBuf>,
}

fn load(input: &InputArgs) -> Result<Loaded> {
    let counts = load_count_matrix(&input.counts)?;
    let mut paths = vec![input.counts.clone()];
    let meta = match &input.meta {
        Some(p) => {
            paths.push(p.clone());
            load_metadata(p, &counts)?
        }
        None => CohortMetadata::trivial(counts.n_columns()),
    };
    let counts = if input.min_animals > 0 {
        abridge(&counts, &meta, input.min_animals, input.min_count)?
    } else {
        counts
    };
    Ok(Loaded { counts, meta, paths })
}

fn load_spec(spec: &str) -> Result<SimSpec> {
    if spec == "default" {
        return Ok(SimSpec::default());
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Run a parsed command line and return its manifest.
pub fn execute(cli: &Cli) -> Result<RunManifest> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<RunManifest> {
    let start = Instant::now();
    let config = serde_json::to_value(&cli.command)?;
    let (name, out_dir) = match &cli.command {
        Command::Fit(a) => ("fit", &a.out.out),
        Command::Select(a) => ("select", &a.out.out),
        Command::Validate(a) => ("validate", &a.out.out),
        Command::Diagnose(a) => ("diagnose", &a.out.out),
        Command::Pca(a) => ("pca", &a.out.out),
        Command::Simulate(a) => ("simulate", &a.out.out),
        Command::Summarize(a) => ("summarize", &a.out.out),
    };
    let mut out = OutputDir::create(out_dir)?;
    let inputs = match &cli.command {
        Command::Fit(a) => run_fit(a, &mut out)?,
        Command::Select(a) => run_select(a, &mut out)?,
        Command::Validate(a) => run_validate(a, &mut out)?,
        Command::Diagnose(a) => run_diagnose(a, &mut out)?,
        Command::Pca(a) => run_pca(a, &mut out)?,
        Command::Simulate(a) => run_simulate(a, &mut out)?,
        Command::Summarize(a) => run_summarize(a, &mut out)?,
    };
    out.finish(name, config, &inputs, start.elapsed())
}

fn run_fit(a: &FitArgs, out: &mut OutputDir) -> Result<Vec<PathBuf>> {
    let d = load(&a.input)?;
    let result = fit(&d.counts, &d.meta, &a.model.config(a.replicates.into()))?;
    let score = score_fit(&d.counts, &d.meta, &result);
    output::write_fit(out, "", &d.counts, &d.meta, &result, Some(&score), &d.paths)?;
    Ok(d.paths)
}

fn run_select(a: &SelectArgs, out: &mut OutputDir) -> Result<Vec<PathBuf>> {
    let d = load(&a.input)?;
    let modes = match a.replicates {
        Some(r) => vec![r.into()],
        None => vec![ReplicateMode::Independent, ReplicateMode::Identical],
    };
    let by = match a.rank_by {
        RankByArg::Cells => RankBy::Cells,
        RankByArg::Standard => RankBy::Standard,
    };
    let mut scores = Vec::new();
    for mode in modes {
        let sel = select_model(&d.counts, &d.meta, &a.model.config(mode), by)?;
        let prefix = format!("best-{mode}.");
        output::write_fit(out, &prefix, &d.counts, &d.meta, &sel.best, Some(&sel.scores[0]), &[])?;
        scores.extend(sel.scores);
    }
    output::write_scores(out, "scores.csv", &scores)?;
    Ok(d.paths)
}

fn run_validate(a: &ValidateArgs, out: &mut OutputDir) -> Result<Vec<PathBuf>> {
    let d = load(&a.input)?;
    if !(a.cutoff_step > 0.0 && a.cutoff_step <= 1.0) || a.max_threshold == 0 {
        return Err(Error::Validation("cutoff step must be in (0, 1] and max threshold positive".into()));
    }
    let result = fit(&d.counts, &d.meta, &a.model.config(ReplicateMode::Independent))?;
    let steps = (1.0 / a.cutoff_step).round() as usize;
    let sweep = SweepConfig {
        thresholds: (1..=a.max_threshold).collect(),
        cutoffs: (0..=steps).map(|k| (k as f64 * a.cutoff_step).min(1.0)).collect(),
    };
    let v = replicate_consistency(&d.counts, &d.meta, &result.posterior, &sweep)?;
    output::write_validation(out, &v)?;
    out.matrix("zhat.csv", d.counts.virus_ids(), d.counts.column_ids(), result.posterior.z())?;
    Ok(d.paths)
}

fn run_diagnose(a: &DiagnoseArgs, out: &mut OutputDir) -> Result<Vec<PathBuf>> {
    let d = load(&a.input)?;
    let q = QualifyingCells::new(&d.counts, a.cutoff)?;
    let poisson = fit_poisson_rowcol(&d.counts, a.cutoff)?;
    let nb = fit_nb_rowcol(&d.counts, a.cutoff)?;
    let nb_trace = nb.loglik_trace.clone();
    let mut variances = serde_json::Map::new();
    for f in [RowColFit::Poisson(poisson.clone()), RowColFit::NegativeBinomial(nb)] {
        let report = pearson_residuals(&d.counts, &f, a.cutoff)?;
        variances.insert(report.model_tag.to_string(), report.sample_variance().into());
        output::write_residuals(out, &d.counts, &report)?;
    }
    let ids = |idx: &[usize], all: &[String]| idx.iter().map(|&k| all[k].clone()).collect::<Vec<_>>();
    out.json(
        "diagnose.json",
        &serde_json::json!({
            "cutoff": a.cutoff,
            "qualifying_cells": q.cells.len(),
            "residual_variance": variances,
            "poisson_loglik": poisson.loglik,
            "poisson_iterations": poisson.iterations,
            "nb_loglik_trace": nb_trace,
            "excluded_viruses": ids(&q.excluded_rows, d.counts.virus_ids()),
            "excluded_columns": ids(&q.excluded_columns, d.counts.column_ids()),
        }),
    )?;
    Ok(d.paths)
}

fn run_pca(a: &PcaArgs, out: &mut OutputDir) -> Result<Vec<PathBuf>> {
    let (virus_ids, column_ids, z) = load_value_matrix(&a.zhat)?;
    let zhat = PosteriorMatrix::new(z)?;
    // ids only; metadata loading and the writers key on them
    let shell = CountMatrix::new(virus_ids, column_ids, ndarray::Array2::zeros(zhat.dim()))?;
    let mut paths = vec![a.zhat.clone()];
    let meta = match &a.meta {
        Some(p) => {
            paths.push(p.clone());
            load_metadata(p, &shell)?
        }
        None => CohortMetadata::trivial(shell.n_columns()),
    };
    let columns = match a.columns {
        PcaColumns::Unique => meta.unique_set(),
        PcaColumns::All => (0..shell.n_columns()).collect(),
    };
    let any_geo = columns.iter().any(|&j| meta.geo(j).is_some());
    let pca = if any_geo {
        pca_with_geography(&zhat, &meta, &columns)?
    } else {
        pca_scores_on(&zhat, &columns)?
    };
    output::write_pca(out, &shell, &meta, &pca)?;
    Ok(paths)
}

fn run_simulate(a: &SimulateArgs, out: &mut OutputDir) -> Result<Vec<PathBuf>> {
    let mut spec = load_spec(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let data = simulate(&spec)?;
    save_count_matrix(out.claim("counts.csv"), &data.counts)?;
    save_metadata(out.claim("meta.csv"), &data.counts, &data.meta)?;
    output::write_truth(out, &data.counts, &data.meta, &data.truth)?;
    out.json("truth_params.json", &data.params)?;
    out.json("spec.json", &spec)?;
    Ok(if a.spec == "default" { vec![] } else { vec![PathBuf::from(&a.spec)] })
}

fn run_summarize(a: &SummarizeArgs, out: &mut OutputDir) -> Result<Vec<PathBuf>> {
    let d = load(&a.input)?;
    output::write_count_summary(out, &summarize_counts(&d.counts))?;
    if !a.counts_only {
        let result = fit(&d.counts, &d.meta, &a.model.config(a.replicates.into()))?;
        output::write_fit_summary(out, &fit_summary_tables(&d.counts, &d.meta, &result)?)?;
    }
    Ok(d.paths)
}

/// Parse the process arguments, run, and map the outcome to an exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
