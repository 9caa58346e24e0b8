//! Expectation-conditional maximization for the two-component negative
//! binomial mixture.
//!
//! Carrier counts follow `NB(r_j, alpha_i)`, background counts follow
//! `NB(r_j, p_k(j))`, and a prior `pi` mixes the two per virus and unique
//! animal. Each iteration runs the E-step, then updates `alpha`, `p`, `r` and
//! `pi` in that order, each conditional on the most recent values of the
//! others.

mod model;
mod steps;

pub use model::{
    AlphaSmoothing, Design, FitConfig, FitCounters, FitResult, MixtureParams, PiModel, PosteriorMatrix,
    Prior,
};
pub use steps::{
    alpha_objective, cm_step_alpha, cm_step_p, cm_step_pi, cm_step_r, e_step, observed_log_likelihood,
    p_objective, shape_problem, AlphaCandidate, EStep, PUpdate, RUpdate, PROB_CEIL, PROB_FLOOR,
};

use ndarray::Array2;

use crate::data::{CohortMetadata, CountMatrix};
use crate::error::Result;
use crate::optimize::Bound;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AlphaChoice {
    Smoothed,
    /// Exact conditional maximizer; used when the smoothed iteration would
    /// lower the observed log-likelihood.
    Exact,
}

/// Initial posterior `min(1, x / divisor)`.
pub fn initial_posterior(cm: &CountMatrix, divisor: f64) -> PosteriorMatrix {
    PosteriorMatrix::from_raw(cm.counts().mapv(|x| (x as f64 / divisor).min(1.0)))
}

/// Starting point of the iteration: the initial posterior, and the parameters
/// obtained from one full M-step on it with every `r_j` starting at `init_r0`.
pub fn init_state(
    cm: &CountMatrix,
    meta: &CohortMetadata,
    cfg: &FitConfig,
) -> Result<(MixtureParams, PosteriorMatrix)> {
    cfg.validate()?;
    let design = Design::new(meta, cfg.replicate_mode)?;
    design.check_matrix(cm)?;
    let z0 = initial_posterior(cm, cfg.init_divisor);
    let seed = seed_params(cm, &design, cfg);
    let (params, _) = m_step(cm, &design, cfg, &z0, &seed, AlphaChoice::Smoothed);
    Ok((params, z0))
}

fn seed_params(cm: &CountMatrix, design: &Design, cfg: &FitConfig) -> MixtureParams {
    MixtureParams {
        pi: Prior::Shared(0.5),
        r: vec![cfg.init_r0; cm.n_columns()],
        alpha: vec![0.5; cm.n_viruses()],
        p: vec![0.5; design.n_experiments()],
    }
}

fn m_step(
    cm: &CountMatrix,
    design: &Design,
    cfg: &FitConfig,
    z: &PosteriorMatrix,
    prev: &MixtureParams,
    choice: AlphaChoice,
) -> (MixtureParams, FitCounters) {
    let mut counters = FitCounters::default();

    let candidates = cm_step_alpha(cm, z, &prev.r, cfg.alpha_smoothing);
    let alpha: Vec<f64> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let old = prev.alpha[i];
            let (value, clamped) = match (choice, c.smoothed, c.exact) {
                (AlphaChoice::Exact, _, Some(e)) => (e, c.exact_clamped),
                (AlphaChoice::Exact, Some(s), None) => (s, c.smoothed_clamped),
                (_, Some(s), _) => (s, c.smoothed_clamped),
                (_, None, Some(e)) => (e, c.exact_clamped),
                (_, None, None) => (old, false),
            };
            counters.alpha_clamps += clamped as usize;
            value
        })
        .collect();

    let p_update = cm_step_p(cm, z, &prev.r, design);
    counters.p_clamps += p_update.clamped;

    let r_update = cm_step_r(cm, z, &alpha, &p_update.p, design, &prev.r);
    for b in &r_update.bounds {
        match b {
            Bound::Floor => counters.r_at_floor += 1,
            Bound::Ceiling => counters.r_at_ceiling += 1,
            Bound::Interior => {}
        }
    }

    let pi = cm_step_pi(z, design, cfg.pi_model);
    (
        MixtureParams {
            pi,
            r: r_update.r,
            alpha,
            p: p_update.p,
        },
        counters,
    )
}

/// Fit the mixture by ECM from the default starting point.
pub fn fit(cm: &CountMatrix, meta: &CohortMetadata, cfg: &FitConfig) -> Result<FitResult> {
    let (params, z0) = init_state(cm, meta, cfg)?;
    let design = Design::new(meta, cfg.replicate_mode)?;
    fit_from(cm, &design, cfg, params, z0)
}

/// Run ECM iterations from explicit starting parameters and posterior.
pub fn fit_from(
    cm: &CountMatrix,
    design: &Design,
    cfg: &FitConfig,
    mut params: MixtureParams,
    mut z_prev: PosteriorMatrix,
) -> Result<FitResult> {
    cfg.validate()?;
    design.check_matrix(cm)?;
    params.validate(cm.n_viruses(), cm.n_columns(), design.n_experiments())?;

    let mut counters = FitCounters::default();
    let mut loglik = observed_log_likelihood(cm, design, &params)?;
    let mut trace = vec![loglik];
    let mut guard_activations = 0;
    let mut converged = false;
    let mut iterations = 0;

    let posterior = loop {
        let estep = e_step(cm, design, &params);
        counters.degenerate_posteriors = estep.degenerate;
        let z = estep.posterior;
        if z.l1_distance(&z_prev) < cfg.z_tolerance {
            converged = true;
            break z;
        }
        if iterations == cfg.max_iterations {
            break z;
        }

        let (mut next, mut step_counters) = m_step(cm, design, cfg, &z, &params, AlphaChoice::Smoothed);
        let mut next_loglik = observed_log_likelihood(cm, design, &next)?;
        if next_loglik < loglik {
            guard_activations += 1;
            (next, step_counters) = m_step(cm, design, cfg, &z, &params, AlphaChoice::Exact);
            step_counters.exact_alpha_substitutions = cm.n_viruses();
            next_loglik = observed_log_likelihood(cm, design, &next)?;
        }
        step_counters.degenerate_posteriors = 0;
        counters += step_counters;

        params = next;
        loglik = next_loglik;
        trace.push(loglik);
        z_prev = z;
        iterations += 1;
    };

    Ok(FitResult {
        config: *cfg,
        constraint_ok: params.carrier_means_dominate(),
        params,
        posterior,
        loglik_trace: trace,
        iterations,
        converged,
        ascent_guard_activations: guard_activations,
        counters,
    })
}

/// Parameters obtained by one E-step followed by one M-step with the
/// smoothed alpha update.
pub fn ecm_update(
    cm: &CountMatrix,
    design: &Design,
    cfg: &FitConfig,
    params: &MixtureParams,
) -> MixtureParams {
    let z = e_step(cm, design, params).posterior;
    m_step(cm, design, cfg, &z, params, AlphaChoice::Smoothed).0
}

/// Build an `m x n` posterior from a closure, mostly for tests and examples.
pub fn posterior_from_fn(m: usize, n: usize, f: impl Fn(usize, usize) -> f64) -> Result<PosteriorMatrix> {
    PosteriorMatrix::new(Array2::from_shape_fn((m, n), |(i, j)| f(i, j)))
}
