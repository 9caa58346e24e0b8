//! Reference computations for the integration and acceptance tests. None of
//! these call into the library's numerics.

#![allow(dead_code)]

use ervmix::data::{CohortMetadata, CountMatrix};
use ervmix::ecm::{MixtureParams, PosteriorMatrix, Prior};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Discrete, NegativeBinomial};
use statrs::function::gamma::ln_gamma;

/// Golden-section search for the maximizer of a unimodal `f` on `[lo, hi]`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / 2.0
}

/// Dense grid search on `[lo, hi]`, refined around the best point until the
/// spacing is below `resolution`.
pub fn grid_argmax(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, points: usize, resolution: f64) -> f64 {
    loop {
        let step = (hi - lo) / (points - 1) as f64;
        let (best, _) = (0..points)
            .map(|k| lo + k as f64 * step)
            .map(|x| (x, f(x)))
            .fold((lo, f64::NEG_INFINITY), |acc, (x, v)| if v > acc.1 { (x, v) } else { acc });
        if step < resolution {
            return best;
        }
        let (a, b) = ((best - step).max(lo), (best + step).min(hi));
        lo = a;
        hi = b;
    }
}

/// Negative binomial mass via statrs: failures before the `r`-th success.
pub fn nb_pmf(x: u64, r: f64, theta: f64) -> f64 {
    NegativeBinomial::new(r, theta).unwrap().pmf(x)
}

/// The `r`-dependent part of the expected complete-data log-likelihood of one
/// column, from `(count, w ln alpha + (1 - w) ln p)` per virus.
pub fn shape_q(rows: &[(u64, f64)], r: f64) -> f64 {
    rows.iter()
        .map(|&(x, ln_mix)| ln_gamma(r + x as f64) - ln_gamma(r) + r * ln_mix)
        .sum()
}

/// Observed-data log-likelihood by multiplying mass functions directly, one
/// mixture factor per virus and replicate group.
pub fn direct_loglik(cm: &CountMatrix, groups: &[Vec<usize>], experiment_of: &[usize], params: &MixtureParams) -> f64 {
    let mut total = 0.0;
    for i in 0..cm.n_viruses() {
        for g in groups {
            let (mut f, mut h) = (1.0, 1.0);
            for &j in g {
                let x = cm.get(i, j);
                f *= nb_pmf(x, params.r[j], params.alpha[i]);
                h *= nb_pmf(x, params.r[j], params.p[experiment_of[j]]);
            }
            let pi = params.pi.at(i, g[0]);
            total += (pi * f + (1.0 - pi) * h).ln();
        }
    }
    total
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|k| a[k][k]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// A small random problem: counts, metadata with `k` experiments and no
/// replicates, a posterior and parameters in their valid ranges.
pub struct Instance {
    pub cm: CountMatrix,
    pub meta: CohortMetadata,
    pub z: PosteriorMatrix,
    pub params: MixtureParams,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(3..9);
    let n = rng.random_range(3..7);
    let k = rng.random_range(1..=2.min(n));
    let counts = Array2::from_shape_fn((m, n), |_| {
        if rng.random::<f64>() < 0.4 {
            0
        } else {
            rng.random_range(0..60u64)
        }
    });
    let cm = CountMatrix::new(
        (0..m).map(|i| format!("v{i}")).collect(),
        (0..n).map(|j| format!("c{j}")).collect(),
        counts,
    )
    .unwrap();
    let meta = CohortMetadata::new(
        (0..n).map(|j| format!("a{j}")).collect(),
        (0..n).map(|j| (1 + j * k / n).to_string()).collect(),
        vec![None; n],
        vec![None; n],
    )
    .unwrap();
    let z = PosteriorMatrix::new(Array2::from_shape_fn((m, n), |_| rng.random::<f64>())).unwrap();
    let params = MixtureParams {
        pi: Prior::PerVirus((0..m).map(|_| rng.random_range(0.05..0.95)).collect()),
        r: (0..n).map(|_| rng.random_range(0.5..40.0)).collect(),
        alpha: (0..m).map(|_| rng.random_range(0.01..0.6)).collect(),
        p: (0..k).map(|_| rng.random_range(0.8..0.99)).collect(),
    };
    Instance { cm, meta, z, params }
}

/// Run the `ervmix` binary; returns (exit code, stderr).
pub fn run_cli(args: &[&str], envs: &[(&str, &str)]) -> (i32, String) {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_ervmix"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// File names in `dir`, sorted.
pub fn file_names(dir: &std::path::Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

/// Largest absolute difference between numeric fields of two text files with
/// the same layout; `None` if a non-numeric field differs or the shapes differ.
pub fn max_numeric_difference(a: &str, b: &str) -> Option<f64> {
    let split = |s: &str| -> Vec<String> {
        s.split(|c: char| c == ',' || c == '\n' || c.is_whitespace() || c == '[' || c == ']')
            .filter(|t| !t.is_empty())
            .map(|t| t.trim_end_matches(',').to_owned())
            .collect()
    };
    let (ta, tb) = (split(a), split(b));
    if ta.len() != tb.len() {
        return None;
    }
    let mut worst = 0.0f64;
    for (x, y) in ta.iter().zip(&tb) {
        if x == y {
            continue;
        }
        match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(u), Ok(v)) => worst = worst.max((u - v).abs() / u.abs().max(1.0)),
            _ => return None,
        }
    }
    Some(worst)
}
