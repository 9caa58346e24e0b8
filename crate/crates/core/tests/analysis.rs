mod common;

use common::jacobi_eigenvalues;
use ervmix::analysis::{align_to_geography, pca_scores};
use ervmix::ecm::{posterior_from_fn, PosteriorMatrix};
use ervmix::simulate::{simulate, SimSpec, Values};
use ervmix::{fit, CohortMetadata, CountMatrix, FitConfig};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_posterior(rng: &mut ChaCha8Rng, m: usize, n: usize) -> PosteriorMatrix {
    PosteriorMatrix::new(Array2::from_shape_fn((m, n), |_| rng.random::<f64>())).unwrap()
}

fn column_covariance(z: &PosteriorMatrix) -> Vec<Vec<f64>> {
    let (m, n) = z.dim();
    let mean: Vec<f64> = (0..m).map(|i| (0..n).map(|j| z.get(i, j)).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; m]; m];
    for j in 0..n {
        for a in 0..m {
            for b in 0..m {
                c[a][b] += (z.get(a, j) - mean[a]) * (z.get(b, j) - mean[b]) / (n - 1) as f64;
            }
        }
    }
    c
}

#[test]
fn explained_variance_matches_jacobi() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..25 {
        let (m, n) = (rng.random_range(2..7), rng.random_range(3..10));
        let z = random_posterior(&mut rng, m, n);
        let pca = pca_scores(&z).unwrap();
        let ev = jacobi_eigenvalues(column_covariance(&z));
        for k in 0..2.min(m) {
            assert!((pca.explained_variance[k] - ev[k]).abs() < 1e-8, "{:?} vs {:?}", pca.explained_variance, ev);
        }
        assert!(pca.explained_variance[0] >= pca.explained_variance[1]);
        assert!(pca.explained_variance[1] >= 0.0);
    }
}

#[test]
fn directions_are_orthonormal_and_oriented() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = random_posterior(&mut rng, 12, 9);
    let pca = pca_scores(&z).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let [d1, d2] = &pca.directions;
    assert!((dot(d1, d1) - 1.0).abs() < 1e-12);
    assert!((dot(d2, d2) - 1.0).abs() < 1e-12);
    assert!(dot(d1, d2).abs() < 1e-10);
    for d in [d1, d2] {
        let big = d.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        assert!(big > 0.0);
    }
}

#[test]
fn planted_clusters_split_on_first_score() {
    // two groups of animals that carry disjoint halves of the viruses
    let m = 60;
    let group = |seed, first_half: bool| {
        let pi = (0..m).map(|i| if (i < m / 2) == first_half { 0.9 } else { 0.05 }).collect();
        simulate(&SimSpec {
            n_viruses: m,
            n_columns: 10,
            n_experiments: 1,
            pi: Values::Fixed { values: pi },
            alpha: Values::fixed(0.05),
            p: Values::fixed(0.97),
            replicates: vec![],
            seed,
            ..SimSpec::default()
        })
        .unwrap()
    };
    let (a, b) = (group(1, true), group(2, false));
    let counts = ndarray::concatenate![ndarray::Axis(1), a.counts.counts().view(), b.counts.counts().view()];
    let cm = CountMatrix::new(
        a.counts.virus_ids().to_vec(),
        (0..20).map(|j| format!("s{j}")).collect(),
        counts,
    )
    .unwrap();
    let result = fit(&cm, &CohortMetadata::trivial(20), &FitConfig::default()).unwrap();
    let pca = pca_scores(&result.posterior).unwrap();
    let side: Vec<bool> = pca.scores.iter().map(|s| s[0] > 0.0).collect();
    assert!(side[..10].iter().all(|&s| s == side[0]));
    assert!(side[10..].iter().all(|&s| s != side[0]));
}

fn similarity(p: [f64; 2], s: f64, angle: f64, reflect: bool, t: [f64; 2]) -> [f64; 2] {
    let y = if reflect { -p[1] } else { p[1] };
    let (c, sn) = (angle.cos(), angle.sin());
    [s * (c * p[0] - sn * y) + t[0], s * (sn * p[0] + c * y) + t[1]]
}

fn residual(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sum()
}

#[test]
fn alignment_beats_random_similarity_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5 {
        let n = rng.random_range(4..15);
        let scores: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let geo: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(-115.0..-100.0), rng.random_range(40.0..48.0)])
            .collect();
        let best = align_to_geography(&scores, &geo).unwrap();
        assert!((residual(&best.aligned, &geo) - best.residual).abs() < 1e-9 * best.residual.max(1.0));
        for _ in 0..1000 {
            let moved: Vec<[f64; 2]> = scores
                .iter()
                .map(|&p| {
                    similarity(
                        p,
                        rng.random_range(0.01..5.0),
                        rng.random_range(0.0..std::f64::consts::TAU),
                        rng.random::<bool>(),
                        [rng.random_range(-120.0..-95.0), rng.random_range(35.0..50.0)],
                    )
                })
                .collect();
            assert!(best.residual <= residual(&moved, &geo) + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_ignore_virus_order(seed in 0u64..1000, shift in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_posterior(&mut rng, 7, 6);
        let rolled = posterior_from_fn(7, 6, |i, j| z.get((i + shift) % 7, j)).unwrap();
        let (a, b) = (pca_scores(&z).unwrap(), pca_scores(&rolled).unwrap());
        for (p, q) in a.scores.iter().zip(&b.scores) {
            prop_assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_invariant_under_similarity(
        seed in 0u64..1000,
        s in 0.05f64..20.0,
        angle in 0.0f64..6.3,
        reflect: bool,
        tx in -50.0f64..50.0,
        ty in -50.0f64..50.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<[f64; 2]> = (0..8).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let geo: Vec<[f64; 2]> = (0..8).map(|_| [rng.random::<f64>() * 10.0, rng.random::<f64>() * 5.0]).collect();
        let moved: Vec<[f64; 2]> = scores.iter().map(|&p| similarity(p, s, angle, reflect, [tx, ty])).collect();
        let (a, b) = (align_to_geography(&scores, &geo).unwrap(), align_to_geography(&moved, &geo).unwrap());
        prop_assert!((a.residual - b.residual).abs() < 1e-8 * a.residual.max(1.0));
    }
}
