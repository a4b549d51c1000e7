//! Property tests for the numeric and stochastic invariants that every
//! other module leans on.

use proptest::prelude::*;
use seqmix_core::crf::{log_partition, sequence_score, viterbi};
use seqmix_core::data::{f1_metrics, F1Scheme};
use seqmix_core::lambda::{beta_moment_match, mix, sample_trajectory};
use seqmix_core::numkernel::{logsumexp, softmax, svd_top_k};
use seqmix_core::{LambdaConfig, Matrix, Rng};

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, len)
}

proptest! {
    #[test]
    fn logsumexp_shift_invariant(v in finite_vec(6), c in -30.0..30.0f64) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let a = logsumexp(&v).unwrap();
        let b = logsumexp(&shifted).unwrap();
        prop_assert!((b - (a + c)).abs() < 1e-9);
        let max = v.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(a >= max - 1e-12);
    }

    #[test]
    fn softmax_is_a_distribution(v in finite_vec(5)) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn mix_is_affine(z in finite_vec(4), z2 in finite_vec(4), lambda in 0.0..=1.0f64) {
        let m = mix(&z, &z2, lambda).unwrap();
        for i in 0..4 {
            prop_assert!((m[i] - (lambda * z[i] + (1.0 - lambda) * z2[i])).abs() < 1e-12);
        }
        let id = mix(&z, &z2, 1.0).unwrap();
        prop_assert_eq!(id, z);
    }

    #[test]
    fn beta_moment_match_round_trips(alpha in 0.05..40.0f64) {
        // symmetric Beta(α,α): mean 1/2, variance 1/(4(2α+1))
        let variance = 1.0 / (4.0 * (2.0 * alpha + 1.0));
        let (a, b) = beta_moment_match(0.5, variance).unwrap();
        prop_assert!((a - alpha).abs() < 1e-9 * alpha.max(1.0));
        prop_assert!((b - alpha).abs() < 1e-9 * alpha.max(1.0));
    }

    #[test]
    fn trajectories_stay_in_unit_interval(
        alpha in 0.05..20.0f64,
        rho in 0.0..=1.0f64,
        horizon in 1usize..40,
        seed in 0u64..1000,
    ) {
        let cfg = LambdaConfig::new(alpha, rho, horizon).unwrap();
        let traj = sample_trajectory(&cfg, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(traj.len(), horizon);
        prop_assert!(traj.values.iter().all(|&l| (0.0..=1.0).contains(&l)));
        if rho == 0.0 {
            // zero redraw weight keeps the first draw for the whole horizon
            prop_assert!(traj.values.iter().all(|&l| l == traj.values[0]));
        }
    }

    #[test]
    fn viterbi_is_the_argmax_score(
        t in 1usize..5,
        c in 2usize..4,
        seed in 0u64..500,
    ) {
        let mut rng = Rng::new(seed);
        let emissions: Vec<Vec<f64>> =
            (0..t).map(|_| (0..c).map(|_| rng.uniform_range(-2.0, 2.0)).collect()).collect();
        let mut transitions = Matrix::zeros(c, c);
        for x in transitions.data_mut() {
            *x = rng.uniform_range(-2.0, 2.0);
        }
        let (path, best) = viterbi(&emissions, &transitions).unwrap();
        prop_assert_eq!(path.len(), t);
        // no path scores higher, and the log-partition dominates the best path
        let random_path: Vec<usize> = (0..t).map(|_| rng.uniform_usize(c)).collect();
        let score = sequence_score(&emissions, &transitions, &random_path).unwrap();
        prop_assert!(score <= best + 1e-12);
        let logz = log_partition(&emissions, &transitions).unwrap();
        prop_assert!(logz >= best - 1e-12);
    }

    #[test]
    fn singular_values_sorted_and_energy_monotone(
        rows in 1usize..6,
        cols in 1usize..8,
        seed in 0u64..500,
    ) {
        let mut rng = Rng::new(seed);
        let mut m = Matrix::zeros(rows, cols);
        for x in m.data_mut() {
            *x = rng.uniform_range(-1.0, 1.0);
        }
        let sigmas = svd_top_k(&m, rows.min(cols)).unwrap();
        prop_assert!(sigmas.iter().all(|&s| s >= 0.0));
        prop_assert!(sigmas.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        // total spectral energy equals the squared Frobenius norm
        let energy: f64 = sigmas.iter().map(|s| s * s).sum();
        prop_assert!((energy - m.frobenius_sq()).abs() <= 1e-9 * (1.0 + m.frobenius_sq()));
    }

    #[test]
    fn token_f1_equals_span_f1_on_single_token_entities(
        gold_mask in prop::collection::vec(prop::bool::ANY, 8),
        pred_mask in prop::collection::vec(prop::bool::ANY, 8),
    ) {
        // tags are "O" or the single-token entity "B-X"
        let to_tags = |mask: &[bool]| -> Vec<usize> { mask.iter().map(|&b| b as usize).collect() };
        let gold = to_tags(&gold_mask);
        let pred = to_tags(&pred_mask);
        let names = vec!["O".to_string(), "B-X".to_string()];
        let token = f1_metrics(&[pred.clone()], &[gold.clone()], &names, F1Scheme::Token).unwrap();
        let span = f1_metrics(&[pred], &[gold], &names, F1Scheme::Span).unwrap();
        prop_assert!((token.f1 - span.f1).abs() < 1e-12);
    }
}
