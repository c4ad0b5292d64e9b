//! Importance metrics against a scalar loop oracle, selection against a
//! full-sort oracle, map composition laws, and scale equivariance.

use proptest::prelude::*;

use ssm_prune::pruning::{
    compose_maps, importance_scores, importance_scores_multi, select_tokens, Metric, PositionMap,
};
use ssm_prune::rng::SplitMix64;
use ssm_prune::tensor::TokenTensor;

const METRICS: [Metric; 4] = [
    Metric::ClippedMean,
    Metric::L1Norm,
    Metric::L2Norm,
    Metric::UnclippedMean,
];

/// Deliberately naive per-token scalar loop.
fn loop_oracle(channels: &[f64], metric: Metric) -> f64 {
    let d = channels.len() as f64;
    match metric {
        Metric::ClippedMean => {
            let mut acc = 0.0;
            for &v in channels {
                if v > 0.0 {
                    acc += v;
                }
            }
            acc / d
        }
        Metric::L1Norm => {
            let mut acc = 0.0;
            for &v in channels {
                acc += v.abs();
            }
            acc / d
        }
        Metric::L2Norm => {
            let mut acc = 0.0;
            for &v in channels {
                acc += v * v;
            }
            (acc / d).sqrt()
        }
        Metric::UnclippedMean => {
            let mut acc = 0.0;
            for &v in channels {
                acc += v;
            }
            acc / d
        }
    }
}

/// Full-sort selection oracle with the lower-index tie break.
fn sort_oracle(scores: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    kept
}

fn random_tensor(rng: &mut SplitMix64, batch: usize, tokens: usize, channels: usize) -> TokenTensor {
    let data: Vec<f64> = (0..batch * tokens * channels).map(|_| rng.uniform(-2.0, 2.0)).collect();
    TokenTensor::from_vec(batch, tokens, channels, data).unwrap()
}

#[test]
fn metrics_match_loop_oracle_on_many_tensors() {
    let mut rng = SplitMix64::new(0x5c02e);
    for _ in 0..120 {
        let tokens = 1 + rng.below(12);
        let channels = 1 + rng.below(16);
        let y = random_tensor(&mut rng, 1, tokens, channels);
        for &metric in &METRICS {
            let s = importance_scores(&y, metric).unwrap();
            for t in 0..tokens {
                let expected = loop_oracle(y.token(0, t), metric);
                assert!(
                    (s.score(0, t) - expected).abs() <= 1e-12,
                    "{metric:?} token {t}: {} vs {expected}",
                    s.score(0, t)
                );
            }
        }
    }
}

#[test]
fn named_clipped_mean_case() {
    let y = TokenTensor::from_vec(1, 1, 4, vec![1.0, -1.0, 2.0, 0.0]).unwrap();
    let s = importance_scores(&y, Metric::ClippedMean).unwrap();
    assert_eq!(s.score(0, 0), 0.75);
}

#[test]
fn selection_matches_sort_oracle_on_100_tokens() {
    let mut rng = SplitMix64::new(0x0dd);
    for _ in 0..30 {
        let scores_vec: Vec<f64> = (0..100).map(|_| rng.uniform(0.0, 1.0)).collect();
        let y = TokenTensor::from_vec(1, 100, 1, scores_vec.clone()).unwrap();
        let s = importance_scores(&y, Metric::UnclippedMean).unwrap();
        let map = select_tokens(&s, 40).unwrap();
        assert_eq!(map.remaining_indices(), sort_oracle(&scores_vec, 40).as_slice());
    }
}

#[test]
fn bidirectional_scores_average() {
    let a = TokenTensor::from_vec(1, 2, 2, vec![1.0, 3.0, 0.0, 2.0]).unwrap();
    let b = TokenTensor::from_vec(1, 2, 2, vec![3.0, 1.0, 4.0, 2.0]).unwrap();
    let s = importance_scores_multi(&[&a, &b], Metric::UnclippedMean).unwrap();
    // Token 0: mean(2.0, 2.0) = 2.0; token 1: mean(1.0, 3.0) = 2.0.
    assert_eq!(s.score(0, 0), 2.0);
    assert_eq!(s.score(0, 1), 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    /// Positive scaling of the scan output must not change the keep set.
    #[test]
    fn keep_set_invariant_under_positive_scaling(
        seed in any::<u64>(),
        scale in 0.01..100.0f64,
        tokens in 2..24usize,
        channels in 1..8usize,
    ) {
        let mut rng = SplitMix64::new(seed);
        let y = random_tensor(&mut rng, 1, tokens, channels);
        let mut scaled = y.clone();
        for v in scaled.data_mut() {
            *v *= scale;
        }
        let keep = 1 + rng.below(tokens);
        for &metric in &METRICS {
            let base = select_tokens(&importance_scores(&y, metric).unwrap(), keep).unwrap();
            let after = select_tokens(&importance_scores(&scaled, metric).unwrap(), keep).unwrap();
            prop_assert_eq!(base.remaining_indices(), after.remaining_indices(), "{:?}", metric);
        }
    }

    /// Clipping discards negative magnitudes, so it cannot exceed the l1 mean.
    #[test]
    fn clipped_mean_at_most_l1(seed in any::<u64>(), tokens in 1..16usize, channels in 1..12usize) {
        let mut rng = SplitMix64::new(seed);
        let y = random_tensor(&mut rng, 1, tokens, channels);
        let clipped = importance_scores(&y, Metric::ClippedMean).unwrap();
        let l1 = importance_scores(&y, Metric::L1Norm).unwrap();
        for t in 0..tokens {
            prop_assert!(clipped.score(0, t) <= l1.score(0, t) + 1e-15);
            prop_assert!(clipped.score(0, t) >= 0.0);
        }
    }

    /// Composition is associative whenever the dimensions line up.
    #[test]
    fn composition_is_associative(seed in any::<u64>(), n in 4..40usize) {
        let mut rng = SplitMix64::new(seed);
        let pick = |rng: &mut SplitMix64, len: usize| -> PositionMap {
            let keep = 1 + rng.below(len);
            let mut idx: Vec<usize> = (0..len).collect();
            for i in 0..keep {
                let j = i + rng.below(len - i);
                idx.swap(i, j);
            }
            let mut kept = idx[..keep].to_vec();
            kept.sort_unstable();
            PositionMap::from_kept(len, kept).unwrap()
        };
        let a = pick(&mut rng, n);
        let b = pick(&mut rng, a.kept_len());
        let c = pick(&mut rng, b.kept_len());
        let left = compose_maps(&compose_maps(&a, &b).unwrap(), &c).unwrap();
        let right = compose_maps(&a, &compose_maps(&b, &c).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    /// Selection is deterministic.
    #[test]
    fn selection_is_deterministic(seed in any::<u64>(), tokens in 2..32usize) {
        let mut rng = SplitMix64::new(seed);
        let y = random_tensor(&mut rng, 2, tokens, 3);
        let keep = 1 + rng.below(tokens);
        let a = select_tokens(&importance_scores(&y, Metric::ClippedMean).unwrap(), keep).unwrap();
        let b = select_tokens(&importance_scores(&y, Metric::ClippedMean).unwrap(), keep).unwrap();
        prop_assert_eq!(a, b);
    }
}
