//! Acceptance gate: one test per shipped criterion, each printing a
//! PASS/FAIL line with the measured evidence (run with `-- --nocapture` to
//! see the lines for passing tests).

use std::time::Instant;

use ssm_prune::bench::{measure_mode, BenchOptions};
use ssm_prune::flops::{count_flops, dense_layers, instrumented_run, pruned_layers};
use ssm_prune::model::{
    init_weights, model_forward, seeded_input, ModelConfig, PruneMode, ScanMode,
};
use ssm_prune::pruning::{importance_scores, select_tokens, Metric, PruneConfig};
use ssm_prune::rng::SplitMix64;
use ssm_prune::tensor::TokenTensor;
use ssm_prune::traversal::TokenGrid;
use ssm_prune::verify::{
    check_all_keep_bitwise, check_convolution_equivalence, check_gap_power_identity,
    check_oracle_equivalence, check_power_skip_agreement, divergence_stats, DEFAULT_VERIFY_SEED,
};

const SEED: u64 = DEFAULT_VERIFY_SEED;

fn report(criterion: &str, passed: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} - {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
}

#[test]
fn a01_aligned_scan_matches_zeroed_oracle() {
    let start = Instant::now();
    let check = check_oracle_equivalence(SEED, 1, 200, 1e-12);
    let elapsed = start.elapsed().as_secs_f64();
    let within_budget = elapsed < 10.0;
    report(
        "C1 oracle equivalence",
        check.passed && within_budget,
        &format!("{}, {elapsed:.2}s (budget 10s)", check.detail),
    );
    assert!(check.passed, "{}", check.detail);
    assert!(within_budget, "suite took {elapsed:.2}s, budget is 10s");
}

#[test]
fn a02_no_prune_identity_is_bitwise() {
    let check = check_all_keep_bitwise(SEED.wrapping_add(1), 1, 50);
    report("C2 no-prune bitwise identity", check.passed, &check.detail);
    assert!(check.passed, "{}", check.detail);
}

#[test]
fn a03_convolution_equals_recurrence() {
    let check = check_convolution_equivalence(SEED.wrapping_add(2), 100, 1e-10);
    report("C3 convolution/recurrence equivalence", check.passed, &check.detail);
    assert!(check.passed, "{}", check.detail);
}

#[test]
fn a04_condensed_fails_aligned_does_not() {
    let stats = divergence_stats(SEED.wrapping_add(3), 1, 100);
    let diverged_enough = stats.condensed_diverged * 100 >= stats.instances * 99;
    let aligned_clean = stats.aligned_max_diff <= 1e-12;
    report(
        "C4 condensed divergence",
        diverged_enough && aligned_clean,
        &format!(
            "condensed diverged {}/{} (need >=99%), aligned max diff {:.3e}",
            stats.condensed_diverged, stats.instances, stats.aligned_max_diff
        ),
    );
    assert!(diverged_enough, "only {}/{} diverged", stats.condensed_diverged, stats.instances);
    assert!(aligned_clean, "aligned deviated {:.3e}", stats.aligned_max_diff);
}

fn loop_oracle(channels: &[f64], metric: Metric) -> f64 {
    let d = channels.len() as f64;
    match metric {
        Metric::ClippedMean => {
            let mut acc = 0.0;
            for &v in channels {
                acc += v.max(0.0);
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

#[test]
fn a05_importance_metrics() {
    let metrics = [
        Metric::ClippedMean,
        Metric::L1Norm,
        Metric::L2Norm,
        Metric::UnclippedMean,
    ];
    let mut rng = SplitMix64::new(SEED.wrapping_add(10));
    let mut worst = 0.0f64;
    for _ in 0..120 {
        let tokens = 1 + rng.below(16);
        let channels = 1 + rng.below(16);
        let data: Vec<f64> = (0..tokens * channels).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let y = TokenTensor::from_vec(1, tokens, channels, data).unwrap();
        for &metric in &metrics {
            let s = importance_scores(&y, metric).unwrap();
            for t in 0..tokens {
                worst = worst.max((s.score(0, t) - loop_oracle(y.token(0, t), metric)).abs());
            }
        }
    }
    let loop_exact = worst == 0.0;

    let y = TokenTensor::from_vec(1, 1, 4, vec![1.0, -1.0, 2.0, 0.0]).unwrap();
    let named = importance_scores(&y, Metric::ClippedMean).unwrap().score(0, 0);
    let named_ok = named == 0.75;

    let mut scale_ok = true;
    for _ in 0..100 {
        let tokens = 2 + rng.below(20);
        let data: Vec<f64> = (0..tokens * 6).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let y = TokenTensor::from_vec(1, tokens, 6, data).unwrap();
        let c = rng.uniform(0.01, 50.0);
        let mut scaled = y.clone();
        for v in scaled.data_mut() {
            *v *= c;
        }
        let keep = 1 + rng.below(tokens);
        for &metric in &metrics {
            let a = select_tokens(&importance_scores(&y, metric).unwrap(), keep).unwrap();
            let b = select_tokens(&importance_scores(&scaled, metric).unwrap(), keep).unwrap();
            if a.remaining_indices() != b.remaining_indices() {
                scale_ok = false;
            }
        }
    }
    report(
        "C5 importance metrics",
        loop_exact && named_ok && scale_ok,
        &format!(
            "loop-oracle max diff {worst:.1e} over 120 tensors, named case {named}, scale-invariant keep sets: {scale_ok}"
        ),
    );
    assert!(loop_exact, "metric deviated from scalar loop by {worst:.3e}");
    assert!(named_ok, "clipped mean of [1,-1,2,0] was {named}");
    assert!(scale_ok, "keep set changed under positive scaling");
}

fn toy_matrix() -> Vec<ModelConfig> {
    let base = ModelConfig {
        depth: 2,
        embed_dim: 8,
        inner_dim: 16,
        state_dim: 4,
        grid: TokenGrid { height: 4, width: 4 },
        batch: 1,
        prune: PruneConfig {
            keep_rate: 0.5,
            prune_after_layers: vec![1],
            metric: Metric::ClippedMean,
        },
        seed: 7,
        scan_mode: ScanMode::Vim,
    };
    let mut snake = base.clone();
    snake.scan_mode = ScanMode::Snake;
    snake.grid = TokenGrid { height: 3, width: 5 };
    snake.seed = 8;
    let mut keep_all = base.clone();
    keep_all.prune.keep_rate = 1.0;
    let mut multi = base.clone();
    multi.depth = 5;
    multi.prune.prune_after_layers = vec![1, 3];
    multi.prune.keep_rate = 0.6;
    multi.batch = 2;
    multi.prune.metric = Metric::L2Norm;
    vec![base, snake, keep_all, multi]
}

#[test]
fn a06a_analytic_flops_equal_instrumented_counters() {
    let mut all_ok = true;
    let mut details = Vec::new();
    for cfg in toy_matrix() {
        let run = instrumented_run(&cfg, PruneMode::Aligned).unwrap();
        let analytic = pruned_layers(&cfg, &run.stage_maps).unwrap();
        let aligned_ok = analytic == run.layers;

        let dense_run = instrumented_run(&cfg, PruneMode::Dense).unwrap();
        let dense_ok = dense_layers(&cfg).unwrap() == dense_run.layers;

        all_ok &= aligned_ok && dense_ok;
        details.push(format!("digest {} aligned={aligned_ok} dense={dense_ok}", cfg.digest()));
    }
    report(
        "C6a analytic vs instrumented FLOPs",
        all_ok,
        &format!("{} toy configs: {}", toy_matrix().len(), details.join("; ")),
    );
    assert!(all_ok, "{}", details.join("; "));
}

#[test]
fn a06b_flops_reduction_band_on_reference_schedule() {
    let cfg = ModelConfig::vim_s_surrogate();
    let rep = count_flops(&cfg).unwrap();
    let in_band = (25.0..=35.0).contains(&rep.reduction_percent);
    report(
        "C6b FLOPs reduction band",
        in_band,
        &format!(
            "reduction {:.2}% (band [25, 35]), scan share {:.2}%",
            rep.reduction_percent, rep.scan_share_percent
        ),
    );
    assert!(
        in_band,
        "reduction_percent {:.2}% is outside [25, 35]: four pruning stages at keep 0.7 \
         (alive-token timeline 196/137/96/67/47) remove ~42% of multiply work when every \
         block cost scales with live tokens; a ~30% reduction on this schedule would need \
         keep ~0.82 per stage",
        rep.reduction_percent
    );
}

#[test]
fn a07_throughput_direction() {
    let start = Instant::now();
    let opts = BenchOptions { repeats: 5, warmup: 2, threads: 1 };
    let base_cfg = ModelConfig::vim_s_surrogate();
    let dense = measure_mode(&base_cfg, PruneMode::Dense, &opts).unwrap();

    let mut speedups = Vec::new();
    for keep in [1.0, 0.7, 0.5] {
        let mut cfg = base_cfg.clone();
        cfg.prune.keep_rate = keep;
        let timing = measure_mode(&cfg, PruneMode::Aligned, &opts).unwrap();
        speedups.push((keep, dense.median_ms / timing.median_ms));
    }
    let elapsed = start.elapsed().as_secs_f64();

    let at_07 = speedups[1].1;
    let monotone = speedups[0].1 <= speedups[1].1 && speedups[1].1 <= speedups[2].1;
    let fast_enough = at_07 >= 1.15;
    let within_budget = elapsed < 120.0;
    report(
        "C7 throughput direction",
        fast_enough && monotone && within_budget,
        &format!(
            "dense median {:.0}ms; speedups {:.2}x@1.0 {:.2}x@0.7 {:.2}x@0.5; {elapsed:.1}s (budget 120s)",
            dense.median_ms, speedups[0].1, speedups[1].1, speedups[2].1
        ),
    );
    assert!(fast_enough, "aligned speedup at keep 0.7 was {at_07:.3}x, need >= 1.15x");
    assert!(monotone, "speedups not monotone: {speedups:?}");
    assert!(within_budget, "benchmark took {elapsed:.1}s, budget is 120s");
}

#[test]
fn a08_gap_power_identity_and_fast_path() {
    let gap = check_gap_power_identity(SEED.wrapping_add(4), 100, 1e-12);
    let fast = check_power_skip_agreement(SEED.wrapping_add(5), 1, 100, 1e-12);
    report(
        "C8 gap-power identity",
        gap.passed && fast.passed,
        &format!("{}; {}", gap.detail, fast.detail),
    );
    assert!(gap.passed, "{}", gap.detail);
    assert!(fast.passed, "{}", fast.detail);
}

#[test]
fn a09_model_invariants() {
    // Residual identity with zeroed output projections.
    let mut small = ModelConfig {
        depth: 3,
        embed_dim: 8,
        inner_dim: 16,
        state_dim: 4,
        grid: TokenGrid { height: 4, width: 4 },
        batch: 1,
        prune: PruneConfig {
            keep_rate: 0.5,
            prune_after_layers: vec![2],
            metric: Metric::ClippedMean,
        },
        seed: 21,
        scan_mode: ScanMode::Vim,
    };
    let mut weights = init_weights(&small);
    for w in &mut weights {
        w.out_proj.data_mut().fill(0.0);
    }
    let x0 = seeded_input(&small);
    let out = model_forward(&small, &weights, &x0).unwrap();
    let mut residual_ok = true;
    let map = out.stage_maps.last().unwrap();
    for (j, &q) in map.remaining_indices().iter().enumerate() {
        for c in 0..small.embed_dim {
            if out.features.get(0, j, c) != x0.get(0, q, c) {
                residual_ok = false;
            }
        }
    }

    // Determinism.
    small.seed = 22;
    let weights = init_weights(&small);
    let x0 = seeded_input(&small);
    let run1 = model_forward(&small, &weights, &x0).unwrap();
    let run2 = model_forward(&small, &weights, &x0).unwrap();
    let deterministic = run1.features == run2.features && run1.stage_maps == run2.stage_maps;

    // Stagewise arithmetic on the reference schedule, against a standalone
    // rounding oracle.
    let cfg = ModelConfig::vim_s_surrogate();
    let surrogate = model_forward(&cfg, &init_weights(&cfg), &seeded_input(&cfg)).unwrap();
    let mut expected = Vec::new();
    let mut alive = 196usize;
    for _ in 0..4 {
        alive = (0.7 * alive as f64).round() as usize;
        expected.push(alive);
    }
    let stage_lens: Vec<usize> = surrogate.stage_maps.iter().map(|m| m.kept_len()).collect();
    let arithmetic_ok = stage_lens == expected && surrogate.features.tokens() == 47;

    // Monotonicity: non-increasing, strictly decreasing at stages.
    let monotone_ok = stage_lens.windows(2).all(|w| w[1] < w[0]) && stage_lens[0] < 196;

    report(
        "C9 model invariants",
        residual_ok && deterministic && arithmetic_ok && monotone_ok,
        &format!(
            "residual identity {residual_ok}, determinism {deterministic}, stage tokens {stage_lens:?} (expected {expected:?}, final 47), monotone {monotone_ok}"
        ),
    );
    assert!(residual_ok, "zeroed out_proj did not act as identity");
    assert!(deterministic, "repeated forward differed");
    assert!(arithmetic_ok, "stage tokens {stage_lens:?}, expected {expected:?}");
    assert!(monotone_ok, "token counts not strictly decreasing at stages");
}
