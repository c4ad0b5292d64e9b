//! Randomized equivalence and divergence suites.
//!
//! These are the checks behind the CLI `verify` subcommand. Each one draws
//! seeded random scan instances, runs the kernel under test against an
//! independent route (zeroed-input oracle, plain recurrence, convolution
//! form, closed-form gap powers) and reports a pass/fail with the observed
//! worst case.

use crate::aligned::{
    expand_to_original, oracle_zeroed_scan, scan_aligned_with, scan_condensed_naive,
    scatter_to_original, AlignedScanInput, GapPolicy,
};
use crate::pruning::PositionMap;
use crate::rng::SplitMix64;
use crate::ssm::{
    discretize_zoh, kept_step_macs, pruned_step_macs, scan_convolution, scan_recurrent,
    ScanCounters, ScanOptions, SsmMode, StateSpace, StepParams,
};
use crate::tensor::TokenTensor;

pub const DEFAULT_VERIFY_SEED: u64 = 0x5eed_a11c_e5ca_0001;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub seed: u64,
    pub threads: usize,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary_lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{} {} ({})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                )
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Instance generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct InstanceOptions {
    pub max_original_len: usize,
    pub require_interior_gap: bool,
    pub nonzero_inputs: bool,
    pub mode: Option<SsmMode>,
}

impl Default for InstanceOptions {
    fn default() -> Self {
        InstanceOptions {
            max_original_len: 64,
            require_interior_gap: false,
            nonzero_inputs: false,
            mode: None,
        }
    }
}

/// One randomized pruned-scan problem: layer, kept-token inputs and params,
/// and the keep map over the original length.
#[derive(Debug, Clone)]
pub struct ScanInstance {
    pub ss: StateSpace,
    pub params: Vec<StepParams>,
    pub x: TokenTensor,
    pub map: PositionMap,
}

fn random_keep_pattern(rng: &mut SplitMix64, n: usize, require_interior: bool) -> Vec<usize> {
    for _ in 0..200 {
        let prune_frac = rng.uniform(0.0, 0.9);
        let k = (((n as f64) * (1.0 - prune_frac)).round() as usize).clamp(1, n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + rng.below(n - i);
            idx.swap(i, j);
        }
        let mut kept = idx[..k].to_vec();
        kept.sort_unstable();
        if !require_interior {
            return kept;
        }
        if k >= 2 && kept[k - 1] - kept[0] + 1 > k {
            return kept;
        }
    }
    // Deterministic fallback: keep everything except index 1.
    (0..n).filter(|&i| i != 1).collect()
}

fn random_params(rng: &mut SplitMix64, channels: usize, state: usize) -> StepParams {
    let delta: Vec<f64> = if rng.bool() {
        vec![rng.uniform(0.05, 0.9)]
    } else {
        (0..channels).map(|_| rng.uniform(0.05, 0.9)).collect()
    };
    let b_len = if rng.bool() { state } else { channels * state };
    let c_len = if rng.bool() { state } else { channels * state };
    let b: Vec<f64> = (0..b_len).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let c: Vec<f64> = (0..c_len).map(|_| rng.uniform(-1.0, 1.0)).collect();
    StepParams::new(delta, b, c).expect("generated params are valid")
}

pub fn random_instance(rng: &mut SplitMix64, opts: &InstanceOptions) -> ScanInstance {
    let state = 1 + rng.below(8);
    let channels = 1 + rng.below(8);
    let batch = 1 + rng.below(2);
    let min_tokens = if opts.require_interior_gap { 3 } else { 1 };
    let tokens = min_tokens + rng.below(opts.max_original_len - min_tokens + 1);
    let mode = opts.mode.unwrap_or(if rng.bool() { SsmMode::Lti } else { SsmMode::Selective });
    let a: Vec<f64> = (0..channels * state).map(|_| -rng.uniform(0.1, 2.0)).collect();
    let ss = StateSpace::new(state, channels, a, mode).expect("generated layer is valid");
    let kept = random_keep_pattern(rng, tokens, opts.require_interior_gap);
    let map = PositionMap::from_kept(tokens, kept).expect("generated map is valid");
    let k = map.kept_len();
    let param_count = if mode == SsmMode::Lti { 1 } else { k };
    let params: Vec<StepParams> = (0..param_count)
        .map(|_| random_params(rng, channels, state))
        .collect();
    let mut x = TokenTensor::zeros(batch, k, channels);
    for v in x.data_mut() {
        *v = if opts.nonzero_inputs {
            let sign = if rng.bool() { 1.0 } else { -1.0 };
            sign * rng.uniform(0.25, 1.5)
        } else {
            rng.uniform(-1.5, 1.5)
        };
    }
    ScanInstance { ss, params, x, map }
}

/// Full-length oracle inputs for an instance: kept tokens scattered to their
/// original positions (pruned slots filled with garbage the oracle must
/// ignore) and params expanded under the gap-reuse rule.
pub fn oracle_inputs(rng: &mut SplitMix64, inst: &ScanInstance) -> (TokenTensor, Vec<StepParams>) {
    let garbage = rng.uniform(-3.0, 3.0);
    let x_full = scatter_to_original(&inst.x, &inst.map, garbage).expect("instance shapes agree");
    let params_full = if inst.ss.mode() == SsmMode::Lti {
        inst.params.clone()
    } else {
        expand_to_original(&inst.params, &inst.map).expect("instance shapes agree")
    };
    (x_full, params_full)
}

fn aligned_vs_oracle_max_diff(inst: &ScanInstance, rng: &mut SplitMix64, opts: &ScanOptions) -> f64 {
    let input = AlignedScanInput {
        x_remaining: &inst.x,
        params_remaining: &inst.params,
        map: &inst.map,
    };
    let aligned = scan_aligned_with(&inst.ss, &input, opts, GapPolicy::Walk, None)
        .expect("aligned scan runs on generated instance");
    let (x_full, params_full) = oracle_inputs(rng, inst);
    let oracle = oracle_zeroed_scan(&inst.ss, &x_full, &params_full, &inst.map)
        .expect("oracle runs on generated instance");
    let mut max_diff = 0.0f64;
    for b in 0..inst.x.batch() {
        for (j, &q) in inst.map.remaining_indices().iter().enumerate() {
            for ch in 0..inst.x.channels() {
                let d = (aligned.y.get(b, j, ch) - oracle.y.get(b, q, ch)).abs();
                max_diff = max_diff.max(d);
            }
        }
    }
    max_diff
}

// ---------------------------------------------------------------------------
// Checks
// ---------------------------------------------------------------------------

pub fn check_oracle_equivalence(seed: u64, threads: usize, instances: usize, tol: f64) -> CheckResult {
    let mut rng = SplitMix64::new(seed);
    let opts = ScanOptions { record_trace: false, threads };
    let gen = InstanceOptions::default();
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, &gen);
        worst = worst.max(aligned_vs_oracle_max_diff(&inst, &mut rng, &opts));
    }
    CheckResult {
        name: "aligned_matches_zeroed_oracle",
        passed: worst <= tol,
        detail: format!("{instances} instances, max abs diff {worst:.3e} (tol {tol:.0e})"),
    }
}

pub fn check_all_keep_bitwise(seed: u64, threads: usize, instances: usize) -> CheckResult {
    let mut rng = SplitMix64::new(seed);
    let opts = ScanOptions { record_trace: false, threads };
    let gen = InstanceOptions::default();
    let mut mismatches = 0usize;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, &gen);
        let all_keep = PositionMap::all_keep(inst.x.tokens()).expect("non-empty");
        let input = AlignedScanInput {
            x_remaining: &inst.x,
            params_remaining: &inst.params,
            map: &all_keep,
        };
        let aligned = scan_aligned_with(&inst.ss, &input, &opts, GapPolicy::Walk, None)
            .expect("aligned scan runs");
        let plain = scan_recurrent(&inst.ss, &inst.params, &inst.x).expect("recurrent scan runs");
        if aligned.y != plain.y || aligned.h_final != plain.h_final {
            mismatches += 1;
        }
    }
    CheckResult {
        name: "all_keep_bitwise_identity",
        passed: mismatches == 0,
        detail: format!("{instances} instances, {mismatches} bitwise mismatches"),
    }
}

pub fn check_convolution_equivalence(seed: u64, instances: usize, rel_tol: f64) -> CheckResult {
    let mut rng = SplitMix64::new(seed);
    let gen = InstanceOptions {
        max_original_len: 32,
        nonzero_inputs: true,
        mode: Some(SsmMode::Lti),
        ..InstanceOptions::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, &gen);
        let rec = scan_recurrent(&inst.ss, &inst.params, &inst.x).expect("recurrent runs");
        let conv = scan_convolution(&inst.ss, &inst.params[0], &inst.x).expect("convolution runs");
        let scale = rec.y.max_abs().max(1e-9);
        worst = worst.max(conv.y.max_abs_diff(&rec.y) / scale);
    }
    CheckResult {
        name: "convolution_matches_recurrent",
        passed: worst <= rel_tol,
        detail: format!("{instances} LTI instances, max rel err {worst:.3e} (tol {rel_tol:.0e})"),
    }
}

pub struct DivergenceStats {
    pub instances: usize,
    pub condensed_diverged: usize,
    pub aligned_max_diff: f64,
}

pub fn divergence_stats(seed: u64, threads: usize, instances: usize) -> DivergenceStats {
    let mut rng = SplitMix64::new(seed);
    let opts = ScanOptions { record_trace: false, threads };
    let gen = InstanceOptions {
        require_interior_gap: true,
        nonzero_inputs: true,
        ..InstanceOptions::default()
    };
    let mut diverged = 0usize;
    let mut aligned_worst = 0.0f64;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, &gen);
        aligned_worst = aligned_worst.max(aligned_vs_oracle_max_diff(&inst, &mut rng, &opts));

        let condensed =
            scan_condensed_naive(&inst.ss, &inst.x, &inst.params).expect("condensed runs");
        let (x_full, params_full) = oracle_inputs(&mut rng, &inst);
        let oracle = oracle_zeroed_scan(&inst.ss, &x_full, &params_full, &inst.map)
            .expect("oracle runs");
        let mut max_diff = 0.0f64;
        for b in 0..inst.x.batch() {
            for (j, &q) in inst.map.remaining_indices().iter().enumerate() {
                for ch in 0..inst.x.channels() {
                    let d = (condensed.y.get(b, j, ch) - oracle.y.get(b, q, ch)).abs();
                    max_diff = max_diff.max(d);
                }
            }
        }
        if max_diff > 1e-6 {
            diverged += 1;
        }
    }
    DivergenceStats {
        instances,
        condensed_diverged: diverged,
        aligned_max_diff: aligned_worst,
    }
}

pub fn check_condensed_divergence(seed: u64, threads: usize, instances: usize) -> CheckResult {
    let stats = divergence_stats(seed, threads, instances);
    let needed = (instances as f64 * 0.99).ceil() as usize;
    let passed = stats.condensed_diverged >= needed && stats.aligned_max_diff <= 1e-12;
    CheckResult {
        name: "condensed_diverges_aligned_does_not",
        passed,
        detail: format!(
            "{}/{} condensed runs diverged (>1e-6), aligned max diff {:.3e}",
            stats.condensed_diverged, stats.instances, stats.aligned_max_diff
        ),
    }
}

pub fn check_gap_power_identity(seed: u64, instances: usize, tol: f64) -> CheckResult {
    let mut rng = SplitMix64::new(seed);
    let gen = InstanceOptions {
        require_interior_gap: true,
        nonzero_inputs: true,
        mode: Some(SsmMode::Lti),
        ..InstanceOptions::default()
    };
    let opts = ScanOptions { record_trace: true, threads: 1 };
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, &gen);
        let input = AlignedScanInput {
            x_remaining: &inst.x,
            params_remaining: &inst.params,
            map: &inst.map,
        };
        let out = scan_aligned_with(&inst.ss, &input, &opts, GapPolicy::Walk, None)
            .expect("aligned scan runs");
        let trace = out.h_trace.as_ref().expect("trace requested");
        let disc = discretize_zoh(&inst.ss, &inst.params[0]).expect("params valid");
        let remaining = inst.map.remaining_indices();
        for b in 0..inst.x.batch() {
            for ch in 0..inst.x.channels() {
                let ab = disc.a_bar_row(ch);
                let bb = disc.b_bar_row(ch);
                for j in 1..remaining.len() {
                    let gap = (remaining[j] - remaining[j - 1]) as i32;
                    let h_prev = trace.at(b, ch, j - 1);
                    let h_next = trace.at(b, ch, j);
                    let xv = inst.x.get(b, j, ch);
                    for s in 0..ab.len() {
                        let expected = ab[s].powi(gap) * h_prev[s] + bb[s] * xv;
                        worst = worst.max((h_next[s] - expected).abs());
                    }
                }
            }
        }
    }
    CheckResult {
        name: "gap_power_identity",
        passed: worst <= tol,
        detail: format!("{instances} LTI instances, max abs diff {worst:.3e} (tol {tol:.0e})"),
    }
}

pub fn check_power_skip_agreement(seed: u64, threads: usize, instances: usize, tol: f64) -> CheckResult {
    let mut rng = SplitMix64::new(seed);
    let opts = ScanOptions { record_trace: false, threads };
    let gen = InstanceOptions { require_interior_gap: true, ..InstanceOptions::default() };
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, &gen);
        let input = AlignedScanInput {
            x_remaining: &inst.x,
            params_remaining: &inst.params,
            map: &inst.map,
        };
        let walk = scan_aligned_with(&inst.ss, &input, &opts, GapPolicy::Walk, None).expect("walk runs");
        let skip = scan_aligned_with(&inst.ss, &input, &opts, GapPolicy::PowerSkip, None)
            .expect("power-skip runs");
        worst = worst.max(walk.y.max_abs_diff(&skip.y));
        let h_diff = walk
            .h_final
            .iter()
            .zip(&skip.h_final)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(h_diff);
    }
    CheckResult {
        name: "power_skip_matches_walk",
        passed: worst <= tol,
        detail: format!("{instances} instances, max abs diff {worst:.3e} (tol {tol:.0e})"),
    }
}

pub fn check_pruned_step_work_bound(seed: u64, instances: usize) -> CheckResult {
    let mut rng = SplitMix64::new(seed);
    let gen = InstanceOptions { require_interior_gap: true, ..InstanceOptions::default() };
    let mut violations = 0usize;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, &gen);
        let input = AlignedScanInput {
            x_remaining: &inst.x,
            params_remaining: &inst.params,
            map: &inst.map,
        };
        let mut counters = ScanCounters::default();
        let out = scan_aligned_with(
            &inst.ss,
            &input,
            &ScanOptions::default(),
            GapPolicy::Walk,
            Some(&mut counters),
        )
        .expect("aligned scan runs");
        let n = inst.ss.state_dim();
        let lanes = (inst.x.batch() * inst.x.channels()) as u64;
        let k = inst.map.kept_len() as u64;
        let span = (*inst.map.remaining_indices().last().unwrap() + 1) as u64;
        let ok = counters.kept_lane_steps == lanes * k
            && counters.pruned_lane_steps == lanes * (span - k)
            && counters.pruned_macs == counters.pruned_lane_steps * pruned_step_macs(n)
            && counters.kept_macs
                == counters.kept_lane_steps * kept_step_macs(inst.ss.mode(), n)
            && out.y.tokens() == inst.map.kept_len();
        if !ok {
            violations += 1;
        }
    }
    CheckResult {
        name: "pruned_step_work_bound",
        passed: violations == 0,
        detail: format!("{instances} instances, {violations} counter violations"),
    }
}

pub fn check_threaded_bitwise(seed: u64, threads: usize, instances: usize) -> CheckResult {
    let mut rng = SplitMix64::new(seed);
    let gen = InstanceOptions::default();
    let par = threads.max(2);
    let mut mismatches = 0usize;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, &gen);
        let input = AlignedScanInput {
            x_remaining: &inst.x,
            params_remaining: &inst.params,
            map: &inst.map,
        };
        let seq = scan_aligned_with(
            &inst.ss,
            &input,
            &ScanOptions { record_trace: false, threads: 1 },
            GapPolicy::Walk,
            None,
        )
        .expect("sequential runs");
        let thr = scan_aligned_with(
            &inst.ss,
            &input,
            &ScanOptions { record_trace: false, threads: par },
            GapPolicy::Walk,
            None,
        )
        .expect("threaded runs");
        if seq.y != thr.y || seq.h_final != thr.h_final {
            mismatches += 1;
        }
    }
    CheckResult {
        name: "threaded_scan_bitwise_identity",
        passed: mismatches == 0,
        detail: format!("{instances} instances at {par} threads, {mismatches} mismatches"),
    }
}

/// The full suite behind `verify`.
pub fn run_verification(seed: u64, threads: usize) -> VerifyReport {
    let checks = vec![
        check_oracle_equivalence(seed, threads, 200, 1e-12),
        check_all_keep_bitwise(seed.wrapping_add(1), threads, 50),
        check_convolution_equivalence(seed.wrapping_add(2), 100, 1e-10),
        check_condensed_divergence(seed.wrapping_add(3), threads, 100),
        check_gap_power_identity(seed.wrapping_add(4), 100, 1e-12),
        check_power_skip_agreement(seed.wrapping_add(5), threads, 100, 1e-12),
        check_pruned_step_work_bound(seed.wrapping_add(6), 50),
        check_threaded_bitwise(seed.wrapping_add(7), threads, 25),
    ];
    VerifyReport { seed, threads, checks }
}
