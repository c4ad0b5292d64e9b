//! Wall-clock benchmark harness: warmup + median-of-repeats forward passes
//! on a monotonic clock, with a dense baseline measured in the same session.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    init_weights, model_forward_with, seeded_input, ForwardOptions, LayerCounters, ModelConfig,
    PruneMode,
};

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub repeats: usize,
    pub warmup: usize,
    pub threads: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { repeats: 5, warmup: 2, threads: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub config_digest: String,
    pub mode: String,
    pub repeats: usize,
    pub warmup: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub dense_median_ms: f64,
    pub tokens_per_sec: f64,
    pub speedup_vs_dense: f64,
    /// Set when the workload is too small for the clock to resolve reliably.
    pub timer_warning: bool,
    pub total_macs_per_pass: u64,
    pub scan_macs_per_pass: u64,
}

pub fn mode_name(mode: PruneMode) -> &'static str {
    match mode {
        PruneMode::Dense => "dense",
        PruneMode::Aligned => "aligned",
        PruneMode::Condensed => "condensed",
    }
}

pub fn parse_mode(s: &str) -> Result<PruneMode> {
    match s {
        "dense" => Ok(PruneMode::Dense),
        "aligned" => Ok(PruneMode::Aligned),
        "condensed" => Ok(PruneMode::Condensed),
        other => Err(Error::config(format!(
            "unknown mode '{other}' (expected dense|aligned|condensed)"
        ))),
    }
}

/// Timing of one mode: median/min/max over the repeats plus the per-pass
/// work tallies.
#[derive(Debug, Clone)]
pub struct ModeTiming {
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub total_macs: u64,
    pub scan_macs: u64,
}

fn total_work(counters: &[LayerCounters]) -> (u64, u64) {
    let total = counters.iter().map(LayerCounters::total_macs).sum();
    let scan = counters.iter().map(|c| c.scan.total_macs()).sum();
    (total, scan)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Times `repeats` forward passes of one mode after `warmup` untimed passes.
/// The first two warmup passes double as the work-determinism check: their
/// operation counters must be identical.
pub fn measure_mode(cfg: &ModelConfig, mode: PruneMode, opts: &BenchOptions) -> Result<ModeTiming> {
    if opts.repeats < 5 {
        return Err(Error::config("bench repeats must be >= 5"));
    }
    if opts.warmup < 2 {
        return Err(Error::config("bench warmup must be >= 2"));
    }
    cfg.validate()?;
    let weights = init_weights(cfg);
    let x0 = seeded_input(cfg);
    let fwd_opts = ForwardOptions { mode, threads: opts.threads };

    let first = model_forward_with(cfg, &weights, &x0, &fwd_opts)?;
    let second = model_forward_with(cfg, &weights, &x0, &fwd_opts)?;
    if first.layer_counters != second.layer_counters {
        return Err(Error::domain(
            "operation counters differ between repeated passes; benchmark work is not deterministic",
        ));
    }
    let (total_macs, scan_macs) = total_work(&first.layer_counters);
    for _ in 2..opts.warmup {
        model_forward_with(cfg, &weights, &x0, &fwd_opts)?;
    }

    let mut times_ms = Vec::with_capacity(opts.repeats);
    for _ in 0..opts.repeats {
        let start = Instant::now();
        let out = model_forward_with(cfg, &weights, &x0, &fwd_opts)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        // Keep the result alive past the clock read.
        std::hint::black_box(&out.features);
        times_ms.push(elapsed);
    }
    times_ms.sort_by(|a, b| a.total_cmp(b));
    Ok(ModeTiming {
        median_ms: median(&times_ms),
        min_ms: times_ms[0],
        max_ms: *times_ms.last().unwrap(),
        total_macs,
        scan_macs,
    })
}

/// Benchmarks `mode` against a dense baseline measured in the same session.
pub fn run_benchmark(cfg: &ModelConfig, mode: PruneMode, opts: &BenchOptions) -> Result<BenchResult> {
    let dense = measure_mode(cfg, PruneMode::Dense, opts)?;
    let target = if mode == PruneMode::Dense {
        measure_mode(cfg, PruneMode::Dense, opts)?
    } else {
        measure_mode(cfg, mode, opts)?
    };
    Ok(assemble_result(cfg, mode, opts, &dense, &target))
}

/// Builds a `BenchResult` from a previously measured dense baseline; used
/// when several modes share one session.
pub fn assemble_result(
    cfg: &ModelConfig,
    mode: PruneMode,
    opts: &BenchOptions,
    dense: &ModeTiming,
    target: &ModeTiming,
) -> BenchResult {
    let tokens = (cfg.batch * cfg.tokens()) as f64;
    BenchResult {
        config_digest: cfg.digest(),
        mode: mode_name(mode).to_string(),
        repeats: opts.repeats,
        warmup: opts.warmup,
        median_ms: target.median_ms,
        min_ms: target.min_ms,
        max_ms: target.max_ms,
        dense_median_ms: dense.median_ms,
        tokens_per_sec: tokens / (target.median_ms / 1e3),
        speedup_vs_dense: dense.median_ms / target.median_ms,
        timer_warning: target.median_ms < 1.0,
        total_macs_per_pass: target.total_macs,
        scan_macs_per_pass: target.scan_macs,
    }
}

/// CSV rows for a bench session: header plus one row per measured mode.
pub fn to_csv(results: &[BenchResult]) -> String {
    let mut out = String::from("config_digest,mode,median_ms,speedup\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.config_digest, r.mode, r.median_ms, r.speedup_vs_dense
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruning::{Metric, PruneConfig};
    use crate::traversal::TokenGrid;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            depth: 2,
            embed_dim: 4,
            inner_dim: 8,
            state_dim: 2,
            grid: TokenGrid { height: 2, width: 4 },
            batch: 1,
            prune: PruneConfig {
                keep_rate: 0.5,
                prune_after_layers: vec![1],
                metric: Metric::ClippedMean,
            },
            seed: 3,
            scan_mode: crate::model::ScanMode::Vim,
        }
    }

    #[test]
    fn repeats_and_warmup_minimums_enforced() {
        let cfg = tiny_cfg();
        let bad = BenchOptions { repeats: 4, warmup: 2, threads: 1 };
        assert!(measure_mode(&cfg, PruneMode::Dense, &bad).is_err());
        let bad = BenchOptions { repeats: 5, warmup: 1, threads: 1 };
        assert!(measure_mode(&cfg, PruneMode::Dense, &bad).is_err());
    }

    #[test]
    fn dense_vs_dense_speedup_near_one() {
        let cfg = tiny_cfg();
        let res = run_benchmark(&cfg, PruneMode::Dense, &BenchOptions::default()).unwrap();
        // Tiny workload: generous noise budget, this only guards sanity.
        assert!(res.speedup_vs_dense > 0.2 && res.speedup_vs_dense < 5.0);
        assert_eq!(res.mode, "dense");
    }

    #[test]
    fn csv_has_expected_columns() {
        let cfg = tiny_cfg();
        let res = run_benchmark(&cfg, PruneMode::Aligned, &BenchOptions::default()).unwrap();
        let csv = to_csv(std::slice::from_ref(&res));
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "config_digest,mode,median_ms,speedup");
        let row = lines.next().unwrap();
        assert!(row.starts_with(&res.config_digest));
        assert!(row.contains(",aligned,"));
    }

    #[test]
    fn bench_result_json_round_trip() {
        let cfg = tiny_cfg();
        let res = run_benchmark(&cfg, PruneMode::Condensed, &BenchOptions::default()).unwrap();
        let json = serde_json::to_string(&res).unwrap();
        let back: BenchResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, res);
    }
}
