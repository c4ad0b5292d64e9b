//! Command-line front end: verification suites, FLOPs accounting, pruning
//! simulation and wall-clock benchmarking with machine-readable outputs.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use ssm_prune::bench::{assemble_result, measure_mode, parse_mode, to_csv, BenchOptions};
use ssm_prune::error::Error;
use ssm_prune::flops::count_flops;
use ssm_prune::model::{init_weights, model_forward_with, seeded_input, ForwardOptions, ModelConfig, PruneMode};
use ssm_prune::tensorio::save_token_tensor;
use ssm_prune::verify::{run_verification, DEFAULT_VERIFY_SEED};

#[derive(Parser)]
#[command(name = "ssm-prune", version, about = "Token pruning toolkit for selective-scan models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the randomized equivalence and divergence suites.
    Verify {
        /// Seed for the randomized suites.
        #[arg(long)]
        seed: Option<u64>,
        /// Lane parallelism inside scans; results must not depend on it.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Emit the analytic FLOPs report for a config as JSON.
    Flops {
        #[arg(long)]
        config: PathBuf,
    },
    /// Time forward passes and report median wall-clock and speedup.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// dense | aligned | condensed
        #[arg(long, default_value = "aligned")]
        mode: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        /// Also write a CSV (config_digest, mode, median_ms, speedup).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Run the scheduled forward pass and emit per-stage keep maps and
    /// scores as JSON.
    PruneSim {
        #[arg(long)]
        config: PathBuf,
        /// Dump final features as a binary tensor + JSON sidecar.
        #[arg(long)]
        dump_features: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(run(cli));
}

fn run(cli: Cli) -> i32 {
    let outcome = match cli.cmd {
        Cmd::Verify { seed, threads } => cmd_verify(seed, threads),
        Cmd::Flops { config } => cmd_flops(&config),
        Cmd::Bench { config, mode, repeats, warmup, csv, threads } => {
            cmd_bench(&config, &mode, repeats, warmup, csv.as_deref(), threads)
        }
        Cmd::PruneSim { config, dump_features } => cmd_prune_sim(&config, dump_features.as_deref()),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_config(path: &Path) -> Result<ModelConfig, Error> {
    let text = fs::read_to_string(path)?;
    let mut cfg = ModelConfig::from_json_str(&text)?;
    if let Ok(s) = std::env::var("ALIGNED_SCAN_SEED") {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("ALIGNED_SCAN_SEED '{s}' is not a u64")))?;
    }
    Ok(cfg)
}

fn cmd_verify(seed: Option<u64>, threads: usize) -> Result<i32, Error> {
    let seed = seed.unwrap_or(DEFAULT_VERIFY_SEED);
    let report = run_verification(seed, threads);
    for line in report.summary_lines() {
        println!("{line}");
    }
    if report.all_passed() {
        println!("verification passed ({} checks, seed {seed:#x}, threads {threads})", report.checks.len());
        Ok(0)
    } else {
        println!("verification FAILED (seed {seed:#x}, threads {threads})");
        Ok(1)
    }
}

fn cmd_flops(config: &Path) -> Result<i32, Error> {
    let cfg = load_config(config)?;
    let report = count_flops(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn cmd_bench(
    config: &Path,
    mode: &str,
    repeats: usize,
    warmup: usize,
    csv: Option<&Path>,
    threads: usize,
) -> Result<i32, Error> {
    let cfg = load_config(config)?;
    let mode = parse_mode(mode)?;
    let opts = BenchOptions { repeats, warmup, threads };
    let dense = measure_mode(&cfg, PruneMode::Dense, &opts)?;
    let target = if mode == PruneMode::Dense {
        measure_mode(&cfg, PruneMode::Dense, &opts)?
    } else {
        measure_mode(&cfg, mode, &opts)?
    };
    let dense_result = assemble_result(&cfg, PruneMode::Dense, &opts, &dense, &dense);
    let result = assemble_result(&cfg, mode, &opts, &dense, &target);
    println!("{}", serde_json::to_string_pretty(&result)?);
    if let Some(path) = csv {
        fs::write(path, to_csv(&[dense_result, result]))?;
    }
    Ok(0)
}

#[derive(Serialize)]
struct StageReport {
    stage: usize,
    after_layer: usize,
    tokens_before: usize,
    tokens_after: usize,
    /// Composed keep map so far, in original grid index space.
    kept_original_indices: Vec<usize>,
    /// Batch-mean importance per token alive before this stage.
    scores: Vec<ScoreEntry>,
}

#[derive(Serialize)]
struct ScoreEntry {
    original_index: usize,
    score: f64,
}

#[derive(Serialize)]
struct PruneSimReport {
    config_digest: String,
    grid_height: usize,
    grid_width: usize,
    original_tokens: usize,
    final_tokens: usize,
    stages: Vec<StageReport>,
}

fn cmd_prune_sim(config: &Path, dump_features: Option<&Path>) -> Result<i32, Error> {
    let cfg = load_config(config)?;
    let weights = init_weights(&cfg);
    let x0 = seeded_input(&cfg);
    let out = model_forward_with(&cfg, &weights, &x0, &ForwardOptions { mode: PruneMode::Aligned, threads: 1 })?;

    let mut stages = Vec::new();
    let mut prev_kept: Vec<usize> = (0..cfg.tokens()).collect();
    for (i, (map, scores)) in out.stage_maps.iter().zip(&out.stage_scores).enumerate() {
        let mean = scores.batch_mean();
        let score_entries = prev_kept
            .iter()
            .zip(&mean)
            .map(|(&orig, &score)| ScoreEntry { original_index: orig, score })
            .collect();
        stages.push(StageReport {
            stage: i + 1,
            after_layer: cfg.prune.prune_after_layers[i],
            tokens_before: prev_kept.len(),
            tokens_after: map.kept_len(),
            kept_original_indices: map.remaining_indices().to_vec(),
            scores: score_entries,
        });
        prev_kept = map.remaining_indices().to_vec();
    }

    let report = PruneSimReport {
        config_digest: cfg.digest(),
        grid_height: cfg.grid.height,
        grid_width: cfg.grid.width,
        original_tokens: cfg.tokens(),
        final_tokens: out.features.tokens(),
        stages,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);

    if let Some(dir) = dump_features {
        save_token_tensor(dir, "features", &out.features)?;
    }
    Ok(0)
}
