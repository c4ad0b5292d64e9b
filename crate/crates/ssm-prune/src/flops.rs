//! Analytic multiply counts for the block stack, cross-checked against the
//! in-kernel counters.
//!
//! Counting convention: one MAC is one floating multiply (most of them pair
//! with an add); reported FLOPs double that. Transcendentals, divisions,
//! residual adds, the cross-direction sum, and importance scoring are
//! outside the MAC budget. The analytic route derives counts from layer
//! dimensions and keep-map geometry; the instrumented route tallies what the
//! kernels actually execute. The two must agree exactly.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{
    init_weights, model_forward_with, seeded_input, ForwardOptions, LayerCounters, ModelConfig,
    PruneMode,
};
use crate::pruning::PositionMap;
use crate::ssm::{kept_step_macs, pruned_step_macs, SsmMode};
use crate::traversal::{build_path, pruned_view};

/// Multiply counts of one layer, split by cost site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub layer: usize,
    /// Tokens alive entering this layer.
    pub tokens: usize,
    pub projections: u64,
    pub scan_kept: u64,
    pub scan_pruned: u64,
    pub gating: u64,
    pub out_proj: u64,
}

impl LayerFlops {
    pub fn total(&self) -> u64 {
        self.projections + self.scan_kept + self.scan_pruned + self.gating + self.out_proj
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsVariant {
    pub per_layer: Vec<LayerFlops>,
    pub total_macs: u64,
    pub total_flops: u64,
}

impl FlopsVariant {
    fn from_layers(per_layer: Vec<LayerFlops>) -> Self {
        let total_macs = per_layer.iter().map(LayerFlops::total).sum();
        FlopsVariant {
            per_layer,
            total_macs,
            total_flops: 2 * total_macs,
        }
    }

    pub fn scan_macs(&self) -> u64 {
        self.per_layer.iter().map(|l| l.scan_kept + l.scan_pruned).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub config_digest: String,
    /// Counting convention reminder for downstream consumers.
    pub convention: String,
    pub dense: FlopsVariant,
    pub pruned: FlopsVariant,
    pub reduction_percent: f64,
    /// Scan share of the dense total, as a sanity anchor.
    pub scan_share_percent: f64,
}

/// Keep map active while each layer runs, reconstructed from the composed
/// per-stage maps. Layer l (1-based) runs before stage i completes iff
/// l <= prune_after_layers[i].
fn active_maps(cfg: &ModelConfig, stage_maps: &[PositionMap]) -> Result<Vec<PositionMap>> {
    let all = PositionMap::all_keep(cfg.tokens())?;
    let mut out = Vec::with_capacity(cfg.depth);
    let mut stage = 0usize;
    for layer in 1..=cfg.depth {
        while stage < cfg.prune.prune_after_layers.len()
            && cfg.prune.prune_after_layers[stage] < layer
        {
            stage += 1;
        }
        let map = if stage == 0 { &all } else { &stage_maps[stage - 1] };
        out.push(map.clone());
    }
    Ok(out)
}

/// Closed-form per-layer counts for the selective block stack, given the
/// keep map each layer runs under. `pruned_walks` enables the aligned
/// kernel's gap-walk cost; dense and condensed execution set it false.
fn analytic_layers(cfg: &ModelConfig, maps: &[PositionMap], pruned_walks: bool) -> Result<Vec<LayerFlops>> {
    let b = cfg.batch as u64;
    let d = cfg.embed_dim as u64;
    let dp = cfg.inner_dim as u64;
    let n = cfg.state_dim as u64;
    let kept_macs = kept_step_macs(SsmMode::Selective, cfg.state_dim);
    let decay_macs = pruned_step_macs(cfg.state_dim);
    let paths: Vec<_> = cfg.directions().iter().map(|&dir| build_path(&cfg.grid, dir)).collect();

    let mut out = Vec::with_capacity(maps.len());
    for (i, map) in maps.iter().enumerate() {
        let k = map.kept_len() as u64;
        let mut scan_kept = 0u64;
        let mut scan_pruned = 0u64;
        for path in &paths {
            scan_kept += b * dp * k * kept_macs;
            if pruned_walks && !map.is_all_keep() {
                let view = pruned_view(path, map)?;
                let span = view.scan_map.remaining_indices().last().unwrap() + 1;
                scan_pruned += b * dp * (span as u64 - k) * decay_macs;
            }
        }
        out.push(LayerFlops {
            layer: i + 1,
            tokens: map.kept_len(),
            projections: b * k * (2 * d * dp + dp * (1 + 2 * n)),
            scan_kept,
            scan_pruned,
            gating: paths.len() as u64 * 2 * b * k * dp,
            out_proj: b * k * dp * d,
        });
    }
    Ok(out)
}

/// Analytic counts for the unpruned model.
pub fn dense_layers(cfg: &ModelConfig) -> Result<Vec<LayerFlops>> {
    let all = vec![PositionMap::all_keep(cfg.tokens())?; cfg.depth];
    analytic_layers(cfg, &all, false)
}

/// Analytic counts for the aligned-pruned model under the given per-stage
/// composed maps (as produced by `model_forward`).
pub fn pruned_layers(cfg: &ModelConfig, stage_maps: &[PositionMap]) -> Result<Vec<LayerFlops>> {
    let maps = active_maps(cfg, stage_maps)?;
    analytic_layers(cfg, &maps, true)
}

/// Converts in-kernel tallies into the per-layer report shape so the two
/// routes can be compared exactly.
pub fn layers_from_counters(counters: &[LayerCounters], maps: &[PositionMap]) -> Vec<LayerFlops> {
    counters
        .iter()
        .zip(maps)
        .enumerate()
        .map(|(i, (c, map))| LayerFlops {
            layer: i + 1,
            tokens: map.kept_len(),
            projections: c.projections_macs,
            scan_kept: c.scan.kept_macs + c.scan.discretize_macs,
            scan_pruned: c.scan.pruned_macs,
            gating: c.gating_macs,
            out_proj: c.out_proj_macs,
        })
        .collect()
}

/// Runs the scheduled forward once (seeded from the config) to obtain the
/// stage maps, then reports closed-form counts for the dense and pruned
/// variants.
pub fn count_flops(cfg: &ModelConfig) -> Result<FlopsReport> {
    cfg.validate()?;
    let weights = init_weights(cfg);
    let x0 = seeded_input(cfg);
    let out = model_forward_with(
        cfg,
        &weights,
        &x0,
        &ForwardOptions { mode: PruneMode::Aligned, threads: 1 },
    )?;
    let dense = FlopsVariant::from_layers(dense_layers(cfg)?);
    let pruned = FlopsVariant::from_layers(pruned_layers(cfg, &out.stage_maps)?);
    let reduction_percent = 100.0 * (1.0 - pruned.total_macs as f64 / dense.total_macs as f64);
    let scan_share_percent = 100.0 * dense.scan_macs() as f64 / dense.total_macs as f64;
    Ok(FlopsReport {
        config_digest: cfg.digest(),
        convention: "1 MAC = 1 multiply; total_flops = 2 * total_macs".into(),
        dense,
        pruned,
        reduction_percent,
        scan_share_percent,
    })
}

/// Instrumented counterpart of `count_flops`: runs the forward in the given
/// mode and converts the layer counters.
pub struct InstrumentedRun {
    pub layers: Vec<LayerFlops>,
    /// Composed keep map per scheduled stage, as recorded by the forward.
    pub stage_maps: Vec<PositionMap>,
}

pub fn instrumented_run(cfg: &ModelConfig, mode: PruneMode) -> Result<InstrumentedRun> {
    cfg.validate()?;
    let weights = init_weights(cfg);
    let x0 = seeded_input(cfg);
    let out = model_forward_with(cfg, &weights, &x0, &ForwardOptions { mode, threads: 1 })?;
    let maps = match mode {
        PruneMode::Dense => vec![PositionMap::all_keep(cfg.tokens())?; cfg.depth],
        _ => active_maps(cfg, &out.stage_maps)?,
    };
    Ok(InstrumentedRun {
        layers: layers_from_counters(&out.layer_counters, &maps),
        stage_maps: out.stage_maps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruning::{Metric, PruneConfig};
    use crate::traversal::TokenGrid;

    fn toy_cfg() -> ModelConfig {
        ModelConfig {
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
            scan_mode: crate::model::ScanMode::Vim,
        }
    }

    #[test]
    fn keep_rate_one_reports_zero_reduction() {
        let mut cfg = toy_cfg();
        cfg.prune.keep_rate = 1.0;
        let report = count_flops(&cfg).unwrap();
        assert_eq!(report.dense.total_macs, report.pruned.total_macs);
        assert_eq!(report.reduction_percent, 0.0);
    }

    #[test]
    fn analytic_matches_instrumented_on_toy_config() {
        let cfg = toy_cfg();
        let run = instrumented_run(&cfg, PruneMode::Aligned).unwrap();
        let analytic = pruned_layers(&cfg, &run.stage_maps).unwrap();
        assert_eq!(analytic, run.layers);
    }

    #[test]
    fn dense_analytic_matches_instrumented() {
        let cfg = toy_cfg();
        let run = instrumented_run(&cfg, PruneMode::Dense).unwrap();
        let analytic = dense_layers(&cfg).unwrap();
        assert_eq!(analytic, run.layers);
    }

    #[test]
    fn report_json_round_trip_is_fixed_point() {
        let report = count_flops(&toy_cfg()).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: FlopsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let json2 = serde_json::to_string(&back).unwrap();
        assert_eq!(json, json2);
    }

    #[test]
    fn pruned_never_exceeds_dense() {
        let report = count_flops(&toy_cfg()).unwrap();
        assert!(report.pruned.total_macs <= report.dense.total_macs);
        assert!(report.reduction_percent >= 0.0);
    }
}
