//! Desk-scale bidirectional block stack: input/gate projections, per-token
//! scan parameters, directional selective scans, gating, residual, with
//! pruning stages at scheduled layers.
//!
//! This is deliberately a reduced surrogate of production vision scan
//! blocks: no convolution branch, no normalization, no classification head.
//! It isolates the scan and pruning mechanics so their behaviour can be
//! verified and timed in isolation.

use serde::{Deserialize, Serialize};

use crate::aligned::{scan_aligned_with, AlignedScanInput, GapPolicy};
use crate::error::{Error, Result};
use crate::pruning::{
    compose_maps, importance_scores_multi, select_tokens, ImportanceScores, Metric, PositionMap,
    PruneConfig,
};
use crate::rng::SplitMix64;
use crate::ssm::{
    scan_recurrent_with, ScanCounters, ScanOptions, SsmMode, StateSpace, StepParams,
};
use crate::tensor::TokenTensor;
use crate::traversal::{build_path, pruned_view, Direction, ScanPath, TokenGrid};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// Forward and backward row-major scans.
    #[default]
    Vim,
    /// Adds snake paths to the two row-major scans.
    Snake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: usize,
    pub embed_dim: usize,
    pub inner_dim: usize,
    pub state_dim: usize,
    pub grid: TokenGrid,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub prune: PruneConfig,
    pub seed: u64,
    #[serde(default)]
    pub scan_mode: ScanMode,
}

fn default_batch() -> usize {
    1
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.embed_dim == 0 || self.inner_dim == 0 || self.state_dim == 0 {
            return Err(Error::config("depth and dimensions must be >= 1"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch must be >= 1"));
        }
        if self.grid.height == 0 || self.grid.width == 0 {
            return Err(Error::config("grid dimensions must be >= 1"));
        }
        // Guard against pathological sizes before anything allocates.
        let tokens = self
            .grid
            .height
            .checked_mul(self.grid.width)
            .filter(|&n| n <= 1 << 24)
            .ok_or_else(|| Error::config("grid token count exceeds supported size"))?;
        if self.depth > 10_000
            || self.embed_dim > 100_000
            || self.inner_dim > 100_000
            || self.state_dim > 100_000
            || self.batch > 65_536
        {
            return Err(Error::config("model dimensions exceed supported size"));
        }
        self.inner_dim
            .checked_mul(self.state_dim)
            .and_then(|v| v.checked_mul(self.embed_dim.max(1)))
            .and_then(|v| v.checked_mul(tokens.max(1)))
            .ok_or_else(|| Error::config("model size product overflows"))?;
        self.prune.validate(self.depth)?;
        Ok(())
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn tokens(&self) -> usize {
        self.grid.tokens()
    }

    pub fn directions(&self) -> Vec<Direction> {
        match self.scan_mode {
            ScanMode::Vim => vec![Direction::ForwardRowMajor, Direction::BackwardRowMajor],
            ScanMode::Snake => vec![
                Direction::ForwardRowMajor,
                Direction::BackwardRowMajor,
                Direction::SnakeForward,
                Direction::SnakeBackward,
            ],
        }
    }

    /// FNV-1a hash of the canonical JSON form, used to tag reports.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in json.as_bytes() {
            hash ^= *byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }

    /// Small-model-shaped reference configuration: 24 layers, embed 384,
    /// inner 768, state 16, 14x14 grid, pruning after layers 5/10/15/20 at
    /// keep rate 0.7.
    pub fn vim_s_surrogate() -> Self {
        ModelConfig {
            depth: 24,
            embed_dim: 384,
            inner_dim: 768,
            state_dim: 16,
            grid: TokenGrid { height: 14, width: 14 },
            batch: 1,
            prune: PruneConfig {
                keep_rate: 0.7,
                prune_after_layers: vec![5, 10, 15, 20],
                metric: Metric::ClippedMean,
            },
            seed: 42,
            scan_mode: ScanMode::Vim,
        }
    }
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Row-major matrix used for block projections.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// All learnable tensors of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    /// embed -> inner, the scanned branch.
    pub in_proj: Mat,
    /// embed -> inner, the gate branch.
    pub gate_proj: Mat,
    /// inner -> 1; the per-token timescale before softplus.
    pub delta_proj: Vec<f64>,
    pub delta_bias: f64,
    /// inner -> state, per-token input projection of the scan.
    pub b_proj: Mat,
    /// inner -> state, per-token output projection of the scan.
    pub c_proj: Mat,
    /// inner -> embed, applied to the merged gated outputs.
    pub out_proj: Mat,
}

fn init_mat(rng: &mut SplitMix64, rows: usize, cols: usize, scale: f64) -> Mat {
    let bound = scale / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Mat { rows, cols, data }
}

/// Inverse of softplus: `ln(e^y - 1)`.
fn inv_softplus(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

/// Deterministic pseudo-random initialization from `cfg.seed`. The timescale
/// bias is drawn so that `softplus(delta_bias)` lands in [1e-3, 0.1].
pub fn init_weights(cfg: &ModelConfig) -> Vec<BlockWeights> {
    let mut rng = SplitMix64::new(cfg.seed);
    let (d, dp, n) = (cfg.embed_dim, cfg.inner_dim, cfg.state_dim);
    (0..cfg.depth)
        .map(|_| {
            let in_proj = init_mat(&mut rng, d, dp, 1.0);
            let gate_proj = init_mat(&mut rng, d, dp, 1.0);
            // Keep the weight part of the timescale small so the bias
            // dominates at init.
            let delta_proj = init_mat(&mut rng, dp, 1, 0.1).data;
            let log_lo = (1e-3f64).ln();
            let log_hi = (0.1f64).ln();
            let dt = rng.uniform(log_lo, log_hi).exp();
            let delta_bias = inv_softplus(dt);
            let b_proj = init_mat(&mut rng, dp, n, 1.0);
            let c_proj = init_mat(&mut rng, dp, n, 1.0);
            let out_proj = init_mat(&mut rng, dp, d, 1.0);
            BlockWeights {
                in_proj,
                gate_proj,
                delta_proj,
                delta_bias,
                b_proj,
                c_proj,
                out_proj,
            }
        })
        .collect()
}

/// Diagonal evolution rows shared by every block: state s decays with
/// coefficient -(s+1) on every channel.
pub fn build_state_space(cfg: &ModelConfig) -> StateSpace {
    let mut a = Vec::with_capacity(cfg.inner_dim * cfg.state_dim);
    for _ch in 0..cfg.inner_dim {
        for s in 0..cfg.state_dim {
            a.push(-((s + 1) as f64));
        }
    }
    StateSpace::new(cfg.state_dim, cfg.inner_dim, a, SsmMode::Selective)
        .expect("surrogate state space is valid by construction")
}

/// Deterministic benchmark/simulation input derived from the config seed.
pub fn seeded_input(cfg: &ModelConfig) -> TokenTensor {
    let mut rng = SplitMix64::new(cfg.seed ^ 0x9e37_79b9_0000_0001);
    let mut x = TokenTensor::zeros(cfg.batch, cfg.tokens(), cfg.embed_dim);
    for v in x.data_mut() {
        *v = rng.uniform(-1.0, 1.0);
    }
    x
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PruneMode {
    /// No pruning stages; plain recurrent scans.
    Dense,
    /// Scheduled pruning with the position-aligned kernel.
    #[default]
    Aligned,
    /// Scheduled pruning with gaps erased (the failure baseline).
    Condensed,
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    pub mode: PruneMode,
    /// Lane parallelism inside scans; 0 or 1 is sequential.
    pub threads: usize,
}

/// Multiply tallies for one layer, split by cost site.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LayerCounters {
    pub projections_macs: u64,
    pub gating_macs: u64,
    pub out_proj_macs: u64,
    /// Transcendental calls outside the scan (softplus, gate sigmoid).
    pub transcendentals: u64,
    pub scan: ScanCounters,
}

impl LayerCounters {
    pub fn total_macs(&self) -> u64 {
        self.projections_macs + self.gating_macs + self.out_proj_macs + self.scan.total_macs()
    }
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// Final kept tokens, ascending original order.
    pub features: TokenTensor,
    /// Composed keep map over the original grid after each scheduled stage.
    pub stage_maps: Vec<PositionMap>,
    /// Scores that drove each stage, over the tokens alive at that stage.
    pub stage_scores: Vec<ImportanceScores>,
    pub layer_counters: Vec<LayerCounters>,
}

/// `out = x @ w` over the flattened (batch * tokens) row dimension.
fn project(x: &TokenTensor, w: &Mat, macs: &mut u64) -> TokenTensor {
    debug_assert_eq!(x.channels(), w.rows);
    let rows = x.batch() * x.tokens();
    let mut out = TokenTensor::zeros(x.batch(), x.tokens(), w.cols);
    let a = x.data();
    let o = out.data_mut();
    for i in 0..rows {
        let a_row = &a[i * w.rows..(i + 1) * w.rows];
        let o_row = &mut o[i * w.cols..(i + 1) * w.cols];
        for (kk, &av) in a_row.iter().enumerate() {
            let w_row = w.row(kk);
            for (ov, &wv) in o_row.iter_mut().zip(w_row) {
                *ov += av * wv;
            }
        }
    }
    *macs += (rows * w.rows * w.cols) as u64;
    out
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

/// One-batch gather of selected tokens into scan order.
fn gather_batch_tokens(x: &TokenTensor, b: usize, order: &[usize]) -> TokenTensor {
    let mut out = TokenTensor::zeros(1, order.len(), x.channels());
    for (j, &t) in order.iter().enumerate() {
        out.token_mut(0, j).copy_from_slice(x.token(b, t));
    }
    out
}

/// One block: project, scan per direction, gate, merge, output-project,
/// residual. `t_prev` holds only currently kept tokens in ascending original
/// order; `map` locates them on the original grid. Returns the block output
/// and the raw (ungated) per-direction scan outputs used for importance
/// scoring, both in the same dense token order.
#[allow(clippy::too_many_arguments)]
pub fn block_forward(
    ss: &StateSpace,
    w: &BlockWeights,
    t_prev: &TokenTensor,
    paths: &[ScanPath],
    map: &PositionMap,
    mode: PruneMode,
    threads: usize,
    counters: &mut LayerCounters,
) -> Result<(TokenTensor, Vec<TokenTensor>)> {
    let k = t_prev.tokens();
    if k != map.kept_len() {
        return Err(Error::shape(format!(
            "block input has {k} tokens, map keeps {}",
            map.kept_len()
        )));
    }
    if t_prev.channels() != w.in_proj.rows {
        return Err(Error::shape(format!(
            "block input has {} channels, weights expect {}",
            t_prev.channels(),
            w.in_proj.rows
        )));
    }
    let batch = t_prev.batch();
    let dp = ss.channel_dim();

    let x_inner = project(t_prev, &w.in_proj, &mut counters.projections_macs);
    let gate = project(t_prev, &w.gate_proj, &mut counters.projections_macs);

    // Per-token scan parameters, shared across channels and directions.
    let b_proj = project(&x_inner, &w.b_proj, &mut counters.projections_macs);
    let c_proj = project(&x_inner, &w.c_proj, &mut counters.projections_macs);
    let mut deltas = vec![0.0; batch * k];
    for b in 0..batch {
        for t in 0..k {
            let mut acc = 0.0;
            for (xv, wv) in x_inner.token(b, t).iter().zip(&w.delta_proj) {
                acc += xv * wv;
            }
            deltas[b * k + t] = softplus(acc + w.delta_bias);
        }
    }
    counters.projections_macs += (batch * k * dp) as u64;
    counters.transcendentals += 2 * (batch * k) as u64;

    let params_dense: Vec<Vec<StepParams>> = (0..batch)
        .map(|b| {
            (0..k)
                .map(|t| {
                    StepParams::shared(
                        deltas[b * k + t],
                        b_proj.token(b, t).to_vec(),
                        c_proj.token(b, t).to_vec(),
                    )
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let scan_opts = ScanOptions { record_trace: false, threads };
    let mut y_dirs = Vec::with_capacity(paths.len());
    for path in paths {
        let view = pruned_view(path, map)?;
        let mut y_dir = TokenTensor::zeros(batch, k, dp);
        for (b, batch_params) in params_dense.iter().enumerate() {
            let x_scan = gather_batch_tokens(&x_inner, b, &view.dense_order);
            let params_scan: Vec<StepParams> = view
                .dense_order
                .iter()
                .map(|&i| batch_params[i].clone())
                .collect();
            let run_plain = map.is_all_keep() || mode == PruneMode::Condensed;
            let out = if run_plain {
                scan_recurrent_with(ss, &params_scan, &x_scan, &scan_opts, Some(&mut counters.scan))?
            } else {
                let input = AlignedScanInput {
                    x_remaining: &x_scan,
                    params_remaining: &params_scan,
                    map: &view.scan_map,
                };
                scan_aligned_with(ss, &input, &scan_opts, GapPolicy::Walk, Some(&mut counters.scan))?
            };
            // Inverse of the direction ordering: scan slot j belongs to
            // dense token dense_order[j].
            for (j, &t) in view.dense_order.iter().enumerate() {
                y_dir.token_mut(b, t).copy_from_slice(out.y.token(0, j));
            }
        }
        y_dirs.push(y_dir);
    }

    // Gate each direction with silu(z) and sum.
    let mut merged = TokenTensor::zeros(batch, k, dp);
    for y_dir in &y_dirs {
        for (m, (yv, zv)) in merged
            .data_mut()
            .iter_mut()
            .zip(y_dir.data().iter().zip(gate.data()))
        {
            *m += *yv * silu(*zv);
        }
        counters.gating_macs += 2 * (batch * k * dp) as u64;
        counters.transcendentals += (batch * k * dp) as u64;
    }

    let mut t_next = project(&merged, &w.out_proj, &mut counters.out_proj_macs);
    for (o, &r) in t_next.data_mut().iter_mut().zip(t_prev.data()) {
        *o += r;
    }
    Ok((t_next, y_dirs))
}

pub fn model_forward(cfg: &ModelConfig, weights: &[BlockWeights], x0: &TokenTensor) -> Result<ModelOutput> {
    model_forward_with(cfg, weights, x0, &ForwardOptions::default())
}

pub fn model_forward_with(
    cfg: &ModelConfig,
    weights: &[BlockWeights],
    x0: &TokenTensor,
    opts: &ForwardOptions,
) -> Result<ModelOutput> {
    cfg.validate()?;
    if weights.len() != cfg.depth {
        return Err(Error::config(format!(
            "{} blocks of weights for depth {}",
            weights.len(),
            cfg.depth
        )));
    }
    if x0.tokens() != cfg.tokens() || x0.channels() != cfg.embed_dim {
        return Err(Error::shape(format!(
            "input {}x{} does not match grid tokens {} x embed {}",
            x0.tokens(),
            x0.channels(),
            cfg.tokens(),
            cfg.embed_dim
        )));
    }

    let ss = build_state_space(cfg);
    let paths: Vec<ScanPath> = cfg.directions().iter().map(|&d| build_path(&cfg.grid, d)).collect();
    let n_tokens = cfg.tokens();

    let mut t = x0.clone();
    let mut global_map = PositionMap::all_keep(n_tokens)?;
    let mut stage_maps = Vec::new();
    let mut stage_scores = Vec::new();
    let mut layer_counters = Vec::with_capacity(cfg.depth);

    for layer in 1..=cfg.depth {
        let mut counters = LayerCounters::default();
        let (t_next, y_dirs) = block_forward(
            &ss,
            &weights[layer - 1],
            &t,
            &paths,
            &global_map,
            opts.mode,
            opts.threads,
            &mut counters,
        )?;
        t = t_next;
        layer_counters.push(counters);

        let scheduled = cfg.prune.prune_after_layers.contains(&layer);
        if scheduled && opts.mode != PruneMode::Dense {
            let dir_refs: Vec<&TokenTensor> = y_dirs.iter().collect();
            let scores = importance_scores_multi(&dir_refs, cfg.prune.metric)?;
            let keep_count = cfg.prune.keep_count(t.tokens());
            let stage_local = select_tokens(&scores, keep_count)?;
            t = t.gather_tokens(stage_local.remaining_indices())?;
            global_map = compose_maps(&global_map, &stage_local)?;
            stage_maps.push(global_map.clone());
            stage_scores.push(scores);
        }
    }

    Ok(ModelOutput {
        features: t,
        stage_maps,
        stage_scores,
        layer_counters,
    })
}
