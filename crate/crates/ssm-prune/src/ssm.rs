//! Discretization and reference scan kernels for diagonal state space layers.
//!
//! A layer holds one strictly negative diagonal row of the evolution matrix
//! per channel. Scans run independently per (batch, channel) lane; within a
//! lane the recurrence is strictly sequential. The same per-step helpers are
//! shared with the position-aligned kernel so that the unpruned paths stay
//! bitwise identical.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::TokenTensor;

/// Below this magnitude of `delta * a` the zero-order-hold input factor is
/// replaced by its series limit `delta`, removing the removable singularity.
pub const ZOH_SERIES_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsmMode {
    /// Time-invariant parameters, one `StepParams` broadcast over the scan.
    Lti,
    /// Input-dependent parameters, one `StepParams` per token.
    Selective,
}

/// Static description of one scan layer: dimensions and the per-channel
/// diagonal of the evolution matrix.
#[derive(Debug, Clone)]
pub struct StateSpace {
    state_dim: usize,
    channel_dim: usize,
    a_diag: Vec<f64>,
    mode: SsmMode,
}

impl StateSpace {
    /// `a_diag` is row-major `[channel][state]` and must be strictly
    /// negative everywhere so that `exp(delta * a) < 1` for positive delta.
    pub fn new(state_dim: usize, channel_dim: usize, a_diag: Vec<f64>, mode: SsmMode) -> Result<Self> {
        if state_dim == 0 || channel_dim == 0 {
            return Err(Error::shape("state_dim and channel_dim must be >= 1"));
        }
        if a_diag.len() != state_dim * channel_dim {
            return Err(Error::shape(format!(
                "a_diag length {} does not match {channel_dim}x{state_dim}",
                a_diag.len()
            )));
        }
        if a_diag.iter().any(|&a| a >= 0.0 || a.is_nan()) {
            return Err(Error::domain("all a_diag entries must be strictly negative"));
        }
        Ok(StateSpace {
            state_dim,
            channel_dim,
            a_diag,
            mode,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn channel_dim(&self) -> usize {
        self.channel_dim
    }

    pub fn mode(&self) -> SsmMode {
        self.mode
    }

    #[inline]
    pub fn a_row(&self, ch: usize) -> &[f64] {
        &self.a_diag[ch * self.state_dim..(ch + 1) * self.state_dim]
    }
}

/// Per-step inputs of the scan: timescale, input projection and output
/// projection. Each field is either shared across channels (short form) or
/// given per channel.
#[derive(Debug, Clone)]
pub struct StepParams {
    delta: Vec<f64>,
    b_in: Vec<f64>,
    c_out: Vec<f64>,
}

impl StepParams {
    /// `delta` has length 1 or `channel_dim`; `b_in`/`c_out` have length
    /// `state_dim` or `channel_dim * state_dim`. Deltas must be nonnegative.
    pub fn new(delta: Vec<f64>, b_in: Vec<f64>, c_out: Vec<f64>) -> Result<Self> {
        if delta.is_empty() || b_in.is_empty() || c_out.is_empty() {
            return Err(Error::shape("step params must be non-empty"));
        }
        if delta.iter().any(|&d| d < 0.0 || d.is_nan()) {
            return Err(Error::domain("delta must be nonnegative and finite"));
        }
        Ok(StepParams { delta, b_in, c_out })
    }

    /// Single timescale and one state vector each for input and output,
    /// broadcast over all channels.
    pub fn shared(delta: f64, b_in: Vec<f64>, c_out: Vec<f64>) -> Result<Self> {
        StepParams::new(vec![delta], b_in, c_out)
    }

    pub fn validate_for(&self, ss: &StateSpace) -> Result<()> {
        let n = ss.state_dim;
        let c = ss.channel_dim;
        let len_ok = |l: usize| l == n || l == c * n;
        if !(self.delta.len() == 1 || self.delta.len() == c) {
            return Err(Error::shape(format!(
                "delta length {} is neither 1 nor channel_dim {c}",
                self.delta.len()
            )));
        }
        if !len_ok(self.b_in.len()) || !len_ok(self.c_out.len()) {
            return Err(Error::shape(format!(
                "b/c length ({}, {}) must be state_dim {n} or channel_dim*state_dim {}",
                self.b_in.len(),
                self.c_out.len(),
                c * n
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn delta(&self, ch: usize) -> f64 {
        if self.delta.len() == 1 {
            self.delta[0]
        } else {
            self.delta[ch]
        }
    }

    #[inline]
    pub fn b_row(&self, ch: usize, state_dim: usize) -> &[f64] {
        if self.b_in.len() == state_dim {
            &self.b_in
        } else {
            &self.b_in[ch * state_dim..(ch + 1) * state_dim]
        }
    }

    #[inline]
    pub fn c_row(&self, ch: usize, state_dim: usize) -> &[f64] {
        if self.c_out.len() == state_dim {
            &self.c_out
        } else {
            &self.c_out[ch * state_dim..(ch + 1) * state_dim]
        }
    }
}

/// Zero-order-hold transform of one step: state multiplier and discretized
/// input coefficient, row-major `[channel][state]`.
#[derive(Debug, Clone)]
pub struct DiscretizedParams {
    state_dim: usize,
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
}

impl DiscretizedParams {
    #[inline]
    pub fn a_bar_row(&self, ch: usize) -> &[f64] {
        &self.a_bar[ch * self.state_dim..(ch + 1) * self.state_dim]
    }

    #[inline]
    pub fn b_bar_row(&self, ch: usize) -> &[f64] {
        &self.b_bar[ch * self.state_dim..(ch + 1) * self.state_dim]
    }
}

/// State multiplier and input factor for one (delta, a) pair:
/// `a_bar = exp(delta * a)`, `b_bar = factor * b` with
/// `factor = (a_bar - 1) / a`, falling back to `delta` near `delta * a = 0`.
#[inline]
pub fn zoh_factor(delta: f64, a: f64) -> (f64, f64) {
    let z = delta * a;
    let a_bar = z.exp();
    let factor = if z.abs() < ZOH_SERIES_EPS {
        delta
    } else {
        (a_bar - 1.0) / a
    };
    (a_bar, factor)
}

#[inline]
pub(crate) fn discretize_row(delta: f64, a_row: &[f64], b_row: &[f64], ab: &mut [f64], bb: &mut [f64]) {
    for (((out_a, out_b), &a), &b) in ab.iter_mut().zip(bb.iter_mut()).zip(a_row).zip(b_row) {
        let (a_bar, factor) = zoh_factor(delta, a);
        *out_a = a_bar;
        *out_b = factor * b;
    }
}

/// One full-cost step of the recurrence on a single lane: update the state
/// and accumulate the output sample.
#[inline]
pub(crate) fn kept_step(ab: &[f64], bb: &[f64], c_row: &[f64], x: f64, h: &mut [f64]) -> f64 {
    let mut y = 0.0;
    for (((hs, &a), &b), &c) in h.iter_mut().zip(ab).zip(bb).zip(c_row) {
        let v = a * *hs + b * x;
        *hs = v;
        y += c * v;
    }
    y
}

/// State decay only; used at pruned positions.
#[inline]
pub(crate) fn decay_step(ab: &[f64], h: &mut [f64]) {
    for (hs, &a) in h.iter_mut().zip(ab) {
        *hs *= a;
    }
}

pub fn discretize_zoh(ss: &StateSpace, p: &StepParams) -> Result<DiscretizedParams> {
    p.validate_for(ss)?;
    let n = ss.state_dim;
    let c = ss.channel_dim;
    let mut a_bar = vec![0.0; c * n];
    let mut b_bar = vec![0.0; c * n];
    for ch in 0..c {
        let (ab, bb) = (
            &mut a_bar[ch * n..(ch + 1) * n],
            &mut b_bar[ch * n..(ch + 1) * n],
        );
        // One row at a time; b_bar is dense per channel even when b is
        // shared because a_diag varies per channel.
        for (((out_a, out_b), &a), &b) in ab
            .iter_mut()
            .zip(bb.iter_mut())
            .zip(ss.a_row(ch))
            .zip(p.b_row(ch, n))
        {
            let (v_a, factor) = zoh_factor(p.delta(ch), a);
            *out_a = v_a;
            *out_b = factor * b;
        }
    }
    Ok(DiscretizedParams {
        state_dim: n,
        a_bar,
        b_bar,
    })
}

// ---------------------------------------------------------------------------
// Operation counters
// ---------------------------------------------------------------------------

/// Multiply counts and step tallies accumulated while a scan runs. One MAC
/// is one multiply (with or without a paired add); transcendental calls are
/// tracked separately and divisions are not counted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ScanCounters {
    pub kept_lane_steps: u64,
    pub pruned_lane_steps: u64,
    pub kept_macs: u64,
    pub pruned_macs: u64,
    pub discretize_macs: u64,
    pub transcendentals: u64,
}

impl ScanCounters {
    pub fn add(&mut self, other: &ScanCounters) {
        self.kept_lane_steps += other.kept_lane_steps;
        self.pruned_lane_steps += other.pruned_lane_steps;
        self.kept_macs += other.kept_macs;
        self.pruned_macs += other.pruned_macs;
        self.discretize_macs += other.discretize_macs;
        self.transcendentals += other.transcendentals;
    }

    pub fn total_macs(&self) -> u64 {
        self.kept_macs + self.pruned_macs + self.discretize_macs
    }
}

/// Per-step MAC conventions shared by the in-kernel tallies and the analytic
/// model. A selective kept step discretizes (2n) then updates (2n) and
/// emits (n); an LTI kept step reuses the one-time discretization.
pub fn kept_step_macs(mode: SsmMode, state_dim: usize) -> u64 {
    match mode {
        SsmMode::Selective => 5 * state_dim as u64,
        SsmMode::Lti => 3 * state_dim as u64,
    }
}

pub fn pruned_step_macs(state_dim: usize) -> u64 {
    state_dim as u64
}

pub fn lane_discretize_macs(state_dim: usize) -> u64 {
    2 * state_dim as u64
}

// ---------------------------------------------------------------------------
// Scan outputs and options
// ---------------------------------------------------------------------------

/// Full hidden-state history, `[batch][channel][step][state]`, recorded only
/// on request; it is test-only memory.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    batch: usize,
    channels: usize,
    steps: usize,
    state_dim: usize,
    data: Vec<f64>,
}

impl StateTrace {
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn at(&self, b: usize, ch: usize, step: usize) -> &[f64] {
        let o = (((b * self.channels) + ch) * self.steps + step) * self.state_dim;
        &self.data[o..o + self.state_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput {
    /// One output token per full-cost step, `batch x steps x channels`.
    pub y: TokenTensor,
    /// Final hidden state, `[batch][channel][state]`.
    pub h_final: Vec<f64>,
    pub h_trace: Option<StateTrace>,
}

impl ScanOutput {
    #[inline]
    pub fn h_final_lane(&self, b: usize, ch: usize, channels: usize, state_dim: usize) -> &[f64] {
        let o = (b * channels + ch) * state_dim;
        &self.h_final[o..o + state_dim]
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScanOptions {
    pub record_trace: bool,
    /// Lane parallelism; 0 or 1 runs sequentially. Results are bitwise
    /// identical in both settings.
    pub threads: usize,
}

// ---------------------------------------------------------------------------
// Lane runner
// ---------------------------------------------------------------------------

pub(crate) struct LaneScratch {
    pub h: Vec<f64>,
    pub ab: Vec<f64>,
    pub bb: Vec<f64>,
}

pub(crate) struct LaneOut<'a> {
    pub y: &'a mut [f64],
    pub h_final: &'a mut [f64],
    pub trace: Option<&'a mut [f64]>,
    pub counters: &'a mut ScanCounters,
}

/// Runs one closure per (batch, channel) lane, optionally across threads,
/// and assembles outputs. Lane buffers keep per-lane writes contiguous; the
/// scatter into `batch x tokens x channels` order happens afterwards, so the
/// thread count cannot change any computed value.
pub(crate) fn run_lanes<F>(
    batch: usize,
    channels: usize,
    tokens_out: usize,
    state_dim: usize,
    record_trace: bool,
    threads: usize,
    lane_fn: F,
) -> (TokenTensor, Vec<f64>, Option<StateTrace>, ScanCounters)
where
    F: Fn(usize, usize, &mut LaneScratch, LaneOut) + Sync,
{
    let lanes = batch * channels;
    let workers = threads.max(1).min(lanes.max(1));
    let trace_len = if record_trace { tokens_out * state_dim } else { 0 };

    struct ChunkResult {
        first_lane: usize,
        y: Vec<f64>,
        h_final: Vec<f64>,
        trace: Vec<f64>,
        counters: ScanCounters,
    }

    let run_chunk = |lane_range: std::ops::Range<usize>| -> ChunkResult {
        let count = lane_range.len();
        let mut res = ChunkResult {
            first_lane: lane_range.start,
            y: vec![0.0; count * tokens_out],
            h_final: vec![0.0; count * state_dim],
            trace: vec![0.0; count * trace_len],
            counters: ScanCounters::default(),
        };
        let mut scratch = LaneScratch {
            h: vec![0.0; state_dim],
            ab: vec![0.0; state_dim],
            bb: vec![0.0; state_dim],
        };
        for (local, lane) in lane_range.enumerate() {
            let (b, ch) = (lane / channels, lane % channels);
            scratch.h.fill(0.0);
            let out = LaneOut {
                y: &mut res.y[local * tokens_out..(local + 1) * tokens_out],
                h_final: &mut res.h_final[local * state_dim..(local + 1) * state_dim],
                trace: if record_trace {
                    Some(&mut res.trace[local * trace_len..(local + 1) * trace_len])
                } else {
                    None
                },
                counters: &mut res.counters,
            };
            lane_fn(b, ch, &mut scratch, out);
        }
        res
    };

    let chunks: Vec<ChunkResult> = if workers <= 1 {
        vec![run_chunk(0..lanes)]
    } else {
        let per = lanes.div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let range = (w * per).min(lanes)..((w + 1) * per).min(lanes);
                    s.spawn(|| run_chunk(range))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("scan worker panicked")).collect()
        })
    };

    let mut y = TokenTensor::zeros(batch, tokens_out, channels);
    let mut h_final = vec![0.0; lanes * state_dim];
    let mut trace_data = if record_trace { vec![0.0; lanes * trace_len] } else { Vec::new() };
    let mut counters = ScanCounters::default();
    for chunk in &chunks {
        counters.add(&chunk.counters);
        let count = chunk.h_final.len() / state_dim.max(1);
        for local in 0..count {
            let lane = chunk.first_lane + local;
            let (b, ch) = (lane / channels, lane % channels);
            for t in 0..tokens_out {
                y.set(b, t, ch, chunk.y[local * tokens_out + t]);
            }
            h_final[lane * state_dim..(lane + 1) * state_dim]
                .copy_from_slice(&chunk.h_final[local * state_dim..(local + 1) * state_dim]);
            if record_trace {
                trace_data[lane * trace_len..(lane + 1) * trace_len]
                    .copy_from_slice(&chunk.trace[local * trace_len..(local + 1) * trace_len]);
            }
        }
    }

    let h_trace = if record_trace {
        Some(StateTrace {
            batch,
            channels,
            steps: tokens_out,
            state_dim,
            data: trace_data,
        })
    } else {
        None
    };
    (y, h_final, h_trace, counters)
}

// ---------------------------------------------------------------------------
// Scans
// ---------------------------------------------------------------------------

fn validate_scan_inputs(ss: &StateSpace, params: &[StepParams], x: &TokenTensor) -> Result<()> {
    if x.channels() != ss.channel_dim {
        return Err(Error::shape(format!(
            "input has {} channels, layer expects {}",
            x.channels(),
            ss.channel_dim
        )));
    }
    match ss.mode {
        SsmMode::Selective => {
            if params.len() != x.tokens() {
                return Err(Error::shape(format!(
                    "selective scan needs one StepParams per token: got {} for {} tokens",
                    params.len(),
                    x.tokens()
                )));
            }
        }
        SsmMode::Lti => {
            if params.len() != 1 {
                return Err(Error::shape(format!(
                    "LTI scan broadcasts a single StepParams: got {}",
                    params.len()
                )));
            }
        }
    }
    for p in params {
        p.validate_for(ss)?;
    }
    Ok(())
}

/// Exact sequential evaluation of the discrete recurrence
/// `h <- a_bar h + b_bar x`, `y = c . h`, per (batch, channel) lane.
pub fn scan_recurrent(ss: &StateSpace, params: &[StepParams], x: &TokenTensor) -> Result<ScanOutput> {
    scan_recurrent_with(ss, params, x, &ScanOptions::default(), None)
}

pub fn scan_recurrent_with(
    ss: &StateSpace,
    params: &[StepParams],
    x: &TokenTensor,
    opts: &ScanOptions,
    counters: Option<&mut ScanCounters>,
) -> Result<ScanOutput> {
    validate_scan_inputs(ss, params, x)?;
    let n = ss.state_dim;
    let tokens = x.tokens();
    let mode = ss.mode;

    let (y, h_final, h_trace, tallies) = run_lanes(
        x.batch(),
        ss.channel_dim,
        tokens,
        n,
        opts.record_trace,
        opts.threads,
        |b, ch, scratch, mut out| {
            let a_row = ss.a_row(ch);
            let LaneScratch { h, ab, bb } = scratch;
            match mode {
                SsmMode::Lti => {
                    let p = &params[0];
                    discretize_row(p.delta(ch), a_row, p.b_row(ch, n), ab, bb);
                    out.counters.discretize_macs += lane_discretize_macs(n);
                    out.counters.transcendentals += n as u64;
                    let c_row = p.c_row(ch, n);
                    for t in 0..tokens {
                        out.y[t] = kept_step(ab, bb, c_row, x.get(b, t, ch), h);
                        if let Some(trace) = out.trace.as_deref_mut() {
                            trace[t * n..(t + 1) * n].copy_from_slice(h);
                        }
                    }
                }
                SsmMode::Selective => {
                    for t in 0..tokens {
                        let p = &params[t];
                        discretize_row(p.delta(ch), a_row, p.b_row(ch, n), ab, bb);
                        out.counters.transcendentals += n as u64;
                        out.y[t] = kept_step(ab, bb, p.c_row(ch, n), x.get(b, t, ch), h);
                        if let Some(trace) = out.trace.as_deref_mut() {
                            trace[t * n..(t + 1) * n].copy_from_slice(h);
                        }
                    }
                }
            }
            out.counters.kept_lane_steps += tokens as u64;
            out.counters.kept_macs += tokens as u64 * kept_step_macs(mode, n);
            out.h_final.copy_from_slice(h);
        },
    );

    if let Some(c) = counters {
        c.add(&tallies);
    }
    Ok(ScanOutput { y, h_final, h_trace })
}

/// Global-convolution form of the LTI scan: builds the structured kernel
/// `(c.b_bar, c.a_bar b_bar, ..., c.a_bar^{L-1} b_bar)` per channel and
/// causally convolves the input with it. Rejects selective layers.
pub fn scan_convolution(ss: &StateSpace, p: &StepParams, x: &TokenTensor) -> Result<ScanOutput> {
    if ss.mode != SsmMode::Lti {
        return Err(Error::UnsupportedMode(
            "scan_convolution requires an LTI layer".into(),
        ));
    }
    let params = std::slice::from_ref(p);
    validate_scan_inputs(ss, params, x)?;
    let n = ss.state_dim;
    let tokens = x.tokens();

    let (y, h_final, _, _) = run_lanes(
        x.batch(),
        ss.channel_dim,
        tokens,
        n,
        false,
        1,
        |b, ch, scratch, out| {
            let a_row = ss.a_row(ch);
            let LaneScratch { h, ab, bb } = scratch;
            discretize_row(p.delta(ch), a_row, p.b_row(ch, n), ab, bb);
            let c_row = p.c_row(ch, n);

            // Kernel taps: k[j] = sum_s c[s] * a_bar[s]^j * b_bar[s].
            let mut w = bb.to_vec();
            let mut kernel = vec![0.0; tokens];
            for k in kernel.iter_mut() {
                let mut acc = 0.0;
                for ((ws, &a), &c) in w.iter_mut().zip(ab.iter()).zip(c_row) {
                    acc += c * *ws;
                    *ws *= a;
                }
                *k = acc;
            }

            for t in 0..tokens {
                let mut acc = 0.0;
                for (j, &kv) in kernel.iter().enumerate().take(t + 1) {
                    acc += kv * x.get(b, t - j, ch);
                }
                out.y[t] = acc;
            }

            // The convolution form does not carry a state; reconstruct the
            // final one with the recurrence so ScanOutput stays uniform.
            for t in 0..tokens {
                let xv = x.get(b, t, ch);
                for (hs, (&a, &bv)) in h.iter_mut().zip(ab.iter().zip(bb.iter())) {
                    *hs = a * *hs + bv * xv;
                }
            }
            out.h_final.copy_from_slice(h);
        },
    );

    Ok(ScanOutput { y, h_final, h_trace: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lti_scalar(a: f64, mode: SsmMode) -> StateSpace {
        StateSpace::new(1, 1, vec![a], mode).unwrap()
    }

    #[test]
    fn zoh_closed_form_half() {
        // a = -1, b = 1, delta = ln 2 gives a_bar = 0.5 and b_bar = 0.5.
        let ss = lti_scalar(-1.0, SsmMode::Lti);
        let p = StepParams::shared(std::f64::consts::LN_2, vec![1.0], vec![1.0]).unwrap();
        let d = discretize_zoh(&ss, &p).unwrap();
        assert!((d.a_bar[0] - 0.5).abs() < 1e-15, "a_bar = {}", d.a_bar[0]);
        assert!((d.b_bar[0] - 0.5).abs() < 1e-15, "b_bar = {}", d.b_bar[0]);
    }

    #[test]
    fn zoh_zero_delta_limit() {
        let ss = lti_scalar(-1.0, SsmMode::Lti);
        let p = StepParams::shared(0.0, vec![1.0], vec![1.0]).unwrap();
        let d = discretize_zoh(&ss, &p).unwrap();
        assert_eq!(d.a_bar[0], 1.0);
        assert_eq!(d.b_bar[0], 0.0);
    }

    #[test]
    fn negative_delta_rejected() {
        let err = StepParams::new(vec![-0.1], vec![1.0], vec![1.0]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn nonnegative_a_rejected() {
        assert!(StateSpace::new(1, 1, vec![0.0], SsmMode::Lti).is_err());
        assert!(StateSpace::new(1, 1, vec![0.5], SsmMode::Lti).is_err());
    }

    #[test]
    fn recurrent_matches_hand_unroll() {
        // a_bar = 0.5, b_bar = 0.5, c = 1 on [1, 1, 1] -> 0.5, 0.75, 0.875.
        let ss = lti_scalar(-1.0, SsmMode::Lti);
        let p = StepParams::shared(std::f64::consts::LN_2, vec![1.0], vec![1.0]).unwrap();
        let x = TokenTensor::from_sequence(&[1.0, 1.0, 1.0]);
        let out = scan_recurrent(&ss, std::slice::from_ref(&p), &x).unwrap();
        let expected = [0.5, 0.75, 0.875];
        for (t, e) in expected.iter().enumerate() {
            assert!(
                (out.y.get(0, t, 0) - e).abs() < 1e-15,
                "t={t}: {} vs {e}",
                out.y.get(0, t, 0)
            );
        }
    }

    #[test]
    fn zero_input_stays_zero() {
        let ss = StateSpace::new(3, 2, vec![-0.3; 6], SsmMode::Lti).unwrap();
        let p = StepParams::shared(0.7, vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 1.0]).unwrap();
        let x = TokenTensor::zeros(2, 9, 2);
        let out = scan_recurrent(&ss, std::slice::from_ref(&p), &x).unwrap();
        assert_eq!(out.y.max_abs(), 0.0);
        assert!(out.h_final.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn single_token_is_one_step_unroll() {
        let ss = lti_scalar(-0.8, SsmMode::Lti);
        let p = StepParams::shared(0.4, vec![1.3], vec![2.0]).unwrap();
        let x = TokenTensor::from_sequence(&[0.9]);
        let out = scan_recurrent(&ss, std::slice::from_ref(&p), &x).unwrap();
        let d = discretize_zoh(&ss, &p).unwrap();
        let expect = 2.0 * d.b_bar[0] * 0.9;
        assert!((out.y.get(0, 0, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn convolution_kernel_and_impulse() {
        let ss = lti_scalar(-1.0, SsmMode::Lti);
        let p = StepParams::shared(std::f64::consts::LN_2, vec![1.0], vec![1.0]).unwrap();
        // Impulse response reproduces the kernel [0.5, 0.25, 0.125].
        let x = TokenTensor::from_sequence(&[1.0, 0.0, 0.0]);
        let out = scan_convolution(&ss, &p, &x).unwrap();
        for (t, e) in [0.5, 0.25, 0.125].iter().enumerate() {
            assert!((out.y.get(0, t, 0) - e).abs() < 1e-15);
        }
        // Ones input matches the recurrent unroll.
        let x = TokenTensor::from_sequence(&[1.0, 1.0, 1.0]);
        let out = scan_convolution(&ss, &p, &x).unwrap();
        for (t, e) in [0.5, 0.75, 0.875].iter().enumerate() {
            assert!((out.y.get(0, t, 0) - e).abs() < 1e-15);
        }
    }

    #[test]
    fn convolution_rejects_selective() {
        let ss = lti_scalar(-1.0, SsmMode::Selective);
        let p = StepParams::shared(0.5, vec![1.0], vec![1.0]).unwrap();
        let x = TokenTensor::from_sequence(&[1.0]);
        assert!(matches!(
            scan_convolution(&ss, &p, &x),
            Err(Error::UnsupportedMode(_))
        ));
    }

    #[test]
    fn selective_length_mismatch_rejected() {
        let ss = lti_scalar(-1.0, SsmMode::Selective);
        let p = StepParams::shared(0.5, vec![1.0], vec![1.0]).unwrap();
        let x = TokenTensor::from_sequence(&[1.0, 2.0]);
        assert!(matches!(
            scan_recurrent(&ss, std::slice::from_ref(&p), &x),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn threaded_scan_bitwise_equals_sequential() {
        let n = 3;
        let channels = 5;
        let mut a = Vec::new();
        for ch in 0..channels {
            for s in 0..n {
                a.push(-(0.2 + 0.13 * ch as f64 + 0.07 * s as f64));
            }
        }
        let ss = StateSpace::new(n, channels, a, SsmMode::Selective).unwrap();
        let mut rng = crate::rng::SplitMix64::new(11);
        let tokens = 17;
        let params: Vec<StepParams> = (0..tokens)
            .map(|_| {
                StepParams::new(
                    (0..channels).map(|_| rng.uniform(0.0, 0.9)).collect(),
                    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let data: Vec<f64> = (0..2 * tokens * channels).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x = TokenTensor::from_vec(2, tokens, channels, data).unwrap();

        let seq = scan_recurrent(&ss, &params, &x).unwrap();
        let opts = ScanOptions { record_trace: true, threads: 4 };
        let par = scan_recurrent_with(&ss, &params, &x, &opts, None).unwrap();
        assert_eq!(seq.y, par.y);
        assert_eq!(seq.h_final, par.h_final);
    }

    #[test]
    fn counters_track_steps() {
        let ss = lti_scalar(-1.0, SsmMode::Lti);
        let p = StepParams::shared(0.5, vec![1.0], vec![1.0]).unwrap();
        let x = TokenTensor::from_sequence(&[1.0, 2.0, 3.0, 4.0]);
        let mut c = ScanCounters::default();
        scan_recurrent_with(&ss, std::slice::from_ref(&p), &x, &ScanOptions::default(), Some(&mut c)).unwrap();
        assert_eq!(c.kept_lane_steps, 4);
        assert_eq!(c.pruned_lane_steps, 0);
        assert_eq!(c.kept_macs, 4 * kept_step_macs(SsmMode::Lti, 1));
        assert_eq!(c.discretize_macs, lane_discretize_macs(1));
    }
}
