//! Scan kernel over a pruned token sequence that preserves every kept
//! token's original sequential position.
//!
//! The kernel walks original positions. At a kept position it performs the
//! full recurrence step and emits an output sample; at a pruned position it
//! only decays the hidden state, consuming no input and writing no output.
//! The state multiplier used across a gap is the one derived from the most
//! recent preceding kept token (for a leading gap, the first kept token's,
//! where the state is still zero so the choice cannot matter). Positions
//! after the last kept token are skipped: nothing downstream observes them.
//!
//! `scan_condensed_naive` is the failure baseline that relabels survivors
//! contiguously and scans them with gaps erased; `oracle_zeroed_scan` is the
//! independent ground truth that runs the plain recurrence over the full
//! original length with pruned inputs zeroed.

use crate::error::{Error, Result};
use crate::pruning::PositionMap;
use crate::ssm::{
    decay_step, discretize_row, kept_step, kept_step_macs, lane_discretize_macs, pruned_step_macs,
    run_lanes, LaneScratch, ScanCounters, ScanOptions, ScanOutput, SsmMode, StateSpace, StateTrace,
    StepParams,
};
use crate::tensor::TokenTensor;

/// Pruned dense sequence plus the map locating it in original index space.
///
/// `x_remaining` holds kept tokens only, ordered by their position along the
/// active scan path; `map` lives in the same (path) index space. A
/// `PositionMap` always keeps at least one token, so an input with an empty
/// keep set cannot be constructed.
#[derive(Debug)]
pub struct AlignedScanInput<'a> {
    pub x_remaining: &'a TokenTensor,
    /// One `StepParams` per kept token (selective) or a single broadcast
    /// entry (LTI).
    pub params_remaining: &'a [StepParams],
    pub map: &'a PositionMap,
}

/// How pruned gaps are traversed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapPolicy {
    /// Walk every pruned position, one state-decay multiply each. This is
    /// the reference path; operation counters reflect it directly.
    #[default]
    Walk,
    /// Collapse a gap of length g by raising the state multiplier to the
    /// g-th power via repeated squaring. Agrees with `Walk` to 1e-12.
    PowerSkip,
}

fn validate_aligned(ss: &StateSpace, input: &AlignedScanInput) -> Result<()> {
    let k = input.map.kept_len();
    if input.x_remaining.tokens() != k {
        return Err(Error::shape(format!(
            "pruned sequence has {} tokens, map keeps {k}",
            input.x_remaining.tokens()
        )));
    }
    if input.x_remaining.channels() != ss.channel_dim() {
        return Err(Error::shape(format!(
            "input has {} channels, layer expects {}",
            input.x_remaining.channels(),
            ss.channel_dim()
        )));
    }
    match ss.mode() {
        SsmMode::Selective => {
            if input.params_remaining.len() != k {
                return Err(Error::shape(format!(
                    "selective aligned scan needs one StepParams per kept token: got {} for {k}",
                    input.params_remaining.len()
                )));
            }
        }
        SsmMode::Lti => {
            if input.params_remaining.len() != 1 {
                return Err(Error::shape(format!(
                    "LTI aligned scan broadcasts a single StepParams: got {}",
                    input.params_remaining.len()
                )));
            }
        }
    }
    for p in input.params_remaining {
        p.validate_for(ss)?;
    }
    Ok(())
}

pub fn scan_aligned(ss: &StateSpace, input: &AlignedScanInput) -> Result<ScanOutput> {
    scan_aligned_with(ss, input, &ScanOptions::default(), GapPolicy::Walk, None)
}

pub fn scan_aligned_with(
    ss: &StateSpace,
    input: &AlignedScanInput,
    opts: &ScanOptions,
    gap_policy: GapPolicy,
    counters: Option<&mut ScanCounters>,
) -> Result<ScanOutput> {
    validate_aligned(ss, input)?;
    let n = ss.state_dim();
    let k = input.map.kept_len();
    let remaining = input.map.remaining_indices();
    let mode = ss.mode();
    let x = input.x_remaining;
    let params = input.params_remaining;

    let (y, h_final, h_trace, tallies) = run_lanes(
        x.batch(),
        ss.channel_dim(),
        k,
        n,
        opts.record_trace,
        opts.threads,
        |b, ch, scratch, mut out| {
            let a_row = ss.a_row(ch);
            let LaneScratch { h, ab, bb } = scratch;
            // Index of the kept token whose discretization currently sits in
            // ab/bb; it is reused across the gap that follows it.
            let mut disc_for: Option<usize> = None;
            let step_macs = match mode {
                // The discretization share of a selective kept step is
                // tallied by lane_disc when it runs.
                SsmMode::Selective => 3 * n as u64,
                SsmMode::Lti => kept_step_macs(SsmMode::Lti, n),
            };

            match gap_policy {
                GapPolicy::Walk => {
                    // A leading gap decays a zero state with the first kept
                    // token's multiplier; load it up front.
                    if remaining[0] > 0 {
                        lane_disc(mode, params, 0, ch, a_row, n, &mut disc_for, ab, bb, out.counters);
                    }
                    let mut j = 0usize;
                    for pos in 0..=remaining[k - 1] {
                        if pos == remaining[j] {
                            lane_disc(mode, params, j, ch, a_row, n, &mut disc_for, ab, bb, out.counters);
                            let p_idx = if mode == SsmMode::Lti { 0 } else { j };
                            out.y[j] =
                                kept_step(ab, bb, params[p_idx].c_row(ch, n), x.get(b, j, ch), h);
                            if let Some(trace) = out.trace.as_deref_mut() {
                                trace[j * n..(j + 1) * n].copy_from_slice(h);
                            }
                            out.counters.kept_lane_steps += 1;
                            out.counters.kept_macs += step_macs;
                            j += 1;
                        } else {
                            // Pruned position: decay only. ab holds the most
                            // recent preceding kept token's multiplier.
                            decay_step(ab, h);
                            out.counters.pruned_lane_steps += 1;
                            out.counters.pruned_macs += pruned_step_macs(n);
                        }
                    }
                }
                GapPolicy::PowerSkip => {
                    let mut prev_pos: Option<usize> = None;
                    for j in 0..k {
                        let pos = remaining[j];
                        if let Some(prev) = prev_pos {
                            let gap = (pos - prev - 1) as u64;
                            if gap > 0 {
                                // ab still holds kept token j-1's multiplier.
                                for (hs, &a) in h.iter_mut().zip(ab.iter()) {
                                    let (p, muls) = pow_sq(a, gap);
                                    *hs *= p;
                                    out.counters.pruned_macs += muls + 1;
                                }
                                out.counters.pruned_lane_steps += gap;
                            }
                        }
                        // A leading gap decays a zero state; skip it.
                        lane_disc(mode, params, j, ch, a_row, n, &mut disc_for, ab, bb, out.counters);
                        let p_idx = if mode == SsmMode::Lti { 0 } else { j };
                        out.y[j] = kept_step(ab, bb, params[p_idx].c_row(ch, n), x.get(b, j, ch), h);
                        if let Some(trace) = out.trace.as_deref_mut() {
                            trace[j * n..(j + 1) * n].copy_from_slice(h);
                        }
                        out.counters.kept_lane_steps += 1;
                        out.counters.kept_macs += step_macs;
                        prev_pos = Some(pos);
                    }
                }
            }
            out.h_final.copy_from_slice(h);
        },
    );

    if let Some(c) = counters {
        c.add(&tallies);
    }
    Ok(ScanOutput { y, h_final, h_trace })
}

/// Refreshes the lane discretization for kept token `j` unless it is
/// already loaded. LTI lanes discretize once; selective lanes once per kept
/// token, with the cost booked to the kept-step budget.
#[allow(clippy::too_many_arguments)]
fn lane_disc(
    mode: SsmMode,
    params: &[StepParams],
    j: usize,
    ch: usize,
    a_row: &[f64],
    n: usize,
    disc_for: &mut Option<usize>,
    ab: &mut [f64],
    bb: &mut [f64],
    counters: &mut ScanCounters,
) {
    match mode {
        SsmMode::Selective => {
            if *disc_for != Some(j) {
                let p = &params[j];
                discretize_row(p.delta(ch), a_row, p.b_row(ch, n), ab, bb);
                counters.kept_macs += lane_discretize_macs(n);
                counters.transcendentals += n as u64;
                *disc_for = Some(j);
            }
        }
        SsmMode::Lti => {
            if disc_for.is_none() {
                let p = &params[0];
                discretize_row(p.delta(ch), a_row, p.b_row(ch, n), ab, bb);
                counters.discretize_macs += lane_discretize_macs(n);
                counters.transcendentals += n as u64;
                *disc_for = Some(0);
            }
        }
    }
}

/// `base^exp` by repeated squaring, returning the multiply count actually
/// spent.
fn pow_sq(base: f64, mut exp: u64) -> (f64, u64) {
    let mut acc = 1.0;
    let mut b = base;
    let mut muls = 0;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
            muls += 1;
        }
        exp >>= 1;
        if exp > 0 {
            b *= b;
            muls += 1;
        }
    }
    (acc, muls)
}

/// Failure baseline: survivors relabeled contiguously and scanned with the
/// plain recurrence, position gaps erased.
pub fn scan_condensed_naive(
    ss: &StateSpace,
    x_remaining: &TokenTensor,
    params_remaining: &[StepParams],
) -> Result<ScanOutput> {
    crate::ssm::scan_recurrent(ss, params_remaining, x_remaining)
}

pub fn scan_condensed_naive_with(
    ss: &StateSpace,
    x_remaining: &TokenTensor,
    params_remaining: &[StepParams],
    opts: &ScanOptions,
    counters: Option<&mut ScanCounters>,
) -> Result<ScanOutput> {
    crate::ssm::scan_recurrent_with(ss, params_remaining, x_remaining, opts, counters)
}

/// Ground truth for the aligned kernel: the plain recurrence over the full
/// original length with input contributions zeroed at pruned positions
/// (state decay still applies there). Restricted to kept positions this
/// defines the aligned scan's expected output. Returns full-length output.
pub fn oracle_zeroed_scan(
    ss: &StateSpace,
    x_full: &TokenTensor,
    params_full: &[StepParams],
    map: &PositionMap,
) -> Result<ScanOutput> {
    oracle_zeroed_scan_with(ss, x_full, params_full, map, &ScanOptions::default())
}

pub fn oracle_zeroed_scan_with(
    ss: &StateSpace,
    x_full: &TokenTensor,
    params_full: &[StepParams],
    map: &PositionMap,
    opts: &ScanOptions,
) -> Result<ScanOutput> {
    if x_full.tokens() != map.original_len() {
        return Err(Error::shape(format!(
            "full input has {} tokens, map covers {}",
            x_full.tokens(),
            map.original_len()
        )));
    }
    let mut zeroed = x_full.clone();
    for t in 0..zeroed.tokens() {
        if !map.is_kept(t) {
            for b in 0..zeroed.batch() {
                zeroed.token_mut(b, t).fill(0.0);
            }
        }
    }
    crate::ssm::scan_recurrent_with(ss, params_full, &zeroed, opts, None)
}

/// Expands per-kept-token params to original length for oracle runs: a
/// pruned slot inherits the most recent preceding kept token's params, and
/// slots before the first kept token inherit the first kept token's.
pub fn expand_to_original(params_remaining: &[StepParams], map: &PositionMap) -> Result<Vec<StepParams>> {
    if params_remaining.len() != map.kept_len() {
        return Err(Error::shape(format!(
            "got {} params for {} kept tokens",
            params_remaining.len(),
            map.kept_len()
        )));
    }
    let mut out = Vec::with_capacity(map.original_len());
    let mut current = 0usize;
    for pos in 0..map.original_len() {
        if map.is_kept(pos) {
            let j = map
                .remaining_indices()
                .binary_search(&pos)
                .expect("kept position present in remaining_indices");
            current = j;
            out.push(params_remaining[j].clone());
        } else {
            out.push(params_remaining[current].clone());
        }
    }
    Ok(out)
}

/// Scatters a pruned dense sequence back to original length, writing `fill`
/// at pruned positions.
pub fn scatter_to_original(x_remaining: &TokenTensor, map: &PositionMap, fill: f64) -> Result<TokenTensor> {
    if x_remaining.tokens() != map.kept_len() {
        return Err(Error::shape(format!(
            "pruned sequence has {} tokens, map keeps {}",
            x_remaining.tokens(),
            map.kept_len()
        )));
    }
    let mut out = TokenTensor::zeros(x_remaining.batch(), map.original_len(), x_remaining.channels());
    if fill != 0.0 {
        out.data_mut().fill(fill);
    }
    for (j, &q) in map.remaining_indices().iter().enumerate() {
        for b in 0..x_remaining.batch() {
            out.token_mut(b, q).copy_from_slice(x_remaining.token(b, j));
        }
    }
    Ok(out)
}

/// Trace wrapper so tests can reach kept-step hidden states by kept index.
pub fn trace_at(trace: &StateTrace, b: usize, ch: usize, kept_step_idx: usize) -> &[f64] {
    trace.at(b, ch, kept_step_idx)
}
