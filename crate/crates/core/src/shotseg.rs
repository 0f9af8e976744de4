//! Shot segmentation as penalized multiple change-point detection.
//!
//! The segmentation minimizes
//! `sum over segments of SSE(segment) + penalty * (num_segments - 1)`,
//! where SSE is the squared deviation of each frame from its segment's mean
//! vector. Optimal partitioning by dynamic programming, O(n^2 * dim), with
//! SSE read off prefix sums.

use serde::Serialize;
use thiserror::Error;

use crate::types::{SegmentSpan, TypeError};

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("sequence has {num_frames} frames, fewer than min_len {min_len}")]
    InfeasibleMinLen { num_frames: usize, min_len: usize },
    #[error("invalid frame sequence: {0}")]
    InvalidSequence(String),
    #[error("penalty must be non-negative and not NaN, got {0}")]
    InvalidPenalty(f64),
}

/// Per-frame feature vectors sampled every `frame_period` seconds.
#[derive(Clone, Debug)]
pub struct FrameSequence {
    num_frames: usize,
    dim: usize,
    values: Vec<f64>,
    frame_period: f64,
}

impl FrameSequence {
    pub fn new(num_frames: usize, dim: usize, values: Vec<f64>, frame_period: f64) -> Result<Self, SegmentError> {
        if num_frames == 0 || dim == 0 {
            return Err(SegmentError::InvalidSequence("empty sequence".into()));
        }
        if values.len() != num_frames * dim {
            return Err(SegmentError::InvalidSequence(format!(
                "{} values for {num_frames}x{dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SegmentError::InvalidSequence("non-finite value".into()));
        }
        if !(frame_period.is_finite() && frame_period > 0.0) {
            return Err(SegmentError::InvalidSequence(format!(
                "frame period {frame_period} must be positive"
            )));
        }
        Ok(Self {
            num_frames,
            dim,
            values,
            frame_period,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_period(&self) -> f64 {
        self.frame_period
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentationResult {
    /// Exclusive segment ends; the last entry is `num_frames`.
    pub boundaries: Vec<usize>,
    pub cost: f64,
}

/// Prefix sums of centered frames and their squared norms.
struct PrefixSse {
    dim: usize,
    sums: Vec<f64>,
    sq: Vec<f64>,
}

impl PrefixSse {
    fn new(seq: &FrameSequence) -> Self {
        let (n, d) = (seq.num_frames, seq.dim);
        let mut mean = vec![0.0; d];
        for t in 0..n {
            for (m, v) in mean.iter_mut().zip(seq.frame(t)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut sums = vec![0.0; (n + 1) * d];
        let mut sq = vec![0.0; n + 1];
        for t in 0..n {
            let mut s2 = 0.0;
            for k in 0..d {
                let c = seq.frame(t)[k] - mean[k];
                sums[(t + 1) * d + k] = sums[t * d + k] + c;
                s2 += c * c;
            }
            sq[t + 1] = sq[t] + s2;
        }
        Self { dim: d, sums, sq }
    }

    /// SSE of frames `[i, j)`.
    fn sse(&self, i: usize, j: usize) -> f64 {
        let d = self.dim;
        let len = (j - i) as f64;
        let norm2: f64 = (0..d)
            .map(|k| {
                let s = self.sums[j * d + k] - self.sums[i * d + k];
                s * s
            })
            .sum();
        (self.sq[j] - self.sq[i] - norm2 / len).max(0.0)
    }
}

/// Exact penalized segmentation. Among equal-cost optima the one with fewer
/// segments wins, then the one whose boundaries come earlier.
pub fn segment_sequence(seq: &FrameSequence, penalty: f64, min_len: usize) -> Result<SegmentationResult, SegmentError> {
    if penalty.is_nan() || penalty < 0.0 {
        return Err(SegmentError::InvalidPenalty(penalty));
    }
    let min_len = min_len.max(1);
    let n = seq.num_frames;
    if n < min_len {
        return Err(SegmentError::InfeasibleMinLen { num_frames: n, min_len });
    }
    let prefix = PrefixSse::new(seq);
    // best[j]: (cost, segments) of the optimal segmentation of [0, j)
    let mut best: Vec<Option<(f64, usize)>> = vec![None; n + 1];
    let mut back = vec![0usize; n + 1];
    best[0] = Some((0.0, 0));
    for j in min_len..=n {
        let mut cand: Option<(f64, usize, usize)> = None;
        for i in (0..=j - min_len).filter(|&i| i == 0 || i >= min_len) {
            let Some((prev, segs)) = best[i] else { continue };
            let c = prev + prefix.sse(i, j) + if i > 0 { penalty } else { 0.0 };
            let better = match cand {
                None => true,
                Some((bc, bs, _)) => c < bc || (c == bc && segs + 1 < bs),
            };
            if better {
                cand = Some((c, segs + 1, i));
            }
        }
        if let Some((c, s, i)) = cand {
            best[j] = Some((c, s));
            back[j] = i;
        }
    }
    let (cost, _) = best[n].expect("whole sequence is always feasible");
    let mut boundaries = vec![];
    let mut j = n;
    while j > 0 {
        boundaries.push(j);
        j = back[j];
    }
    boundaries.reverse();
    Ok(SegmentationResult { boundaries, cost })
}

/// `[b_{i-1} * period, b_i * period)` for each boundary, with `b_0 = 0`.
pub fn spans_from_boundaries(result: &SegmentationResult, frame_period: f64) -> Result<Vec<SegmentSpan>, TypeError> {
    let mut prev = 0usize;
    result
        .boundaries
        .iter()
        .map(|&b| {
            let span = SegmentSpan::new(prev as f64 * frame_period, b as f64 * frame_period);
            prev = b;
            span
        })
        .collect()
}

/// Scale-aware default penalty: `2 * dim * sigma^2`, where `sigma^2` is the
/// median over frames of the per-dimension noise variance estimated from
/// successive differences, `|x_t - x_{t-1}|^2 / (2 * dim)`.
pub fn default_penalty(seq: &FrameSequence) -> f64 {
    if seq.num_frames < 2 {
        return 0.0;
    }
    let d = seq.dim as f64;
    let mut per_frame: Vec<f64> = (1..seq.num_frames)
        .map(|t| {
            let a = seq.frame(t - 1);
            let b = seq.frame(t);
            a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>() / (2.0 * d)
        })
        .collect();
    per_frame.sort_by(f64::total_cmp);
    let m = per_frame.len();
    let median = if m % 2 == 1 {
        per_frame[m / 2]
    } else {
        0.5 * (per_frame[m / 2 - 1] + per_frame[m / 2])
    };
    2.0 * d * median
}

/// Frames spanning one second, at least one.
pub fn default_min_len(frame_period: f64) -> usize {
    ((1.0 / frame_period).round() as usize).max(1)
}
