//! Mergeable moment statistics and the online, windowed alignment of many
//! trajectory streams.
//!
//! A [`SelectiveMemory`] consumes k time-ordered streams of points and
//! produces one combined stream:
//!
//! 1. **Alignment (Y):** every distinct point time across the inputs (a
//!    "union time") yields one slice. Each stream contributes its
//!    zero-order-hold value, i.e. its latest point at or before the slice
//!    time (trajectories are piecewise constant and right-continuous), and
//!    the k contributions are merged into one [`MomentAccumulator`]. A slice
//!    is released as soon as every live stream's frontier has reached it, so
//!    only a sliding window of pending points is ever buffered.
//! 2. **Thinning (X):** groups of `thin` successive aligned slices are merged
//!    into one output point whose time is the arithmetic mean of the group's
//!    slice times. With `thin = 1` this stage is the identity. Because a
//!    group covers a fixed number of union events, output density adapts to
//!    input activity: busy intervals stay densely sampled.
//!
//! Accumulators merge by plain component-wise addition of (n, sum, sum of
//! squares), which is associative and commutative, so partial reductions
//! from different threads combine exactly. Hierarchies are exact as well:
//! reducing groups of streams and then reducing the group outputs yields the
//! same result as one flat reduction, because every constituent change time
//! is a union time of its group.
//!
//! Per-stream buffers are bounded ([`DEFAULT_STREAM_CAPACITY`] points unless
//! configured otherwise); a push into a full buffer is refused with
//! [`ReduceError::BufferFull`] so the producer can apply backpressure
//! instead of dropping data.

use std::collections::VecDeque;
use thiserror::Error;

/// Default bound on buffered points per input stream.
pub const DEFAULT_STREAM_CAPACITY: usize = 4096;

/// Count, per-species sum and per-species sum of squares of the samples
/// folded in so far. Merging two accumulators is component-wise addition.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    pub n: u64,
    pub sum: Vec<f64>,
    pub sumsq: Vec<f64>,
}

impl MomentAccumulator {
    pub fn empty(dim: usize) -> Self {
        MomentAccumulator {
            n: 0,
            sum: vec![0.0; dim],
            sumsq: vec![0.0; dim],
        }
    }

    /// A single observation of an integer state vector.
    pub fn from_counts(counts: &[i64]) -> Self {
        let mut acc = MomentAccumulator::empty(counts.len());
        acc.n = 1;
        for (i, &c) in counts.iter().enumerate() {
            let x = c as f64;
            acc.sum[i] = x;
            acc.sumsq[i] = x * x;
        }
        acc
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    /// Fold `other` into `self`.
    ///
    /// Panics on dimension mismatch; merging statistics over different
    /// species vectors is a programming error with no recovery.
    pub fn merge(&mut self, other: &MomentAccumulator) {
        assert_eq!(
            self.dim(),
            other.dim(),
            "accumulator dimension mismatch: {} vs {}",
            self.dim(),
            other.dim()
        );
        self.n += other.n;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sumsq.iter_mut().zip(&other.sumsq) {
            *a += b;
        }
    }

    /// Combined accumulator; associative and commutative.
    pub fn merged(mut a: MomentAccumulator, b: &MomentAccumulator) -> MomentAccumulator {
        a.merge(b);
        a
    }

    fn reset(&mut self) {
        self.n = 0;
        self.sum.fill(0.0);
        self.sumsq.fill(0.0);
    }

    fn assign(&mut self, other: &MomentAccumulator) {
        self.n = other.n;
        self.sum.copy_from_slice(&other.sum);
        self.sumsq.copy_from_slice(&other.sumsq);
    }

    /// Population mean and variance per species. Variance is floored at zero
    /// to absorb rounding in `sumsq/n - mean^2`.
    pub fn finalize(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let var: Vec<f64> = self
            .sumsq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0))
            .collect();
        (mean, var)
    }
}

/// An aligned (and possibly thinned) slice: the merged accumulator at one
/// output time. Finalize into a [`ReducedPoint`] for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedPoint {
    pub time: f64,
    pub acc: MomentAccumulator,
}

impl CombinedPoint {
    pub fn finalize(&self) -> ReducedPoint {
        let (mean, variance) = self.acc.finalize();
        ReducedPoint {
            time: self.time,
            n: self.acc.n,
            mean,
            variance,
        }
    }
}

/// Finalized per-species statistics at one output time.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedPoint {
    pub time: f64,
    /// Number of samples that contributed.
    pub n: u64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReduceError {
    #[error("stream {0} does not exist")]
    UnknownStream(usize),
    #[error("stream {stream}: non-monotone push at t = {time} (frontier {frontier})")]
    NonMonotonePush {
        stream: usize,
        time: f64,
        frontier: f64,
    },
    #[error("stream {0}: push with non-finite time")]
    InvalidTime(usize),
    #[error("stream {0} already finished")]
    StreamFinished(usize),
    #[error("stream {0}: buffer full (apply backpressure and retry)")]
    BufferFull(usize),
    #[error("flush before all streams ended; lagging streams: {lagging:?}")]
    FlushBeforeEnd { lagging: Vec<usize> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

struct StreamBuf {
    pending: VecDeque<(f64, MomentAccumulator)>,
    /// Largest time seen on this stream.
    frontier: Option<f64>,
    /// Zero-order-hold value at the emission cursor.
    held: Option<MomentAccumulator>,
    ended: bool,
}

/// Sliding-window aligner over k input streams. See the module docs.
pub struct SelectiveMemory {
    streams: Vec<StreamBuf>,
    dim: usize,
    thin: usize,
    capacity: usize,
    /// Last emitted union time.
    cursor: Option<f64>,
    scratch: MomentAccumulator,
    carry_acc: MomentAccumulator,
    carry_times: Vec<f64>,
}

impl SelectiveMemory {
    /// `streams` input streams of `dim`-species points, thinned `thin`:1 on
    /// output, with at most `capacity` buffered points per stream.
    pub fn new(streams: usize, dim: usize, thin: usize, capacity: usize) -> Self {
        assert!(streams > 0, "need at least one stream");
        assert!(thin > 0, "thin factor must be at least 1");
        assert!(capacity > 0, "capacity must be at least 1");
        SelectiveMemory {
            streams: (0..streams)
                .map(|_| StreamBuf {
                    pending: VecDeque::new(),
                    frontier: None,
                    held: None,
                    ended: false,
                })
                .collect(),
            dim,
            thin,
            capacity,
            cursor: None,
            scratch: MomentAccumulator::empty(dim),
            carry_acc: MomentAccumulator::empty(dim),
            carry_times: Vec::with_capacity(thin.min(1024)),
        }
    }

    pub fn stream_count(&self) -> usize {
        self.streams.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Buffered (not yet reduced) points on one stream.
    pub fn buffered(&self, stream: usize) -> usize {
        self.streams[stream].pending.len()
    }

    /// Total buffered points across streams.
    pub fn buffered_total(&self) -> usize {
        self.streams.iter().map(|s| s.pending.len()).sum()
    }

    pub fn has_space(&self, stream: usize) -> bool {
        self.streams[stream].pending.len() < self.capacity
    }

    /// Push one point. Returns every output point this push released.
    ///
    /// Times must strictly increase per stream. A full buffer refuses the
    /// push with [`ReduceError::BufferFull`]; the caller must retry later
    /// (after consuming other streams) rather than drop the point.
    pub fn push(
        &mut self,
        stream: usize,
        time: f64,
        value: MomentAccumulator,
    ) -> Result<Vec<CombinedPoint>, ReduceError> {
        if stream >= self.streams.len() {
            return Err(ReduceError::UnknownStream(stream));
        }
        if value.dim() != self.dim {
            return Err(ReduceError::DimensionMismatch {
                expected: self.dim,
                got: value.dim(),
            });
        }
        if !time.is_finite() {
            return Err(ReduceError::InvalidTime(stream));
        }
        let s = &mut self.streams[stream];
        if s.ended {
            return Err(ReduceError::StreamFinished(stream));
        }
        if let Some(f) = s.frontier {
            if time <= f {
                return Err(ReduceError::NonMonotonePush {
                    stream,
                    time,
                    frontier: f,
                });
            }
        }
        if s.pending.len() >= self.capacity {
            return Err(ReduceError::BufferFull(stream));
        }
        s.pending.push_back((time, value));
        s.frontier = Some(time);
        let mut out = Vec::new();
        self.drain(&mut out);
        Ok(out)
    }

    /// Convenience for leaf streams: push a raw state snapshot.
    pub fn push_counts(
        &mut self,
        stream: usize,
        time: f64,
        counts: &[i64],
    ) -> Result<Vec<CombinedPoint>, ReduceError> {
        self.push(stream, time, MomentAccumulator::from_counts(counts))
    }

    /// Mark a stream complete. Its held value keeps contributing to later
    /// slices, and it no longer gates emission.
    pub fn finish_stream(&mut self, stream: usize) -> Result<Vec<CombinedPoint>, ReduceError> {
        if stream >= self.streams.len() {
            return Err(ReduceError::UnknownStream(stream));
        }
        if self.streams[stream].ended {
            return Err(ReduceError::StreamFinished(stream));
        }
        self.streams[stream].ended = true;
        let mut out = Vec::new();
        self.drain(&mut out);
        Ok(out)
    }

    /// Drain everything after all streams have ended: any remaining union
    /// times, then the final partial thinning group, if any.
    pub fn flush(&mut self) -> Result<Vec<CombinedPoint>, ReduceError> {
        let lagging: Vec<usize> = self
            .streams
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.ended)
            .map(|(i, _)| i)
            .collect();
        if !lagging.is_empty() {
            return Err(ReduceError::FlushBeforeEnd { lagging });
        }
        let mut out = Vec::new();
        self.drain(&mut out);
        if !self.carry_times.is_empty() {
            self.emit_group(&mut out);
        }
        Ok(out)
    }

    fn drain(&mut self, out: &mut Vec<CombinedPoint>) {
        loop {
            // Frontier of the slowest live stream limits emission; a live
            // stream that has not pushed yet blocks everything.
            let mut limit = f64::INFINITY;
            for s in &self.streams {
                if !s.ended {
                    match s.frontier {
                        None => return,
                        Some(f) => limit = limit.min(f),
                    }
                }
            }
            // Next union time: the earliest pending point anywhere.
            let mut u = f64::INFINITY;
            for s in &self.streams {
                if let Some(&(t, _)) = s.pending.front() {
                    u = u.min(t);
                }
            }
            if !u.is_finite() || u > limit {
                return;
            }
            self.scratch.reset();
            for s in &mut self.streams {
                while let Some(&(t, _)) = s.pending.front() {
                    if t <= u {
                        let (_, acc) = s.pending.pop_front().unwrap();
                        s.held = Some(acc);
                    } else {
                        break;
                    }
                }
                if let Some(h) = &s.held {
                    self.scratch.merge(h);
                }
            }
            debug_assert!(self.cursor.map_or(true, |c| u > c));
            self.cursor = Some(u);
            self.carry_acc.merge(&self.scratch);
            self.carry_times.push(u);
            if self.carry_times.len() == self.thin {
                self.emit_group(out);
            }
        }
    }

    fn emit_group(&mut self, out: &mut Vec<CombinedPoint>) {
        let time = self.carry_times.iter().sum::<f64>() / self.carry_times.len() as f64;
        let mut acc = MomentAccumulator::empty(self.dim);
        acc.assign(&self.carry_acc);
        out.push(CombinedPoint { time, acc });
        self.carry_acc.reset();
        self.carry_times.clear();
    }
}
