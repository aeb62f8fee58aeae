//! Gillespie direct-method simulator.
//!
//! A trajectory is driven either in one call ([`run_trajectory`]) or
//! incrementally through a [`TrajectoryCursor`], which yields one emitted
//! point per call so that many trajectories can be interleaved on one thread
//! with bounded buffering.
//!
//! Guarantees:
//!
//! - The first emitted point is `(0, initial counts)`; the last point's time
//!   equals the horizon exactly (bitwise), under every sampling policy.
//! - Emitted times are strictly increasing. When a waiting time underflows
//!   the representable gap at the current time, the event time is bumped to
//!   the next representable instant to preserve strict monotonicity.
//! - The event sequence depends only on (network, overrides, horizon, seed,
//!   stream index); the sampling policy only filters which states are
//!   emitted. Streams are therefore bit-identical across machines and
//!   thread placements.
//!
//! Propensities are recomputed from scratch at every step (no dependency
//! graph); rate expressions that do not read the state or the time are
//! folded to constants once per run. Time-dependent expressions are sampled
//! at the start of each step and held constant over the drawn waiting time.

use crate::model::{ModelError, RateSpec, Reaction, ReactionNetwork};
use crate::rng::RngStream;
use thiserror::Error;

/// Simulation state: a time and the integer copy-number vector.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub time: f64,
    pub counts: Vec<i64>,
}

/// One emitted sample of a trajectory stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub counts: Vec<i64>,
}

/// Which trajectory points are emitted. The first point (t = 0) and the
/// final point (t = horizon) are always emitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingPolicy {
    /// Every reaction event.
    Every,
    /// Every s-th reaction event.
    Stride(u32),
    /// The held state at times 0, dt, 2*dt, ..., horizon.
    Grid(f64),
}

/// Result of one direct-method draw from a frozen state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// Wait `tau`, then fire `reaction`.
    Step { tau: f64, reaction: usize },
    /// Total propensity is zero; the state is absorbing.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("horizon must be finite and non-negative")]
    InvalidHorizon,
    #[error("unknown parameter '{0}' in overrides")]
    UnknownParameter(String),
    #[error("stride must be at least 1")]
    InvalidStride,
    #[error("grid spacing must be positive and finite")]
    InvalidGrid,
}

/// Totals reported after a trajectory completes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    /// Number of reaction events applied.
    pub events: u64,
    /// Number of points emitted (after policy filtering).
    pub points: u64,
    /// Final state, at the horizon.
    pub final_state: State,
    /// Per-reaction firing counts, indexed like `ReactionNetwork::reactions`.
    pub firings: Vec<u64>,
}

/// Waiting time of the direct method: `-ln(u1) / a0`.
#[inline]
fn waiting_time(a0: f64, u1: f64) -> f64 {
    -u1.ln() / a0
}

/// Smallest index j with cumulative propensity strictly above `target`.
/// Falls back to the last reaction with positive propensity when rounding
/// pushes `target` to the very top of the range.
#[inline]
fn select_reaction(propensities: &[f64], target: f64) -> usize {
    let mut cum = 0.0;
    for (j, &a) in propensities.iter().enumerate() {
        cum += a;
        if cum > target {
            return j;
        }
    }
    propensities
        .iter()
        .rposition(|&a| a > 0.0)
        .expect("select_reaction called with zero total propensity")
}

/// Fills `buf` with all propensities and returns their sum. `const_rates`
/// short-circuits rate expressions that were folded at run start; `warned`
/// tracks the once-per-reaction clamp warning.
fn fill_propensities(
    net: &ReactionNetwork,
    counts: &[i64],
    params: &[f64],
    time: f64,
    const_rates: Option<&[Option<f64>]>,
    mut warned: Option<&mut [bool]>,
    buf: &mut [f64],
) -> Result<f64, SimError> {
    let mut a0 = 0.0;
    for (j, r) in net.reactions().iter().enumerate() {
        let folded = const_rates.and_then(|c| c[j]);
        let p = r.propensity_with_const(folded, counts, params, time)?;
        if p.clamped {
            if let Some(w) = warned.as_deref_mut() {
                if !w[j] {
                    w[j] = true;
                    log::warn!(
                        "reaction '{}': negative propensity clamped to 0",
                        r.name
                    );
                }
            }
        }
        buf[j] = p.value;
        a0 += p.value;
    }
    Ok(a0)
}

/// One direct-method draw from the given state, using the network's declared
/// parameter values. Does not modify the state.
pub fn gillespie_step(
    net: &ReactionNetwork,
    state: &State,
    rng: &mut RngStream,
) -> Result<StepOutcome, SimError> {
    let params = net.parameter_values();
    let mut buf = vec![0.0; net.reactions().len()];
    let a0 = fill_propensities(net, &state.counts, &params, state.time, None, None, &mut buf)?;
    if a0 <= 0.0 {
        return Ok(StepOutcome::Exhausted);
    }
    let tau = waiting_time(a0, rng.next_open01());
    let reaction = select_reaction(&buf, rng.next_open01() * a0);
    Ok(StepOutcome::Step { tau, reaction })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Running,
    Draining,
    Finished,
}

/// Resumable trajectory: each `next_point` call returns the next emitted
/// point, or `None` once the final point at the horizon has been produced.
pub struct TrajectoryCursor<'a> {
    net: &'a ReactionNetwork,
    params: Vec<f64>,
    rng: RngStream,
    policy: SamplingPolicy,
    horizon: f64,
    time: f64,
    counts: Vec<i64>,
    const_rates: Vec<Option<f64>>,
    prop_buf: Vec<f64>,
    warned: Vec<bool>,
    staged: Option<(f64, usize)>,
    phase: Phase,
    emitted_first: bool,
    grid_k: u64,
    stride_seen: u32,
    last_emit: Option<f64>,
    events: u64,
    points: u64,
    firings: Vec<u64>,
}

impl<'a> TrajectoryCursor<'a> {
    pub fn new(
        net: &'a ReactionNetwork,
        overrides: &[(&str, f64)],
        horizon: f64,
        rng: RngStream,
        policy: SamplingPolicy,
    ) -> Result<Self, SimError> {
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(SimError::InvalidHorizon);
        }
        match policy {
            SamplingPolicy::Stride(s) if s == 0 => return Err(SimError::InvalidStride),
            SamplingPolicy::Grid(dt) if !(dt.is_finite() && dt > 0.0) => {
                return Err(SimError::InvalidGrid)
            }
            _ => {}
        }
        let mut params = net.parameter_values();
        for (name, value) in overrides {
            let i = net
                .parameter_index(name)
                .ok_or_else(|| SimError::UnknownParameter((*name).to_owned()))?;
            params[i] = *value;
        }
        let mut const_rates = Vec::with_capacity(net.reactions().len());
        for r in net.reactions() {
            const_rates.push(fold_constant_rate(r, &params)?);
        }
        let n_reactions = net.reactions().len();
        Ok(TrajectoryCursor {
            net,
            params,
            rng,
            policy,
            horizon,
            time: 0.0,
            counts: net.initial_counts(),
            const_rates,
            prop_buf: vec![0.0; n_reactions],
            warned: vec![false; n_reactions],
            staged: None,
            phase: Phase::Running,
            emitted_first: false,
            grid_k: 1,
            stride_seen: 0,
            last_emit: None,
            events: 0,
            points: 0,
            firings: vec![0; n_reactions],
        })
    }

    fn emit(&mut self, time: f64) -> TrajectoryPoint {
        self.last_emit = Some(time);
        self.points += 1;
        TrajectoryPoint {
            time,
            counts: self.counts.clone(),
        }
    }

    fn draw(&mut self) -> Result<Option<(f64, usize)>, SimError> {
        let a0 = fill_propensities(
            self.net,
            &self.counts,
            &self.params,
            self.time,
            Some(&self.const_rates),
            Some(&mut self.warned),
            &mut self.prop_buf,
        )?;
        if a0 <= 0.0 {
            return Ok(None);
        }
        let tau = waiting_time(a0, self.rng.next_open01());
        let j = select_reaction(&self.prop_buf, self.rng.next_open01() * a0);
        Ok(Some((tau, j)))
    }

    pub fn next_point(&mut self) -> Result<Option<TrajectoryPoint>, SimError> {
        if !self.emitted_first {
            self.emitted_first = true;
            if self.horizon == 0.0 {
                self.phase = Phase::Finished;
            }
            return Ok(Some(self.emit(0.0)));
        }
        loop {
            match self.phase {
                Phase::Finished => return Ok(None),
                Phase::Draining => {
                    if let SamplingPolicy::Grid(dt) = self.policy {
                        let g = self.grid_k as f64 * dt;
                        if g < self.horizon {
                            self.grid_k += 1;
                            return Ok(Some(self.emit(g)));
                        }
                    }
                    self.phase = Phase::Finished;
                    if self.last_emit != Some(self.horizon) {
                        let h = self.horizon;
                        return Ok(Some(self.emit(h)));
                    }
                    return Ok(None);
                }
                Phase::Running => {
                    if self.staged.is_none() {
                        match self.draw()? {
                            None => {
                                self.phase = Phase::Draining;
                                continue;
                            }
                            Some((tau, j)) => {
                                // Keep event times strictly increasing even
                                // when tau underflows the gap at self.time.
                                let mut te = self.time + tau;
                                if te <= self.time {
                                    te = self.time.next_up();
                                }
                                if te > self.horizon {
                                    self.phase = Phase::Draining;
                                    continue;
                                }
                                self.staged = Some((te, j));
                            }
                        }
                    }
                    let (te, j) = self.staged.unwrap();
                    if let SamplingPolicy::Grid(dt) = self.policy {
                        let g = self.grid_k as f64 * dt;
                        if g < te {
                            self.grid_k += 1;
                            return Ok(Some(self.emit(g)));
                        }
                    }
                    self.staged = None;
                    self.time = te;
                    for (c, d) in self.counts.iter_mut().zip(&self.net.reactions()[j].delta) {
                        *c += d;
                    }
                    self.events += 1;
                    self.firings[j] += 1;
                    match self.policy {
                        SamplingPolicy::Every => return Ok(Some(self.emit(te))),
                        SamplingPolicy::Stride(s) => {
                            self.stride_seen += 1;
                            if self.stride_seen == s {
                                self.stride_seen = 0;
                                return Ok(Some(self.emit(te)));
                            }
                        }
                        SamplingPolicy::Grid(_) => {}
                    }
                }
            }
        }
    }

    pub fn summary(&self) -> TrajectorySummary {
        TrajectorySummary {
            events: self.events,
            points: self.points,
            final_state: State {
                time: self.time,
                counts: self.counts.clone(),
            },
            firings: self.firings.clone(),
        }
    }
}

fn fold_constant_rate(r: &Reaction, params: &[f64]) -> Result<Option<f64>, SimError> {
    let expr = match &r.rate {
        RateSpec::MassAction(e) | RateSpec::Custom(e) => e,
    };
    if expr.depends_on_state_or_time() {
        return Ok(None);
    }
    let v = expr.eval(&[], params, 0.0).map_err(|source| {
        SimError::Model(ModelError::Eval {
            reaction: r.name.clone(),
            source,
        })
    })?;
    if !v.is_finite() {
        return Err(SimError::Model(ModelError::NonFinitePropensity(
            r.name.clone(),
        )));
    }
    Ok(Some(v))
}

/// Run one whole trajectory, feeding every emitted point to `sink`.
///
/// The sink is called on the producing thread; a sink backed by a bounded
/// queue blocks the trajectory when full (backpressure, never loss).
pub fn run_trajectory(
    net: &ReactionNetwork,
    overrides: &[(&str, f64)],
    horizon: f64,
    rng: RngStream,
    policy: SamplingPolicy,
    mut sink: impl FnMut(TrajectoryPoint),
) -> Result<TrajectorySummary, SimError> {
    let mut cursor = TrajectoryCursor::new(net, overrides, horizon, rng, policy)?;
    while let Some(p) = cursor.next_point()? {
        sink(p);
    }
    Ok(cursor.summary())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::model::NetworkBuilder;

    fn immigration_death(lambda: f64, delta: f64) -> ReactionNetwork {
        NetworkBuilder::new()
            .parameter("lambda", lambda)
            .parameter("delta", delta)
            .species("X", 0)
            .mass_action("immigrate", &[], &[("X", 1)], parse_expr("lambda").unwrap())
            .mass_action("die", &[("X", 1)], &[], parse_expr("delta").unwrap())
            .build()
            .unwrap()
    }

    fn collect(
        net: &ReactionNetwork,
        horizon: f64,
        seed: u64,
        stream: u64,
        policy: SamplingPolicy,
    ) -> (Vec<TrajectoryPoint>, TrajectorySummary) {
        let mut pts = Vec::new();
        let summary = run_trajectory(
            net,
            &[],
            horizon,
            RngStream::new(seed, stream),
            policy,
            |p| pts.push(p),
        )
        .unwrap();
        (pts, summary)
    }

    #[test]
    fn waiting_time_formula() {
        // u1 = e^-2, a0 = 4: tau = 2/4 = 0.5
        let tau = waiting_time(4.0, (-2.0f64).exp());
        assert!((tau - 0.5).abs() < 1e-15, "tau = {tau}");
    }

    #[test]
    fn selection_scans_cumulative_sums() {
        // a = [1, 3], target = 0.3 * 4 = 1.2: cumulative 1.0 is not > 1.2,
        // 4.0 is, so the second reaction fires.
        assert_eq!(select_reaction(&[1.0, 3.0], 1.2), 1);
        assert_eq!(select_reaction(&[1.0, 3.0], 0.99), 0);
        // Single candidate, any target in range.
        assert_eq!(select_reaction(&[5.0], 4.999), 0);
        // Zero-propensity holes are skipped.
        assert_eq!(select_reaction(&[0.0, 2.0, 0.0], 1.5), 1);
        // Rounding guard: target at the very top still selects a live one.
        assert_eq!(select_reaction(&[1.0, 1.0, 0.0], 2.0), 1);
    }

    #[test]
    fn exhausted_when_all_propensities_vanish() {
        let net = NetworkBuilder::new()
            .species("X", 0)
            .mass_action("die", &[("X", 1)], &[], crate::expr::Expr::Const(1.0))
            .build()
            .unwrap();
        let state = State {
            time: 0.0,
            counts: vec![0],
        };
        let mut rng = RngStream::new(1, 0);
        assert_eq!(
            gillespie_step(&net, &state, &mut rng).unwrap(),
            StepOutcome::Exhausted
        );
    }

    #[test]
    fn empty_network_emits_exactly_two_points() {
        let net = NetworkBuilder::new().species("X", 7).build().unwrap();
        let (pts, summary) = collect(&net, 10.0, 3, 0, SamplingPolicy::Every);
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0], TrajectoryPoint { time: 0.0, counts: vec![7] });
        assert_eq!(pts[1], TrajectoryPoint { time: 10.0, counts: vec![7] });
        assert_eq!(summary.events, 0);
    }

    #[test]
    fn pure_death_decrements_by_one_until_extinct() {
        let net = NetworkBuilder::new()
            .parameter("delta", 2.0)
            .species("X", 3)
            .mass_action("die", &[("X", 1)], &[], parse_expr("delta").unwrap())
            .build()
            .unwrap();
        for seed in 0..20 {
            let (pts, summary) = collect(&net, 100.0, seed, 0, SamplingPolicy::Every);
            for w in pts.windows(2) {
                assert!(w[1].time > w[0].time);
                let d = w[0].counts[0] - w[1].counts[0];
                assert!(d == 1 || d == 0, "step changed X by {d}");
            }
            let last = pts.last().unwrap();
            assert_eq!(last.time.to_bits(), 100.0f64.to_bits());
            assert!(last.counts[0] == 0 || last.time < 100.0);
            assert_eq!(summary.events, 3 - last.counts[0] as u64);
        }
    }

    #[test]
    fn identical_keys_give_bit_identical_streams() {
        let net = immigration_death(10.0, 1.0);
        let (a, sa) = collect(&net, 15.0, 42, 5, SamplingPolicy::Every);
        let (b, sb) = collect(&net, 15.0, 42, 5, SamplingPolicy::Every);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.time.to_bits(), y.time.to_bits());
            assert_eq!(x.counts, y.counts);
        }
        assert_eq!(sa, sb);
        let (c, _) = collect(&net, 15.0, 42, 6, SamplingPolicy::Every);
        assert_ne!(
            a.iter().map(|p| p.time.to_bits()).collect::<Vec<_>>(),
            c.iter().map(|p| p.time.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn policy_filters_but_never_alters_the_event_sequence() {
        let net = immigration_death(10.0, 1.0);
        let (every, se) = collect(&net, 8.0, 7, 1, SamplingPolicy::Every);
        let (strided, ss) = collect(&net, 8.0, 7, 1, SamplingPolicy::Stride(5));
        let (gridded, sg) = collect(&net, 8.0, 7, 1, SamplingPolicy::Grid(0.5));
        assert_eq!(se.final_state, ss.final_state);
        assert_eq!(se.final_state, sg.final_state);
        assert_eq!(se.events, ss.events);
        assert_eq!(se.events, sg.events);
        // Strided points are a subsequence of the full stream.
        let mut it = every.iter();
        for p in &strided {
            assert!(it.any(|q| q.time.to_bits() == p.time.to_bits() && q.counts == p.counts));
        }
        // Grid times are exactly k*dt plus the horizon.
        for (k, p) in gridded.iter().enumerate() {
            let expect = if k == gridded.len() - 1 {
                8.0
            } else {
                k as f64 * 0.5
            };
            assert_eq!(p.time.to_bits(), expect.to_bits());
        }
    }

    #[test]
    fn grid_holds_the_pre_event_state() {
        // Deterministic single event: immigration at a huge rate fires
        // almost immediately; grid samples before it hold the initial state.
        let net = NetworkBuilder::new()
            .parameter("k", 1e9)
            .species("X", 0)
            .mass_action("arrive", &[], &[("X", 1)], parse_expr("k").unwrap())
            .build()
            .unwrap();
        let mut pts = Vec::new();
        run_trajectory(
            &net,
            &[],
            1.0,
            RngStream::new(0, 0),
            SamplingPolicy::Grid(0.25),
            |p| pts.push(p),
        )
        .unwrap();
        // 0, 0.25, 0.5, 0.75, then horizon 1.0
        assert_eq!(pts.len(), 5);
        assert_eq!(pts[0].counts, vec![0]);
        assert!(pts[4].counts[0] > 0);
    }

    #[test]
    fn stride_emits_every_sth_event_plus_first_and_last() {
        let net = immigration_death(50.0, 0.0);
        let (pts, summary) = collect(&net, 2.0, 11, 0, SamplingPolicy::Stride(10));
        // first + every 10th event + horizon point
        let interior = pts
            .iter()
            .filter(|p| p.time > 0.0 && p.time < 2.0)
            .count() as u64;
        assert_eq!(interior, summary.events / 10);
        assert_eq!(pts[0].time, 0.0);
        assert_eq!(pts.last().unwrap().time.to_bits(), 2.0f64.to_bits());
    }

    #[test]
    fn horizon_zero_emits_a_single_point() {
        let net = immigration_death(10.0, 1.0);
        let (pts, _) = collect(&net, 0.0, 1, 0, SamplingPolicy::Every);
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].time, 0.0);
    }

    #[test]
    fn time_gated_reaction_respects_t() {
        let net = NetworkBuilder::new()
            .species("X", 0)
            .custom(
                "late_arrival",
                &[],
                &[("X", 1)],
                parse_expr("step(t - 5) * 100").unwrap(),
            )
            .build()
            .unwrap();
        let (pts, summary) = collect(&net, 6.0, 4, 0, SamplingPolicy::Every);
        assert!(summary.events > 0);
        for p in &pts {
            if p.time <= 5.0 {
                assert_eq!(p.counts[0], 0, "event before the gate at t = {}", p.time);
            }
        }
    }

    #[test]
    fn overrides_replace_parameter_values() {
        let net = immigration_death(10.0, 1.0);
        let mut a = Vec::new();
        run_trajectory(
            &net,
            &[("lambda", 0.0)],
            5.0,
            RngStream::new(2, 0),
            SamplingPolicy::Every,
            |p| a.push(p),
        )
        .unwrap();
        // lambda = 0 and X0 = 0: nothing can happen.
        assert_eq!(a.len(), 2);
        let err = run_trajectory(
            &net,
            &[("nope", 1.0)],
            5.0,
            RngStream::new(2, 0),
            SamplingPolicy::Every,
            |_| {},
        )
        .unwrap_err();
        assert!(matches!(err, SimError::UnknownParameter(n) if n == "nope"));
    }

    #[test]
    fn invalid_run_parameters_rejected() {
        let net = immigration_death(1.0, 1.0);
        let bad = |h: f64, p: SamplingPolicy| {
            TrajectoryCursor::new(&net, &[], h, RngStream::new(0, 0), p).err()
        };
        assert_eq!(bad(f64::NAN, SamplingPolicy::Every), Some(SimError::InvalidHorizon));
        assert_eq!(bad(-1.0, SamplingPolicy::Every), Some(SimError::InvalidHorizon));
        assert_eq!(bad(1.0, SamplingPolicy::Stride(0)), Some(SimError::InvalidStride));
        assert_eq!(bad(1.0, SamplingPolicy::Grid(0.0)), Some(SimError::InvalidGrid));
    }

    #[test]
    fn firings_count_each_reaction() {
        let net = immigration_death(20.0, 1.0);
        let (_, summary) = collect(&net, 10.0, 9, 0, SamplingPolicy::Every);
        assert_eq!(summary.firings.len(), 2);
        assert_eq!(summary.firings.iter().sum::<u64>(), summary.events);
        let net_counts = summary.firings[0] as i64 - summary.firings[1] as i64;
        assert_eq!(net_counts, summary.final_state.counts[0]);
    }
}
