//! Discrete-event fluid simulator.
//!
//! Between events the allocation is constant, so token levels and flow
//! remainders move linearly. Three things end an interval: a flow arrival,
//! a flow finishing, and a draining token bucket running empty. At every
//! event batch the bounds, congestion DP and allocation are recomputed and
//! a [`TraceRecord`] is appended.

use std_alloc::format;
use std_alloc::vec;
use std_alloc::vec::Vec;

use crate::alloc::{allocate, bounds, AllocationResult, EMPTY_EPS, RATE_EPS};
use crate::profile::{validate, ProfileConfig};
use crate::traffic::Arrival;
use crate::{Error, Matrix, Result};

/// Draining buckets and flows within this much of zero (Gbit) are treated
/// as having hit their event. Covers the rounding of `t + dt - t`.
const EVENT_SNAP: f64 = 1e-9;

/// Work conservation is checked to this tolerance (Gbps).
pub const CONSERVATION_TOL: f64 = 1e-9;

/// Per-node token levels, `levels[node][(dp, ts)]` in Gbit.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenState {
    levels: Vec<Matrix>,
}

impl TokenState {
    /// Every bucket full: nodes without history.
    pub fn full(profile: &ProfileConfig, nodes: usize) -> Self {
        Self {
            levels: vec![profile.bucket_sizes().clone(); nodes],
        }
    }

    pub fn nodes(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, node: usize, dp: usize, ts: usize) -> f64 {
        self.levels[node][(dp, ts)]
    }

    pub fn set_level(&mut self, node: usize, dp: usize, ts: usize, level: f64) {
        self.levels[node][(dp, ts)] = level;
    }

    pub fn node(&self, node: usize) -> &Matrix {
        &self.levels[node]
    }

    pub fn set_node(&mut self, node: usize, levels: Matrix) -> Result<()> {
        let have = self.levels[node].shape();
        if levels.shape() != have {
            return Err(Error::Shape {
                expected: have,
                got: levels.shape(),
            });
        }
        self.levels[node] = levels;
        Ok(())
    }

    /// Empties the longest-timescale buckets of every precedence but the
    /// last: the state of a node that has long been sending above its
    /// nominal speed.
    pub fn set_bad_history(&mut self, node: usize) {
        let m = &mut self.levels[node];
        let last = m.cols() - 1;
        for dp in 0..m.rows().saturating_sub(1) {
            m[(dp, last)] = 0.0;
        }
    }

    fn check_within(&self, profile: &ProfileConfig) -> Result<()> {
        for (n, m) in self.levels.iter().enumerate() {
            if m.shape() != profile.rates().shape() {
                return Err(Error::Shape {
                    expected: profile.rates().shape(),
                    got: m.shape(),
                });
            }
            let ok = m
                .iter()
                .zip(profile.bucket_sizes().iter())
                .all(|(l, cap)| (0.0..=cap).contains(&l));
            if !ok {
                return Err(Error::InvalidProfile(format!(
                    "token levels of node {n} outside [0, BS]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowRecord {
    pub id: u64,
    pub node: usize,
    pub arrival: f64,
    pub size: f64,
    pub remaining: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletedFlow {
    pub id: u64,
    pub node: usize,
    pub arrival: f64,
    pub size: f64,
    pub finish: f64,
}

impl CompletedFlow {
    pub fn bandwidth(&self) -> f64 {
        self.size / (self.finish - self.arrival)
    }
}

/// Event kinds in processing order for simultaneous events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Start,
    Arrival,
    Finish,
    BucketEmpty,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Start => "start",
            EventKind::Arrival => "arrival",
            EventKind::Finish => "finish",
            EventKind::BucketEmpty => "bucket_empty",
        }
    }
}

/// Allocation in force from `time` until the next record (or the horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    /// First kind, in processing order, among the events handled at `time`.
    pub kind: EventKind,
    pub throughput: Vec<f64>,
    pub per_dp: Matrix,
    pub congestion_dp: Option<usize>,
    pub flow_counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub start: f64,
    pub horizon: f64,
    pub records: Vec<TraceRecord>,
    pub completed: Vec<CompletedFlow>,
    /// Arrivals turned away because their node was at the flow limit.
    pub discarded: Vec<Arrival>,
}

impl SimTrace {
    /// Records paired with the end of the interval they govern.
    pub fn intervals(&self) -> impl Iterator<Item = (&TraceRecord, f64)> {
        let ends = self
            .records
            .iter()
            .skip(1)
            .map(|r| r.time)
            .chain(core::iter::once(self.horizon));
        self.records.iter().zip(ends)
    }

    /// The record in force at time `t`.
    pub fn at(&self, t: f64) -> Option<&TraceRecord> {
        let idx = self.records.partition_point(|r| r.time <= t);
        idx.checked_sub(1).map(|i| &self.records[i])
    }
}

#[derive(Debug, Clone)]
pub struct FluidConfig {
    pub profile: ProfileConfig,
    pub capacity: f64,
    pub nodes: usize,
    /// Arrivals at a node already holding this many flows are discarded.
    pub max_flows: Option<u32>,
}

/// Initial conditions of a run.
#[derive(Debug, Clone, Default)]
pub struct Scenario {
    pub start: f64,
    /// `None` starts every node with full buckets.
    pub tokens: Option<TokenState>,
    /// Never-ending flows per node; empty means none anywhere.
    pub persistent_flows: Vec<u32>,
    /// Must be sorted by time.
    pub arrivals: Vec<Arrival>,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub time: f64,
    pub tokens: TokenState,
    pub flows: Vec<FlowRecord>,
    pub persistent_flows: Vec<u32>,
    pub pending: Vec<Arrival>,
    pub next_flow_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NextEvent {
    pub time: f64,
    pub kind: EventKind,
    /// Arrival index, flow position, or flattened `(node, dp, ts)` bucket.
    pub index: usize,
}

impl NextEvent {
    fn precedes(&self, other: &NextEvent) -> bool {
        (self.time, self.kind, self.index) < (other.time, other.kind, other.index)
    }
}

pub struct Engine {
    config: FluidConfig,
    work_conserving: bool,
    time: f64,
    tokens: TokenState,
    flows: Vec<FlowRecord>,
    persistent: Vec<u32>,
    pending: Vec<Arrival>,
    next_pending: usize,
    next_flow_id: u64,
    alloc: Option<AllocationResult>,
    trace: SimTrace,
}

impl Engine {
    pub fn new(config: FluidConfig, scenario: Scenario) -> Result<Self> {
        let tokens = scenario
            .tokens
            .unwrap_or_else(|| TokenState::full(&config.profile, config.nodes));
        let persistent = if scenario.persistent_flows.is_empty() {
            vec![0; config.nodes]
        } else {
            scenario.persistent_flows
        };
        Self::resume(
            config,
            EngineState {
                time: scenario.start,
                tokens,
                flows: Vec::new(),
                persistent_flows: persistent,
                pending: scenario.arrivals,
                next_flow_id: 0,
            },
        )
    }

    /// Continues from a snapshot taken with [`Engine::snapshot`].
    pub fn resume(config: FluidConfig, state: EngineState) -> Result<Self> {
        let p = &config.profile;
        let report = validate(p, config.capacity, config.nodes);
        if let Some(f) = report.errors().next() {
            return Err(Error::InvalidProfile(format!("{f}")));
        }
        if p.bucket_sizes().column(0).any(|bs| bs != 0.0) {
            return Err(Error::InvalidProfile(
                "fluid simulation needs zero-size first-timescale buckets".into(),
            ));
        }
        if state.tokens.nodes() != config.nodes || state.persistent_flows.len() != config.nodes {
            return Err(Error::InvalidTraffic(format!(
                "state describes {} nodes, config has {}",
                state.tokens.nodes(),
                config.nodes
            )));
        }
        state.tokens.check_within(p)?;
        if state
            .pending
            .windows(2)
            .any(|w| w[1].time < w[0].time)
        {
            return Err(Error::InvalidTraffic("arrivals are not sorted by time".into()));
        }
        if let Some(a) = state
            .pending
            .iter()
            .find(|a| a.node >= config.nodes || a.time < state.time || !(a.size > 0.0))
        {
            return Err(Error::InvalidTraffic(format!("bad arrival {a:?}")));
        }
        Ok(Self {
            work_conserving: p.exhausted_rate() >= config.capacity - CONSERVATION_TOL,
            time: state.time,
            tokens: state.tokens,
            flows: state.flows,
            persistent: state.persistent_flows,
            pending: state.pending,
            next_pending: 0,
            next_flow_id: state.next_flow_id,
            alloc: None,
            trace: SimTrace {
                start: state.time,
                horizon: state.time,
                records: Vec::new(),
                completed: Vec::new(),
                discarded: Vec::new(),
            },
            config,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn tokens(&self) -> &TokenState {
        &self.tokens
    }

    pub fn flows(&self) -> &[FlowRecord] {
        &self.flows
    }

    pub fn trace(&self) -> &SimTrace {
        &self.trace
    }

    pub fn into_trace(self) -> SimTrace {
        self.trace
    }

    pub fn snapshot(&self) -> EngineState {
        EngineState {
            time: self.time,
            tokens: self.tokens.clone(),
            flows: self.flows.clone(),
            persistent_flows: self.persistent.clone(),
            pending: self.pending[self.next_pending..].to_vec(),
            next_flow_id: self.next_flow_id,
        }
    }

    /// Flow counts per node, persistent flows included.
    pub fn flow_counts(&self) -> Vec<u32> {
        let mut f = self.persistent.clone();
        for flow in &self.flows {
            f[flow.node] += 1;
        }
        f
    }

    /// Allocation for the current state.
    pub fn compute_allocation(&self) -> AllocationResult {
        let flows = self.flow_counts();
        let bd = bounds(&self.config.profile, &self.tokens, &flows);
        allocate(&bd, &flows, self.config.capacity)
    }

    /// Earliest upcoming event under `alloc`, `None` if nothing will happen.
    pub fn next_event(&self, alloc: &AllocationResult) -> Option<NextEvent> {
        let mut best: Option<NextEvent> = None;
        let mut offer = |e: NextEvent| {
            if best.is_none_or(|b| e.precedes(&b)) {
                best = Some(e);
            }
        };
        if let Some(a) = self.pending.get(self.next_pending) {
            offer(NextEvent {
                time: a.time,
                kind: EventKind::Arrival,
                index: self.next_pending,
            });
        }
        let counts = self.flow_counts();
        for (i, flow) in self.flows.iter().enumerate() {
            let rate = alloc.throughput[flow.node] / f64::from(counts[flow.node]);
            if rate > 0.0 {
                offer(NextEvent {
                    time: self.time + flow.remaining / rate,
                    kind: EventKind::Finish,
                    index: i,
                });
            }
        }
        let p = &self.config.profile;
        let (n_dp, n_ts) = (p.n_dp(), p.n_ts());
        for node in 0..self.config.nodes {
            for dp in 0..n_dp {
                let th = alloc.per_dp[(dp, node)];
                for ts in 0..n_ts {
                    let level = self.tokens.level(node, dp, ts);
                    let drain = th - p.rate(dp, ts);
                    if level > EMPTY_EPS && drain > RATE_EPS {
                        offer(NextEvent {
                            time: self.time + level / drain,
                            kind: EventKind::BucketEmpty,
                            index: (node * n_dp + dp) * n_ts + ts,
                        });
                    }
                }
            }
        }
        best
    }

    /// Moves the state forward by `dt` under a fixed allocation.
    pub fn advance(&mut self, alloc: &AllocationResult, dt: f64) -> Result<()> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(self.invariant(format!("bad time step {dt}")));
        }
        let p = &self.config.profile;
        for node in 0..self.config.nodes {
            for dp in 0..p.n_dp() {
                let th = alloc.per_dp[(dp, node)];
                for ts in 0..p.n_ts() {
                    let cap = p.bucket_size(dp, ts);
                    let level = self.tokens.level(node, dp, ts) + (p.rate(dp, ts) - th) * dt;
                    if level < -EVENT_SNAP {
                        return Err(self.invariant(format!(
                            "bucket ({}, {}) of node {} overdrawn to {level}",
                            dp + 1,
                            ts + 1,
                            node + 1
                        )));
                    }
                    let level = if level < EMPTY_EPS { 0.0 } else { level.min(cap) };
                    self.tokens.set_level(node, dp, ts, level);
                }
            }
        }
        let counts = self.flow_counts();
        for flow in &mut self.flows {
            let rate = alloc.throughput[flow.node] / f64::from(counts[flow.node]);
            flow.remaining -= rate * dt;
        }
        if let Some(f) = self.flows.iter().find(|f| f.remaining < -EVENT_SNAP) {
            let msg = format!("flow {} overshot its finish by {} Gbit", f.id, -f.remaining);
            return Err(self.invariant(msg));
        }
        self.time += dt;
        Ok(())
    }

    /// Runs until `horizon`. Events at exactly `horizon` are left for a
    /// later call, so a run can be split and continued.
    pub fn run_until(&mut self, horizon: f64) -> Result<()> {
        if horizon < self.time {
            return Err(Error::TimeRegression {
                now: horizon,
                last: self.time,
            });
        }
        let mut alloc = match self.alloc.take() {
            Some(a) => a,
            None => {
                let kind = self.process_batch(EventKind::Start, None);
                self.record(kind)?
            }
        };
        let mut stalled = 0u32;
        loop {
            let next = self.next_event(&alloc);
            let t_next = next.map_or(f64::INFINITY, |e| e.time).max(self.time);
            if t_next >= horizon {
                let dt = horizon - self.time;
                self.advance(&alloc, dt)?;
                self.time = horizon;
                break;
            }
            let dt = t_next - self.time;
            self.advance(&alloc, dt)?;
            self.time = t_next;
            stalled = if dt == 0.0 { stalled + 1 } else { 0 };
            if stalled > 1000 {
                return Err(self.invariant("no progress after 1000 zero-length steps".into()));
            }
            let first = next.map_or(EventKind::BucketEmpty, |e| e.kind);
            let kind = self.process_batch(first, Some(&alloc));
            alloc = self.record(kind)?;
        }
        self.trace.horizon = horizon;
        self.alloc = Some(alloc);
        Ok(())
    }

    /// Applies every event due at the current time, in kind order.
    fn process_batch(&mut self, first: EventKind, prev: Option<&AllocationResult>) -> EventKind {
        let mut kind = first;
        while let Some(a) = self.pending.get(self.next_pending).copied() {
            if a.time > self.time {
                break;
            }
            self.next_pending += 1;
            kind = kind.min(EventKind::Arrival);
            let count = self.flow_counts()[a.node];
            if self.config.max_flows.is_some_and(|max| count >= max) {
                self.trace.discarded.push(a);
                continue;
            }
            self.flows.push(FlowRecord {
                id: self.next_flow_id,
                node: a.node,
                arrival: a.time,
                size: a.size,
                remaining: a.size,
            });
            self.next_flow_id += 1;
        }
        let now = self.time;
        let before = self.flows.len();
        let completed = &mut self.trace.completed;
        self.flows.retain(|f| {
            if f.remaining <= EVENT_SNAP {
                completed.push(CompletedFlow {
                    id: f.id,
                    node: f.node,
                    arrival: f.arrival,
                    size: f.size,
                    finish: now,
                });
                false
            } else {
                true
            }
        });
        if self.flows.len() < before {
            kind = kind.min(EventKind::Finish);
        }
        // Draining buckets within rounding of zero have hit their event.
        if let Some(alloc) = prev {
            let p = &self.config.profile;
            for node in 0..self.config.nodes {
                for dp in 0..p.n_dp() {
                    for ts in 0..p.n_ts() {
                        let level = self.tokens.level(node, dp, ts);
                        let draining = alloc.per_dp[(dp, node)] - p.rate(dp, ts) > RATE_EPS;
                        if level > 0.0 && level <= EVENT_SNAP && draining {
                            self.tokens.set_level(node, dp, ts, 0.0);
                        }
                    }
                }
            }
        }
        kind
    }

    fn record(&mut self, kind: EventKind) -> Result<AllocationResult> {
        let alloc = self.compute_allocation();
        self.check_allocation(&alloc)?;
        self.trace.records.push(TraceRecord {
            time: self.time,
            kind,
            throughput: alloc.throughput.clone(),
            per_dp: alloc.per_dp.clone(),
            congestion_dp: alloc.congestion_dp,
            flow_counts: self.flow_counts(),
        });
        Ok(alloc)
    }

    fn check_allocation(&self, alloc: &AllocationResult) -> Result<()> {
        if alloc.throughput.iter().any(|t| !t.is_finite()) {
            return Err(self.invariant(format!("non-finite allocation {:?}", alloc.throughput)));
        }
        if self.work_conserving && alloc.congestion_dp.is_some() {
            let total = alloc.total();
            if (total - self.config.capacity).abs() > CONSERVATION_TOL {
                return Err(self.invariant(format!(
                    "allocation sums to {total}, capacity is {}",
                    self.config.capacity
                )));
            }
        }
        // An empty bucket must not be drained, or the bound set would chatter.
        let p = &self.config.profile;
        for node in 0..self.config.nodes {
            for dp in 0..p.n_dp() {
                for ts in 0..p.n_ts() {
                    if self.tokens.level(node, dp, ts) <= EMPTY_EPS
                        && alloc.per_dp[(dp, node)] > p.rate(dp, ts) + CONSERVATION_TOL
                    {
                        return Err(self.invariant(format!(
                            "empty bucket ({}, {}) of node {} drained at {} > {}",
                            dp + 1,
                            ts + 1,
                            node + 1,
                            alloc.per_dp[(dp, node)],
                            p.rate(dp, ts)
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn invariant(&self, what: std_alloc::string::String) -> Error {
        Error::Invariant {
            time: self.time,
            what,
        }
    }
}

/// Runs a scenario from its start time to `horizon`.
pub fn run(config: FluidConfig, scenario: Scenario, horizon: f64) -> Result<SimTrace> {
    let mut engine = Engine::new(config, scenario)?;
    engine.run_until(horizon)?;
    Ok(engine.into_trace())
}
