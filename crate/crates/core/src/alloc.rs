//! Instantaneous fluid bandwidth allocation.
//!
//! Each node's token levels bound the rate it may send on each drop
//! precedence. The congestion DP is the first precedence at which the
//! cumulative bounds of all active nodes reach the capacity. Precedences
//! below it are served in full, precedences above it not at all, and the
//! remaining capacity on the congestion DP is water-filled in proportion to
//! the nodes' flow counts.

use std_alloc::vec;
use std_alloc::vec::Vec;

use crate::fluid::TokenState;
use crate::profile::ProfileConfig;
use crate::Matrix;

/// Rate and ratio comparisons use this absolute tolerance (Gbps).
pub const RATE_EPS: f64 = 1e-12;

/// Token levels at or below this are treated as empty (Gbit).
pub const EMPTY_EPS: f64 = 1e-12;

/// Per-(dp, node) throughput bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsMatrix {
    bounds: Matrix,
    active: Vec<bool>,
}

impl BoundsMatrix {
    /// `bounds` is `N_DP x N`. Inactive nodes get their column zeroed.
    pub fn new(mut bounds: Matrix, active: Vec<bool>) -> Self {
        assert_eq!(bounds.cols(), active.len(), "one activity flag per node");
        for (n, &on) in active.iter().enumerate() {
            if !on {
                for dp in 0..bounds.rows() {
                    bounds[(dp, n)] = 0.0;
                }
            }
        }
        Self { bounds, active }
    }

    pub fn n_dp(&self) -> usize {
        self.bounds.rows()
    }

    pub fn n_nodes(&self) -> usize {
        self.bounds.cols()
    }

    pub fn get(&self, dp: usize, node: usize) -> f64 {
        self.bounds[(dp, node)]
    }

    pub fn is_active(&self, node: usize) -> bool {
        self.active[node]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.bounds
    }

    /// Sum of the node's bounds on precedences `0..upto`.
    pub fn prefix(&self, node: usize, upto: usize) -> f64 {
        (0..upto).map(|dp| self.bounds[(dp, node)]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    /// Node throughputs.
    pub throughput: Vec<f64>,
    /// `N_DP x N` per-precedence throughputs.
    pub per_dp: Matrix,
    /// `None` when no node is active.
    pub congestion_dp: Option<usize>,
}

impl AllocationResult {
    pub fn idle(n_dp: usize, n_nodes: usize) -> Self {
        Self {
            throughput: vec![0.0; n_nodes],
            per_dp: Matrix::zeros(n_dp, n_nodes),
            congestion_dp: None,
        }
    }

    pub fn total(&self) -> f64 {
        self.throughput.iter().sum()
    }
}

/// Rate bound of every (dp, node): the smallest rate among the empty
/// buckets of that precedence, or infinity when no bucket is empty.
/// Nodes without flows are inactive.
pub fn bounds(profile: &ProfileConfig, tokens: &TokenState, flows: &[u32]) -> BoundsMatrix {
    let n = flows.len();
    let mut bd = Matrix::zeros(profile.n_dp(), n);
    for node in 0..n {
        for dp in 0..profile.n_dp() {
            bd[(dp, node)] = (0..profile.n_ts())
                .filter(|&ts| tokens.level(node, dp, ts) <= EMPTY_EPS)
                .map(|ts| profile.rate(dp, ts))
                .fold(f64::INFINITY, f64::min);
        }
    }
    BoundsMatrix::new(bd, flows.iter().map(|&f| f > 0).collect())
}

/// First precedence whose cumulative bound over all active nodes reaches
/// `capacity`. If none does, the last precedence: every node is then capped
/// and the link is not saturated. `None` when no node is active.
pub fn congestion_dp(bd: &BoundsMatrix, capacity: f64) -> Option<usize> {
    if !bd.active.iter().any(|&a| a) {
        return None;
    }
    let mut cum = 0.0;
    for dp in 0..bd.n_dp() {
        cum += (0..bd.n_nodes()).map(|n| bd.get(dp, n)).sum::<f64>();
        if cum >= capacity - RATE_EPS {
            return Some(dp);
        }
    }
    Some(bd.n_dp() - 1)
}

/// Progressive filling on the congestion DP, proportional to flow counts.
pub fn allocate(bd: &BoundsMatrix, flows: &[u32], capacity: f64) -> AllocationResult {
    let n = bd.n_nodes();
    assert_eq!(flows.len(), n, "one flow count per node");
    let Some(dpc) = congestion_dp(bd, capacity) else {
        return AllocationResult::idle(bd.n_dp(), n);
    };
    let active = |i: usize| bd.is_active(i) && flows[i] > 0;
    let weight = |i: usize| f64::from(flows[i]);

    let mut th: Vec<f64> = (0..n)
        .map(|i| if active(i) { bd.prefix(i, dpc) } else { 0.0 })
        .collect();
    let cap: Vec<f64> = (0..n)
        .map(|i| if active(i) { bd.prefix(i, dpc + 1) } else { 0.0 })
        .collect();
    let mut eligible: Vec<bool> = (0..n).map(active).collect();

    let mut passes = 0;
    loop {
        let remaining = capacity - th.iter().sum::<f64>();
        if remaining <= RATE_EPS {
            break;
        }
        for i in 0..n {
            if eligible[i] && th[i] >= cap[i] - RATE_EPS {
                th[i] = cap[i];
                eligible[i] = false;
            }
        }
        let ratio = |i: usize| th[i] / weight(i);
        let Some(lowest) = (0..n)
            .filter(|&i| eligible[i])
            .map(ratio)
            .reduce(f64::min)
        else {
            break;
        };
        let marked: Vec<usize> = (0..n)
            .filter(|&i| eligible[i] && ratio(i) <= lowest + RATE_EPS)
            .collect();
        let second = (0..n)
            .filter(|&i| eligible[i] && ratio(i) > lowest + RATE_EPS)
            .map(ratio)
            .fold(f64::INFINITY, f64::min);
        let marked_weight: f64 = marked.iter().map(|&i| weight(i)).sum();

        let to_cap = marked
            .iter()
            .map(|&i| (cap[i] - th[i]) / weight(i))
            .fold(f64::INFINITY, f64::min);
        let to_capacity = remaining / marked_weight;
        let delta = to_cap.min(second - lowest).min(to_capacity);

        for &i in &marked {
            th[i] = (th[i] + weight(i) * delta).min(cap[i]);
        }
        passes += 1;
        debug_assert!(passes <= 2 * n, "allocation did not converge in {passes} passes");
        if delta == to_capacity {
            break;
        }
    }

    let per_dp = split_per_dp(&th, bd, Some(dpc));
    AllocationResult {
        throughput: th,
        per_dp,
        congestion_dp: Some(dpc),
    }
}

/// Splits node throughputs over precedences greedily from the best
/// protected one, never above the congestion DP.
pub fn split_per_dp(th: &[f64], bd: &BoundsMatrix, dp_c: Option<usize>) -> Matrix {
    let mut out = Matrix::zeros(bd.n_dp(), bd.n_nodes());
    let Some(dpc) = dp_c else {
        return out;
    };
    for (node, &t) in th.iter().enumerate() {
        let mut rest = t;
        for dp in 0..=dpc {
            if rest <= 0.0 {
                break;
            }
            let take = if dp == dpc { rest } else { bd.get(dp, node).min(rest) };
            out[(dp, node)] = take;
            rest -= take;
        }
    }
    out
}
