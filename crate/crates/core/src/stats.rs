//! Node and flow bandwidth statistics over simulation traces.
//!
//! Node bandwidth is sampled over the intervals in which the node has at
//! least one flow, weighted by interval length. Flow bandwidth is the size
//! of a completed flow divided by its download time, one sample per flow.

use std_alloc::vec::Vec;

use crate::fluid::SimTrace;

/// How the worst and best bands are summarised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandMode {
    /// The weighted 10th and 90th percentiles.
    #[default]
    Percentile,
    /// Weighted means of the lowest and highest 10% of the weight.
    DecileMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightBasis {
    Time,
    FlowCount,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatBand {
    pub mean: f64,
    pub worst: f64,
    pub best: f64,
    pub basis: WeightBasis,
    pub samples: usize,
    pub total_weight: f64,
}

/// A bag of `(value, weight)` samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedSamples {
    samples: Vec<(f64, f64)>,
}

impl WeightedSamples {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero and negative weights are ignored.
    pub fn push(&mut self, value: f64, weight: f64) {
        if weight > 0.0 {
            self.samples.push((value, weight));
        }
    }

    pub fn extend(&mut self, other: &WeightedSamples) {
        self.samples.extend_from_slice(&other.samples);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.1).sum()
    }

    pub fn mean(&self) -> Option<f64> {
        let w = self.total_weight();
        (w > 0.0).then(|| self.samples.iter().map(|(v, w)| v * w).sum::<f64>() / w)
    }

    fn sorted(&self) -> Vec<(f64, f64)> {
        let mut s = self.samples.clone();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        s
    }

    /// Smallest value whose cumulative weight share reaches `q`.
    pub fn percentile(&self, q: f64) -> Option<f64> {
        let total = self.total_weight();
        if !(total > 0.0) {
            return None;
        }
        let target = q.clamp(0.0, 1.0) * total;
        let sorted = self.sorted();
        let mut cum = 0.0;
        for &(v, w) in &sorted {
            cum += w;
            if cum >= target * (1.0 - 1e-12) {
                return Some(v);
            }
        }
        sorted.last().map(|s| s.0)
    }

    /// Weighted mean of the lowest (`upper == false`) or highest `share` of
    /// the total weight.
    pub fn tail_mean(&self, share: f64, upper: bool) -> Option<f64> {
        let total = self.total_weight();
        if !(total > 0.0 && share > 0.0) {
            return None;
        }
        let mut sorted = self.sorted();
        if upper {
            sorted.reverse();
        }
        let budget = share.min(1.0) * total;
        let (mut taken, mut acc) = (0.0, 0.0);
        for (v, w) in sorted {
            let take = w.min(budget - taken);
            if take <= 0.0 {
                break;
            }
            taken += take;
            acc += v * take;
        }
        Some(acc / taken)
    }

    pub fn band(&self, basis: WeightBasis, mode: BandMode) -> Option<StatBand> {
        let mean = self.mean()?;
        let (worst, best) = match mode {
            BandMode::Percentile => (self.percentile(0.1)?, self.percentile(0.9)?),
            BandMode::DecileMean => (self.tail_mean(0.1, false)?, self.tail_mean(0.1, true)?),
        };
        Some(StatBand {
            mean,
            worst,
            best,
            basis,
            samples: self.len(),
            total_weight: self.total_weight(),
        })
    }
}

/// Throughput samples of `node` over its active time after `warmup`.
pub fn node_samples(trace: &SimTrace, node: usize, warmup: f64) -> WeightedSamples {
    let mut out = WeightedSamples::new();
    for (rec, end) in trace.intervals() {
        if rec.flow_counts[node] == 0 {
            continue;
        }
        let begin = rec.time.max(warmup);
        if end > begin {
            out.push(rec.throughput[node], end - begin);
        }
    }
    out
}

/// Time-weighted node bandwidth over active periods; `None` if the node was
/// never active after the warm-up.
pub fn node_bandwidth(trace: &SimTrace, node: usize, warmup: f64, mode: BandMode) -> Option<StatBand> {
    node_samples(trace, node, warmup).band(WeightBasis::Time, mode)
}

/// Bandwidth of the completed flows of size `size` at `nodes` that arrived
/// after `warmup`, one unit weight each.
pub fn flow_samples(trace: &SimTrace, size: f64, nodes: &[usize], warmup: f64) -> WeightedSamples {
    let mut out = WeightedSamples::new();
    for f in &trace.completed {
        if f.arrival >= warmup
            && nodes.contains(&f.node)
            && (f.size - size).abs() <= 1e-9 * size.max(1.0)
        {
            out.push(f.bandwidth(), 1.0);
        }
    }
    out
}

pub fn flow_bandwidth(
    trace: &SimTrace,
    size: f64,
    nodes: &[usize],
    warmup: f64,
    mode: BandMode,
) -> Option<StatBand> {
    flow_samples(trace, size, nodes, warmup).band(WeightBasis::FlowCount, mode)
}
