//! Compound Poisson flow arrivals and the low/high load setups.

use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Exp};
use std_alloc::format;
use std_alloc::string::ToString;
use std_alloc::vec::Vec;

use crate::{Error, Result};

/// One flow arriving at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub node: usize,
    pub time: f64,
    /// Gbit.
    pub size: f64,
}

/// Discrete file size distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeDistribution {
    entries: Vec<(f64, f64)>,
}

impl SizeDistribution {
    /// `(size in Gbit, probability)` pairs; probabilities must sum to 1.
    pub fn new(entries: Vec<(f64, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidTraffic("empty size distribution".into()));
        }
        if entries.iter().any(|&(s, p)| !(s > 0.0) || !(p >= 0.0)) {
            return Err(Error::InvalidTraffic(
                "sizes must be positive and probabilities non-negative".into(),
            ));
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidTraffic(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(Self { entries })
    }

    /// Equally likely sizes.
    pub fn uniform(sizes: &[f64]) -> Result<Self> {
        let p = 1.0 / sizes.len() as f64;
        Self::new(sizes.iter().map(|&s| (s, p)).collect())
    }

    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }

    pub fn mean(&self) -> f64 {
        self.entries.iter().map(|(s, p)| s * p).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSpec {
    /// Flow arrival rate (1/s).
    pub rate: f64,
    pub sizes: SizeDistribution,
    /// Master seed; each node draws from its own stream of it.
    pub seed: u64,
}

/// Arrival rate giving the nominal load `load` at a node with nominal
/// speed `nominal_speed`.
pub fn nominal_load_to_rate(load: f64, nominal_speed: f64, mean_size: f64) -> f64 {
    load * nominal_speed / mean_size
}

/// One row of the setup table: two groups of nodes with a common nominal
/// load inside each group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetupSpec {
    pub n_low: usize,
    pub n_high: usize,
    pub low_load: f64,
    pub system_load: f64,
}

impl SetupSpec {
    pub fn nodes(&self) -> usize {
        self.n_low + self.n_high
    }
}

/// Nominal load of the high-load nodes such that the mean over all nodes is
/// the system load.
pub fn high_load_from_system(setup: &SetupSpec) -> Result<f64> {
    if setup.n_high == 0 {
        return Err(Error::InvalidTraffic("setup has no high-load node".into()));
    }
    let high = (setup.nodes() as f64 * setup.system_load - setup.n_low as f64 * setup.low_load)
        / setup.n_high as f64;
    if !(high > 0.0) {
        return Err(Error::InvalidTraffic(format!(
            "high load {high} is not positive"
        )));
    }
    Ok(high)
}

/// Draws the arrivals of one node in `[0, horizon)`.
///
/// Inter-arrival times are exponential and sizes independent draws from the
/// distribution. The node's stream is selected from the master seed by node
/// index, so adding nodes never changes the arrivals of existing ones.
pub fn generate(spec: &TrafficSpec, node: usize, horizon: f64) -> Vec<Arrival> {
    let mut out = Vec::new();
    if !(spec.rate > 0.0) {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(node as u64);
    let gap = Exp::new(spec.rate).expect("positive rate");
    let weights = spec.sizes.entries.iter().map(|e| e.1);
    let pick = WeightedIndex::new(weights).expect("validated distribution");
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t >= horizon {
            break;
        }
        let size = spec.sizes.entries[pick.sample(&mut rng)].0;
        out.push(Arrival { node, time: t, size });
    }
    out
}

/// Merges per-node arrival lists into one list sorted by time, then node.
pub fn merge_arrivals(lists: impl IntoIterator<Item = Vec<Arrival>>) -> Vec<Arrival> {
    let mut all: Vec<Arrival> = lists.into_iter().flatten().collect();
    all.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.node.cmp(&b.node)));
    all
}

/// The four setups of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Setup {
    /// 1 low-load node, 4 high-load nodes, low load 0.5, system load varies.
    A,
    /// 2 low, 3 high, low load 0.5, system load varies.
    B,
    /// 1 low, 4 high, system load 1.1, low load varies.
    C,
    /// 2 low, 3 high, system load 1.1, low load varies.
    D,
}

const SYSTEM_LOADS: [f64; 10] = [0.6, 0.7, 0.8, 0.9, 0.95, 1.0, 1.1, 1.2, 1.5, 2.0];
const LOW_LOADS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

impl Setup {
    pub const ALL: [Setup; 4] = [Setup::A, Setup::B, Setup::C, Setup::D];

    pub fn name(self) -> &'static str {
        match self {
            Setup::A => "A",
            Setup::B => "B",
            Setup::C => "C",
            Setup::D => "D",
        }
    }

    /// The swept parameter values: system loads for A/B, low loads for C/D.
    pub fn parameters(self) -> &'static [f64] {
        match self {
            Setup::A | Setup::B => &SYSTEM_LOADS,
            Setup::C | Setup::D => &LOW_LOADS,
        }
    }

    /// Whether the swept parameter is the system load (A/B) or the low load (C/D).
    pub fn sweeps_system_load(self) -> bool {
        matches!(self, Setup::A | Setup::B)
    }

    pub fn spec(self, param: f64) -> Result<SetupSpec> {
        if !self.parameters().iter().any(|&p| (p - param).abs() < 1e-12) {
            return Err(Error::InvalidTraffic(format!(
                "parameter {param} is not in the list of setup {}",
                self.name()
            )));
        }
        let (n_low, n_high) = match self {
            Setup::A | Setup::C => (1, 4),
            Setup::B | Setup::D => (2, 3),
        };
        let (low_load, system_load) = if self.sweeps_system_load() {
            (0.5, param)
        } else {
            (param, 1.1)
        };
        Ok(SetupSpec {
            n_low,
            n_high,
            low_load,
            system_load,
        })
    }
}

impl FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Setup::A),
            "B" | "b" => Ok(Setup::B),
            "C" | "c" => Ok(Setup::C),
            "D" | "d" => Ok(Setup::D),
            other => Err(Error::UnknownSetup(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoadClass {
    Low,
    High,
}

impl LoadClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LoadClass::Low => "low",
            LoadClass::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTraffic {
    pub class: LoadClass,
    pub load: f64,
    pub spec: TrafficSpec,
}

/// Per-node traffic for a setup. Low-load nodes come first.
pub fn build_setup(
    setup: &SetupSpec,
    capacity: f64,
    sizes: &SizeDistribution,
    seed: u64,
) -> Result<Vec<NodeTraffic>> {
    let high = high_load_from_system(setup)?;
    let sn = capacity / setup.nodes() as f64;
    let node = |class, load| NodeTraffic {
        class,
        load,
        spec: TrafficSpec {
            rate: nominal_load_to_rate(load, sn, sizes.mean()),
            sizes: sizes.clone(),
            seed,
        },
    };
    Ok(core::iter::repeat_n(node(LoadClass::Low, setup.low_load), setup.n_low)
        .chain(core::iter::repeat_n(node(LoadClass::High, high), setup.n_high))
        .collect())
}

/// Draws and merges the arrivals of every node.
pub fn generate_all(nodes: &[NodeTraffic], horizon: f64) -> Vec<Arrival> {
    merge_arrivals(
        nodes
            .iter()
            .enumerate()
            .map(|(n, t)| generate(&t.spec, n, horizon)),
    )
}
