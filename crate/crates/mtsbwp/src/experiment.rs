//! Experiment grids: setups x parameters x seeds, each run under every
//! policy on the same arrivals.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use mtsbwp_core::fluid::{run, FluidConfig, Scenario, SimTrace, CONSERVATION_TOL};
use mtsbwp_core::profile::ProfileConfig;
use mtsbwp_core::stats::{flow_samples, node_samples, BandMode, WeightBasis, WeightedSamples};
use mtsbwp_core::traffic::{build_setup, generate_all, LoadClass, Setup, SizeDistribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::formats::{
    read_csv, write_arrivals_csv, write_csv, write_flows_csv, write_trace_csv, ProfileSource,
    RequirementsFile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Mts,
    Trtcm,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Mts => "mts",
            Policy::Trtcm => "trtcm",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandModeFile {
    #[default]
    Percentile,
    DecileMean,
}

impl From<BandModeFile> for BandMode {
    fn from(m: BandModeFile) -> Self {
        match m {
            BandModeFile::Percentile => BandMode::Percentile,
            BandModeFile::DecileMean => BandMode::DecileMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupSelection {
    pub setup: String,
    /// Defaults to the setup's full parameter list.
    #[serde(default)]
    pub params: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeEntry {
    pub size_gbit: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Profile of the `mts` policy.
    pub profile: ProfileSource,
    /// Profile of the `trtcm` policy.
    #[serde(default = "default_baseline")]
    pub baseline: ProfileSource,
    #[serde(default = "default_capacity")]
    pub capacity: f64,
    #[serde(default = "default_policies")]
    pub policies: Vec<Policy>,
    /// Empty runs every setup with its full parameter list.
    #[serde(default)]
    pub setups: Vec<SetupSelection>,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<SizeEntry>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_horizon")]
    pub horizon_s: f64,
    #[serde(default = "default_warmup")]
    pub warmup_s: f64,
    #[serde(default = "default_f_max")]
    pub f_max: Option<u32>,
    #[serde(default)]
    pub band: BandModeFile,
    /// Also write per-cell traces, completed flows and arrivals.
    #[serde(default)]
    pub write_traces: bool,
}

fn default_baseline() -> ProfileSource {
    ProfileSource::Trtcm { cir: 2.0, eir: 8.0 }
}
fn default_capacity() -> f64 {
    10.0
}
fn default_policies() -> Vec<Policy> {
    vec![Policy::Mts, Policy::Trtcm]
}
fn default_sizes() -> Vec<SizeEntry> {
    vec![
        SizeEntry { size_gbit: 0.8, probability: 0.5 },
        SizeEntry { size_gbit: 8.0, probability: 0.5 },
    ]
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_horizon() -> f64 {
    600.0
}
fn default_warmup() -> f64 {
    300.0
}
fn default_f_max() -> Option<u32> {
    Some(20)
}

impl ExperimentConfig {
    /// The reference 5-node, 10 Gbps requirements against the 2/8 Gbps trTCM
    /// baseline.
    pub fn reference() -> Self {
        Self {
            profile: ProfileSource::Requirements(RequirementsFile {
                capacity: 10.0,
                nodes: 5,
                guaranteed: vec![2.0, 2.0, 2.0, 0.75],
                download: vec![6.0, 4.0, 3.0],
                file_sizes_gbyte: vec![0.1, 1.0, 11.25],
                longest_timescale_s: Some(30.0),
                free_rate_fill: Default::default(),
            }),
            baseline: default_baseline(),
            capacity: default_capacity(),
            policies: default_policies(),
            setups: Vec::new(),
            sizes: default_sizes(),
            seeds: default_seeds(),
            horizon_s: default_horizon(),
            warmup_s: default_warmup(),
            f_max: default_f_max(),
            band: BandModeFile::default(),
            write_traces: false,
        }
    }

    pub fn size_distribution(&self) -> Result<SizeDistribution> {
        Ok(SizeDistribution::new(
            self.sizes.iter().map(|s| (s.size_gbit, s.probability)).collect(),
        )?)
    }

    /// The (setup, parameter) grid in config order.
    pub fn grid(&self) -> Result<Vec<(Setup, f64)>> {
        let selections: Vec<(Setup, Vec<f64>)> = if self.setups.is_empty() {
            Setup::ALL.iter().map(|s| (*s, s.parameters().to_vec())).collect()
        } else {
            self.setups
                .iter()
                .map(|sel| {
                    let setup: Setup = sel.setup.parse()?;
                    let params = sel.params.clone().unwrap_or_else(|| setup.parameters().to_vec());
                    Ok((setup, params))
                })
                .collect::<Result<_>>()?
        };
        let mut grid = Vec::new();
        for (setup, params) in selections {
            for p in params {
                setup.spec(p)?;
                grid.push((setup, p));
            }
        }
        Ok(grid)
    }

    pub fn check(&self) -> Result<()> {
        ensure!(!self.seeds.is_empty(), "the seed list is empty");
        ensure!(!self.policies.is_empty(), "no policies selected");
        ensure!(
            self.horizon_s > self.warmup_s && self.warmup_s >= 0.0,
            "horizon {} s must exceed the warm-up {} s",
            self.horizon_s,
            self.warmup_s
        );
        self.size_distribution()?;
        self.grid()?;
        Ok(())
    }

    fn profile_for(&self, policy: Policy) -> &ProfileSource {
        match policy {
            Policy::Mts => &self.profile,
            Policy::Trtcm => &self.baseline,
        }
    }
}

/// Statistics name for node bandwidth.
pub const NODE_METRIC: &str = "node_bw";

/// Statistics name for the flow bandwidth of one size class.
pub fn flow_metric(size_gbit: f64) -> String {
    format!("flow_bw_{size_gbit}gbit")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setup: String,
    pub param: String,
    pub policy: String,
    pub node_class: String,
    pub metric: String,
    pub mean: Option<f64>,
    pub p10: Option<f64>,
    pub p90: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CellStatRow {
    node: usize,
    node_class: &'static str,
    metric: String,
    mean: Option<f64>,
    p10: Option<f64>,
    p90: Option<f64>,
    samples: usize,
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub policy: Policy,
    /// Samples keyed by (node class, metric).
    pub pools: BTreeMap<(&'static str, String), WeightedSamples>,
    /// Largest |sum of throughputs - capacity| over intervals with an
    /// active node.
    pub max_conservation_error: f64,
    pub active_intervals: usize,
    pub events: usize,
}

#[derive(Debug, Clone)]
pub struct CellRun {
    pub setup: Setup,
    pub param: f64,
    pub seed: u64,
    pub policies: Vec<PolicyRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub setup: String,
    pub param: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summary: Vec<SummaryRow>,
    pub cells: Vec<CellRun>,
    pub failures: Vec<CellFailure>,
}

impl ExperimentReport {
    pub fn find(&self, setup: Setup, param: f64, policy: Policy, class: LoadClass, metric: &str) -> Option<&SummaryRow> {
        let param = param.to_string();
        self.summary.iter().find(|r| {
            r.setup == setup.name()
                && r.param == param
                && r.policy == policy.as_str()
                && r.node_class == class.as_str()
                && r.metric == metric
        })
    }
}

/// Deviation from work conservation over the trace.
pub fn conservation_error(trace: &SimTrace, capacity: f64) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (rec, end) in trace.intervals() {
        if end > rec.time && rec.flow_counts.iter().any(|&f| f > 0) {
            worst = worst.max((rec.throughput.iter().sum::<f64>() - capacity).abs());
            count += 1;
        }
    }
    (worst, count)
}

fn cell_name(setup: Setup, param: f64, policy: Option<Policy>, seed: u64) -> String {
    match policy {
        Some(p) => format!("{}_{}_{}_s{}", setup.name(), param, p, seed),
        None => format!("{}_{}_s{}", setup.name(), param, seed),
    }
}

fn band_row(s: &WeightedSamples, basis: WeightBasis, mode: BandMode) -> (Option<f64>, Option<f64>, Option<f64>) {
    match s.band(basis, mode) {
        Some(b) => (Some(b.mean), Some(b.worst), Some(b.best)),
        None => (None, None, None),
    }
}

fn basis_of(metric: &str) -> WeightBasis {
    if metric == NODE_METRIC {
        WeightBasis::Time
    } else {
        WeightBasis::FlowCount
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    profiles: &[(Policy, ProfileConfig)],
    setup: Setup,
    param: f64,
    seed: u64,
    out: Option<&Path>,
) -> Result<CellRun> {
    let sizes = cfg.size_distribution()?;
    let spec = setup.spec(param)?;
    let traffic = build_setup(&spec, cfg.capacity, &sizes, seed)?;
    let arrivals = generate_all(&traffic, cfg.horizon_s);
    let nodes = traffic.len();
    let mode = BandMode::from(cfg.band);
    if let (Some(dir), true) = (out, cfg.write_traces) {
        write_arrivals_csv(
            &dir.join(format!("{}_arrivals.csv", cell_name(setup, param, None, seed))),
            &arrivals,
        )?;
    }

    let mut policies = Vec::new();
    for (policy, profile) in profiles {
        let config = FluidConfig {
            profile: profile.clone(),
            capacity: cfg.capacity,
            nodes,
            max_flows: cfg.f_max,
        };
        let scenario = Scenario {
            arrivals: arrivals.clone(),
            ..Default::default()
        };
        let trace = run(config, scenario, cfg.horizon_s)
            .with_context(|| format!("policy {policy}"))?;

        let mut per_node: Vec<CellStatRow> = Vec::new();
        let mut pools: BTreeMap<(&'static str, String), WeightedSamples> = BTreeMap::new();
        for (n, t) in traffic.iter().enumerate() {
            let mut metrics = vec![(NODE_METRIC.to_string(), node_samples(&trace, n, cfg.warmup_s))];
            for &(size, _) in sizes.entries() {
                metrics.push((flow_metric(size), flow_samples(&trace, size, &[n], cfg.warmup_s)));
            }
            for (metric, s) in metrics {
                let (mean, p10, p90) = band_row(&s, basis_of(&metric), mode);
                per_node.push(CellStatRow {
                    node: n + 1,
                    node_class: t.class.as_str(),
                    metric: metric.clone(),
                    mean,
                    p10,
                    p90,
                    samples: s.len(),
                });
                pools.entry((t.class.as_str(), metric)).or_default().extend(&s);
            }
        }
        if let Some(dir) = out {
            let name = cell_name(setup, param, Some(*policy), seed);
            write_csv(&dir.join(format!("{name}.csv")), &per_node)?;
            if cfg.write_traces {
                write_trace_csv(&dir.join(format!("{name}_trace.csv")), &trace)?;
                write_flows_csv(&dir.join(format!("{name}_flows.csv")), &trace)?;
            }
        }
        let (err, active) = conservation_error(&trace, cfg.capacity);
        policies.push(PolicyRun {
            policy: *policy,
            pools,
            max_conservation_error: err,
            active_intervals: active,
            events: trace.records.len(),
        });
    }
    Ok(CellRun { setup, param, seed, policies })
}

fn class_order(c: &str) -> u8 {
    match c {
        "low" => 0,
        _ => 1,
    }
}

fn summarize(cfg: &ExperimentConfig, grid: &[(Setup, f64)], cells: &[CellRun]) -> Result<Vec<SummaryRow>> {
    let mode = BandMode::from(cfg.band);
    let sizes = cfg.size_distribution()?;
    let mut metrics = vec![NODE_METRIC.to_string()];
    metrics.extend(sizes.entries().iter().map(|&(s, _)| flow_metric(s)));
    let mut rows = Vec::new();
    for &(setup, param) in grid {
        for &policy in &cfg.policies {
            let runs: Vec<&PolicyRun> = cells
                .iter()
                .filter(|c| c.setup == setup && c.param == param)
                .flat_map(|c| c.policies.iter().filter(|p| p.policy == policy))
                .collect();
            if runs.is_empty() {
                continue;
            }
            let mut classes: Vec<&'static str> = runs
                .iter()
                .flat_map(|r| r.pools.keys().map(|k| k.0))
                .collect();
            classes.sort_by_key(|c| class_order(c));
            classes.dedup();
            for class in classes {
                for metric in &metrics {
                    let mut pooled = WeightedSamples::new();
                    for r in &runs {
                        if let Some(s) = r.pools.get(&(class, metric.clone())) {
                            pooled.extend(s);
                        }
                    }
                    let (mean, p10, p90) = band_row(&pooled, basis_of(metric), mode);
                    rows.push(SummaryRow {
                        setup: setup.name().into(),
                        param: param.to_string(),
                        policy: policy.as_str().into(),
                        node_class: class.into(),
                        metric: metric.clone(),
                        mean,
                        p10,
                        p90,
                        samples: pooled.len(),
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Runs the grid. Cells run in parallel; when `out` is given, each cell
/// writes its own files and the summaries are written once all are done.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    cfg.check()?;
    let grid = cfg.grid()?;
    let profiles: Vec<(Policy, ProfileConfig)> = cfg
        .policies
        .iter()
        .map(|&p| {
            let profile = cfg
                .profile_for(p)
                .resolve()
                .with_context(|| format!("profile of policy {p}"))?;
            Ok((p, profile))
        })
        .collect::<Result<_>>()?;
    let cell_dir = match out {
        Some(dir) => {
            let cells = dir.join("cells");
            fs::create_dir_all(&cells).with_context(|| format!("creating {}", cells.display()))?;
            Some(cells)
        }
        None => None,
    };

    let jobs: Vec<(Setup, f64, u64)> = grid
        .iter()
        .flat_map(|&(s, p)| cfg.seeds.iter().map(move |&seed| (s, p, seed)))
        .collect();
    let results: Vec<Result<CellRun>> = jobs
        .par_iter()
        .map(|&(s, p, seed)| run_cell(cfg, &profiles, s, p, seed, cell_dir.as_deref()))
        .collect();

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for (&(s, p, seed), r) in jobs.iter().zip(results) {
        match r {
            Ok(c) => cells.push(c),
            Err(e) => failures.push(CellFailure {
                setup: s.name().into(),
                param: p.to_string(),
                seed,
                error: format!("{e:#}"),
            }),
        }
    }
    let summary = summarize(cfg, &grid, &cells)?;

    if let Some(dir) = out {
        write_csv(&dir.join("summary.csv"), &summary)?;
        for &policy in &cfg.policies {
            write_csv(
                &dir.join(format!("summary_{policy}.csv")),
                summary.iter().filter(|r| r.policy == policy.as_str()),
            )?;
        }
        if !failures.is_empty() {
            write_csv(&dir.join("failures.csv"), &failures)?;
        }
    }
    Ok(ExperimentReport { summary, cells, failures })
}

/// True when every simulated interval with an active node used the full
/// capacity.
pub fn work_conserving(report: &ExperimentReport) -> bool {
    report
        .cells
        .iter()
        .flat_map(|c| &c.policies)
        .all(|p| p.max_conservation_error <= CONSERVATION_TOL)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub setup: String,
    pub param: String,
    pub node_class: String,
    pub metric: String,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    pub delta_mean: Option<f64>,
    pub delta_p10: Option<f64>,
    pub delta_p90: Option<f64>,
}

type Key = (String, String, String, String);

fn keyed(rows: Vec<SummaryRow>, label: &str) -> Result<(Vec<Key>, BTreeMap<Key, SummaryRow>)> {
    let mut order = Vec::new();
    let mut map = BTreeMap::new();
    for r in rows {
        let key = (r.setup.clone(), r.param.clone(), r.node_class.clone(), r.metric.clone());
        if map.contains_key(&key) {
            bail!(
                "{label} has several rows for {}/{}/{}/{}; compare single-policy summaries",
                key.0,
                key.1,
                key.2,
                key.3
            );
        }
        order.push(key.clone());
        map.insert(key, r);
    }
    Ok((order, map))
}

/// Joins two summaries on (setup, param, node class, metric) and returns
/// the A - B deltas in A's row order.
pub fn compare(a: Vec<SummaryRow>, b: Vec<SummaryRow>) -> Result<Vec<DeltaRow>> {
    let (order, a) = keyed(a, "A")?;
    let (_, b) = keyed(b, "B")?;
    let name = |k: &Key| format!("{}/{}/{}/{}", k.0, k.1, k.2, k.3);
    let mut missing: Vec<String> = a
        .keys()
        .filter(|k| !b.contains_key(*k))
        .map(|k| format!("{} missing in B", name(k)))
        .collect();
    missing.extend(
        b.keys()
            .filter(|k| !a.contains_key(*k))
            .map(|k| format!("{} missing in A", name(k))),
    );
    if !missing.is_empty() {
        bail!("summaries cover different cells:\n  {}", missing.join("\n  "));
    }
    let diff = |x: Option<f64>, y: Option<f64>| Some(x? - y?);
    Ok(order
        .iter()
        .map(|k| {
            let (x, y) = (&a[k], &b[k]);
            DeltaRow {
                setup: k.0.clone(),
                param: k.1.clone(),
                node_class: k.2.clone(),
                metric: k.3.clone(),
                mean_a: x.mean,
                mean_b: y.mean,
                delta_mean: diff(x.mean, y.mean),
                delta_p10: diff(x.p10, y.p10),
                delta_p90: diff(x.p90, y.p90),
            }
        })
        .collect())
}

pub fn compare_files(a: &Path, b: &Path, out: &Path) -> Result<Vec<DeltaRow>> {
    let deltas = compare(read_csv(a)?, read_csv(b)?)?;
    write_csv(out, &deltas)?;
    Ok(deltas)
}
